use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ldp_poison::attack::{plan_attack, poison_graph, AttackConfig, AttackPlan, BoundMode, Strategy};
use ldp_poison::experiment::{
    benchmark_sbm, export_figures_data, run_defense_suite, run_experiment, DefenseOutcome,
    ExperimentConfig, StoredPlan, THEORY_CURVE_FILE,
};
use ldp_poison::graph::{
    generate_featured_sbm, load_graph_dir, normalize_features, read_features, split_nodes,
    write_graph_dir, Graph, SbmParams, SplitMasks,
};
use ldp_poison::ldp::{
    meta_path, perturb_features, write_perturbed, MechanismConfig, MechanismKind, PerturbationMeta,
};
use ldp_poison::protocol::{
    accuracy_of, calibrate, link_prediction_eval, predict, train_node_classifier, Arch,
    CalibrationConfig, EvalRecord, GnnModel, Scope, Task, TrainConfig, TrainReport,
};
use ldp_poison::theory::{
    crafted_variance, expected_delta_psi, security_privacy_curve, curve_to_csv, variance_bias,
    TheoryInputs, DEFAULT_LAMBDA,
};

#[derive(Parser)]
#[command(name = "ldp-poison", version, about = "Fake-node poisoning of LDP-protected graph learning")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a featured planted-partition graph.
    Gen(GenArgs),
    /// Perturb a dataset's features with an LDP mechanism.
    Perturb(PerturbArgs),
    /// Plan a fake-node attack and write the poisoned graph.
    Attack(AttackArgs),
    /// Train a GNN on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained model.
    Eval(EvalArgs),
    /// Replay a stored attack plan through the homophily and detection analyses.
    Defend(ConfigArgs),
    /// Closed-form error terms and the Monte Carlo security-privacy curve.
    Theory(TheoryArgs),
    /// Run the configured grid end to end.
    Experiment(ConfigArgs),
    /// Write the CSV tables consumed by the plotting scripts.
    ExportFiguresData(ExportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    p_in: Option<f64>,
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DataArgs {
    /// Directory with edges.txt, features.csv and labels.csv.
    #[arg(long)]
    data: PathBuf,
    /// Keep features as loaded instead of rescaling columns into [-1, 1].
    #[arg(long)]
    no_normalize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Graph> {
        let g = load_graph_dir(&self.data)
            .with_context(|| format!("loading {}", self.data.display()))?;
        Ok(if self.no_normalize {
            g
        } else {
            normalize_features(&g, -1.0, 1.0)
        })
    }
}

#[derive(Args)]
struct MechArgs {
    #[arg(long, default_value = "PM")]
    mechanism: MechanismKind,
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Sampled coordinates per node (default rule when omitted).
    #[arg(long)]
    m: Option<usize>,
    /// Report raw SW values without d/m scaling.
    #[arg(long)]
    sw_raw: bool,
}

impl MechArgs {
    fn config(&self, g: &Graph) -> MechanismConfig {
        let mut c = MechanismConfig::new(self.mechanism, self.epsilon, g.dims()).with_domain(g.alpha, g.beta);
        c.m = self.m;
        c.sw_raw = self.sw_raw;
        c
    }
}

#[derive(Args)]
struct PerturbArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    mech: MechArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output feature CSV; a `.meta.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    mech: MechArgs,
    /// Perturbed reports to attach to genuine nodes; perturbed here when omitted.
    #[arg(long)]
    reports: Option<PathBuf>,
    #[arg(long, default_value_t = 0.09)]
    eta1: f64,
    #[arg(long, default_value_t = 0.8)]
    eta2: f64,
    #[arg(long, default_value = "identical")]
    strategy: Strategy,
    #[arg(long, default_value = "algorithm1")]
    bound_mode: BoundMode,
    #[arg(long)]
    sw_full_range: bool,
    #[arg(long)]
    fakes_unlabeled: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the poisoned graph and attack_plan.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "GCN")]
    model: Arch,
    /// Calibration steps.
    #[arg(short = 'K', long = "k", default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Feature CSV to train on instead of the dataset's own features.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// attack_plan.json of a poisoned dataset: splits cover genuine nodes, fakes join training.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "node_classification")]
    task: Task,
    #[arg(long, default_value_t = 0.1)]
    holdout_frac: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to store the trained model (node classification only).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Model file written by `train`.
    #[arg(long)]
    model_file: PathBuf,
    /// attack_plan.json; adds a targeted record over its targets.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set seeds=0..3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides the `output` key).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TheoryArgs {
    #[command(subcommand)]
    action: TheoryAction,
}

#[derive(Subcommand)]
enum TheoryAction {
    /// Evaluate the variance bias and the expected energy change.
    Formula(FormulaArgs),
    /// Monte Carlo energy change over a privacy-budget grid.
    Curve(CurveArgs),
}

#[derive(Args)]
struct FormulaArgs {
    #[arg(long)]
    sigma2: f64,
    /// Crafted-report variance; derived from B, m and d when omitted.
    #[arg(long)]
    sigma2_atk: Option<f64>,
    #[arg(long)]
    deg_target: f64,
    #[arg(long)]
    n_atk_neighbors: f64,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long)]
    q: f64,
    #[arg(long = "bound")]
    bound: f64,
    #[arg(short = 'K', long = "k")]
    k: usize,
    #[arg(long)]
    n_fake: usize,
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Args)]
struct CurveArgs {
    /// Dataset directory; the synthetic benchmark when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "PM")]
    mechanism: MechanismKind,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1.0")]
    epsilons: Vec<f64>,
    #[arg(short = 'K', long = "k", default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0.09)]
    eta1: f64,
    #[arg(long, default_value_t = 0.8)]
    eta2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Experiment output directory.
    #[arg(long)]
    results: PathBuf,
    /// Destination; defaults to `<results>/figures`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Model file written by `train`.
#[derive(Serialize, Deserialize)]
struct TrainedModel {
    model: GnnModel,
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
    split: SplitMasks,
    mechanism: Option<MechanismKind>,
    epsilon: Option<f64>,
    report: TrainReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(ldp_poison::Error::NotFound(path.to_path_buf()).into());
    }
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts either a bare plan or the experiment's stored-plan wrapper.
fn read_plan(path: &Path) -> Result<AttackPlan> {
    let value: serde_json::Value = read_json(path)?;
    if value.get("plan").is_some() {
        Ok(serde_json::from_value::<StoredPlan>(value)?.plan)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

/// Graph with the features it should be trained on, plus mechanism metadata.
fn training_view(data: &DataArgs, reports: Option<&Path>) -> Result<(Graph, Option<PerturbationMeta>)> {
    let g = data.load()?;
    let Some(path) = reports else {
        return Ok((g, None));
    };
    let x = read_features(path)?;
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        Some(read_json::<PerturbationMeta>(&meta_file)?)
    } else {
        None
    };
    Ok((g.with_features(x)?, meta))
}

fn masks_for(g: &Graph, plan: Option<&AttackPlan>, seed: u64) -> Result<SplitMasks> {
    match plan {
        Some(p) => {
            if g.num_nodes() != p.n_genuine + p.n_fake() {
                bail!(
                    "plan expects {} nodes, dataset has {}",
                    p.n_genuine + p.n_fake(),
                    g.num_nodes()
                );
            }
            Ok(split_nodes(p.n_genuine, (0.5, 0.25, 0.25), seed)?
                .with_extra_train(p.training_fakes().iter().copied()))
        }
        None => Ok(split_nodes(g.num_nodes(), (0.5, 0.25, 0.25), seed)?),
    }
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let d = benchmark_sbm();
    let p = SbmParams {
        nodes: a.nodes.unwrap_or(d.nodes),
        classes: a.classes.unwrap_or(d.classes),
        dims: a.dims.unwrap_or(d.dims),
        p_in: a.p_in.unwrap_or(d.p_in),
        p_out: a.p_out.unwrap_or(d.p_out),
        signal: a.signal.unwrap_or(d.signal),
    };
    let g = generate_featured_sbm(&p, a.seed)?;
    write_graph_dir(&g, &a.out)?;
    print_json(&g.stats())
}

fn cmd_perturb(a: PerturbArgs) -> Result<()> {
    let g = a.data.load()?;
    let p = perturb_features(&g, &a.mech.config(&g), a.seed)?;
    write_perturbed(&p, &a.out)?;
    print_json(&p.meta())
}

fn cmd_attack(a: AttackArgs) -> Result<()> {
    let g = a.data.load()?;
    let mech = a.mech.config(&g);
    let x = match &a.reports {
        Some(p) => read_features(p)?,
        None => perturb_features(&g, &mech, a.seed)?.matrix,
    };
    let cfg = AttackConfig {
        eta1: a.eta1,
        eta2: a.eta2,
        strategy: a.strategy,
        bound_mode: a.bound_mode,
        sw_full_range: a.sw_full_range,
        targets_from_test: false,
        fakes_unlabeled: a.fakes_unlabeled,
        seed: a.seed,
    };
    let plan = plan_attack(&g, &mech, &cfg, None)?;
    let poisoned = poison_graph(&g, &x, &plan)?;
    write_graph_dir(&poisoned, &a.out)?;
    write_json(&a.out.join("attack_plan.json"), &plan)?;
    print_json(&serde_json::json!({
        "targets": plan.targets.len(),
        "fakes": plan.n_fake(),
        "q": plan.q,
        "B": plan.bound,
        "inner_edges": plan.inner_edges.len(),
        "stats": poisoned.stats(),
    }))
}

fn train_config(m: &ModelArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        arch: m.model,
        hidden: m.hidden,
        lr: m.lr,
        weight_decay: m.weight_decay,
        dropout: m.dropout,
        max_epochs: m.epochs,
        seed,
        ..TrainConfig::default()
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (g, meta) = training_view(&a.data, a.reports.as_deref())?;
    let plan = a.plan.as_deref().map(read_plan).transpose()?;
    let tcfg = train_config(&a.model, a.seed);
    let emb = calibrate(&g.features, &g, CalibrationConfig::new(a.model.k)?)?;
    let (mechanism, epsilon) = (meta.as_ref().map(|m| m.kind), meta.as_ref().map(|m| m.epsilon));
    match a.task {
        Task::LinkPrediction => {
            let r = link_prediction_eval(&g, &emb, a.holdout_frac, &tcfg, a.seed)?;
            print_json(&EvalRecord {
                arch: a.model.model,
                mechanism,
                epsilon,
                k: a.model.k,
                task: Task::LinkPrediction,
                scope: Scope::Untargeted,
                seed: a.seed,
                accuracy: r.accuracy,
                epochs_run: r.epochs_run,
                best_val_loss: r.best_val_loss,
            })
        }
        Task::NodeClassification => {
            let masks = masks_for(&g, plan.as_ref(), a.seed)?;
            let (model, report) = train_node_classifier(&g, &emb, &masks, &tcfg)?;
            let pred = predict(&model, &g, &emb)?;
            let record = EvalRecord {
                arch: a.model.model,
                mechanism,
                epsilon,
                k: a.model.k,
                task: Task::NodeClassification,
                scope: Scope::Untargeted,
                seed: a.seed,
                accuracy: accuracy_of(&pred, &g.labels, &masks.test),
                epochs_run: report.epochs_run,
                best_val_loss: report.best_val_loss,
            };
            if let Some(out) = &a.out {
                write_json(
                    out,
                    &TrainedModel {
                        model,
                        k: a.model.k,
                        seed: a.seed,
                        split: masks,
                        mechanism,
                        epsilon,
                        report,
                    },
                )?;
            }
            print_json(&record)
        }
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (g, _) = training_view(&a.data, a.reports.as_deref())?;
    let tm: TrainedModel = read_json(&a.model_file)?;
    let emb = calibrate(&g.features, &g, CalibrationConfig::new(tm.k)?)?;
    let pred = predict(&tm.model, &g, &emb)?;
    let record = |scope, nodes: &[usize]| EvalRecord {
        arch: tm.model.arch,
        mechanism: tm.mechanism,
        epsilon: tm.epsilon,
        k: tm.k,
        task: Task::NodeClassification,
        scope,
        seed: tm.seed,
        accuracy: accuracy_of(&pred, &g.labels, nodes),
        epochs_run: tm.report.epochs_run,
        best_val_loss: tm.report.best_val_loss,
    };
    let mut records = vec![record(Scope::Untargeted, &tm.split.test)];
    if let Some(p) = &a.plan {
        let plan = read_plan(p)?;
        records.push(record(Scope::Targeted, &plan.targets));
    }
    print_json(&records)
}

fn cmd_defend(a: ConfigArgs) -> Result<()> {
    let cfg = a.resolve()?;
    match run_defense_suite(&cfg, &cfg.output)? {
        DefenseOutcome::Attacked { summary, .. } => print_json(&summary),
        DefenseOutcome::CleanOnly { notice } => {
            eprintln!("{notice}");
            Ok(())
        }
    }
}

fn cmd_theory(a: TheoryArgs) -> Result<()> {
    match a.action {
        TheoryAction::Formula(f) => {
            let sigma2_atk = match (f.sigma2_atk, f.d) {
                (Some(s), _) => s,
                (None, Some(d)) => crafted_variance(f.bound, f.m, d),
                (None, None) => bail!("give --sigma2-atk or --d to derive it"),
            };
            let inp = TheoryInputs {
                sigma2: f.sigma2,
                sigma2_atk,
                deg_target: f.deg_target,
                n_atk_neighbors: f.n_atk_neighbors,
                lambda: f.lambda,
                q: f.q,
                bound: f.bound,
                k: f.k,
                n_fake: f.n_fake,
            };
            print_json(&serde_json::json!({
                "inputs": inp,
                "variance_bias": variance_bias(&inp)?,
                "expected_delta_psi": expected_delta_psi(&inp)?,
            }))
        }
        TheoryAction::Curve(c) => {
            let g = match &c.data {
                Some(dir) => normalize_features(&load_graph_dir(dir)?, -1.0, 1.0),
                None => generate_featured_sbm(&benchmark_sbm(), c.seed)?,
            };
            let mech = MechanismConfig::new(c.mechanism, c.epsilons[0], g.dims()).with_domain(g.alpha, g.beta);
            let attack = AttackConfig {
                eta1: c.eta1,
                eta2: c.eta2,
                ..AttackConfig::default()
            };
            let points = security_privacy_curve(&g, &mech, &c.epsilons, &attack, c.lambda, c.k, c.trials, c.seed)?;
            let csv = curve_to_csv(&points);
            match &c.out {
                Some(p) => {
                    let p = if p.is_dir() { p.join(THEORY_CURVE_FILE) } else { p.clone() };
                    if let Some(dir) = p.parent() {
                        fs::create_dir_all(dir)?;
                    }
                    fs::write(&p, &csv)?;
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
    }
}

fn cmd_experiment(a: ConfigArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let out = run_experiment(&cfg)?;
    eprintln!(
        "{} rows, {} summary cells, {} skipped -> {}",
        out.rows.len(),
        out.summary.stats.len(),
        out.summary.skipped.len(),
        cfg.output.display()
    );
    if cfg.defenses {
        match run_defense_suite(&cfg, &cfg.output)? {
            DefenseOutcome::Attacked { summary, .. } => print_json(&summary)?,
            DefenseOutcome::CleanOnly { notice } => eprintln!("{notice}"),
        }
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| a.results.join("figures"));
    for p in export_figures_data(&a.results, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Defend(a) => cmd_defend(a),
        Command::Theory(a) => cmd_theory(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::ExportFiguresData(a) => cmd_export(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<ldp_poison::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
