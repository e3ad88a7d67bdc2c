//! Grid × seeds execution, result rows and per-cell summaries.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::AttackPlan;
use crate::error::{Error, Result};
use crate::graph::{generate_featured_sbm, load_graph_dir, normalize_features, split_nodes, Graph, SplitMasks};
use crate::ldp::{MechanismConfig, MechanismKind};
use crate::protocol::{Arch, Scope, Task};
use crate::rng::{stream, Stream};
use crate::stats::bootstrap_ci;

use super::config::ExperimentConfig;
use super::pipeline::{run_trial, TrialOutcome, TrialSpec};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PLAN_FILE: &str = "attack_plan.json";
pub const RESOLVED_FILE: &str = "config.resolved";
pub const PLANS_DIR: &str = "plans";

pub const RESULTS_HEADER: &str = "dataset,mechanism,epsilon,eta1,eta2,K,model,task,scope,phase,seed,accuracy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Clean,
    Attacked,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Clean => "clean",
            Phase::Attacked => "attacked",
        })
    }
}

/// One grid point. `mechanism = None` is the non-private reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mechanism: Option<MechanismKind>,
    pub epsilon: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub model: Arch,
}

impl Cell {
    pub fn mechanism_name(&self) -> String {
        self.mechanism.map_or_else(|| "none".to_string(), |m| m.to_string())
    }

    pub fn epsilon_field(&self) -> String {
        self.epsilon.map_or_else(String::new, |e| e.to_string())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mechanism={} epsilon={} eta1={} eta2={} K={} model={}",
            self.mechanism_name(),
            self.epsilon_field(),
            self.eta1,
            self.eta2,
            self.k,
            self.model
        )
    }
}

/// The grid in output order: models, mechanisms, ε, η1, η2, K, then the
/// non-private reference cells (one per model and K).
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &model in &cfg.models {
        for &mech in &cfg.mechanisms {
            for &eps in &cfg.epsilons {
                for &eta1 in &cfg.eta1 {
                    for &eta2 in &cfg.eta2 {
                        for &k in &cfg.k {
                            cells.push(Cell {
                                mechanism: Some(mech),
                                epsilon: Some(eps),
                                eta1,
                                eta2,
                                k,
                                model,
                            });
                        }
                    }
                }
            }
        }
        if cfg.non_private {
            for &k in &cfg.k {
                cells.push(Cell {
                    mechanism: None,
                    epsilon: None,
                    eta1: cfg.eta1[0],
                    eta2: cfg.eta2[0],
                    k,
                    model,
                });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub mechanism: String,
    pub epsilon: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub model: Arch,
    pub task: Task,
    pub scope: Scope,
    pub phase: Phase,
    pub seed: u64,
    pub accuracy: f64,
}

impl ResultRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            self.mechanism,
            self.epsilon.map_or_else(String::new, |e| e.to_string()),
            self.eta1,
            self.eta2,
            self.k,
            self.model,
            self.task,
            self.scope,
            self.phase,
            self.seed,
            self.accuracy
        )
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

/// Parses a results CSV written by [`rows_to_csv`].
pub fn parse_results_csv(text: &str, origin: &str) -> Result<Vec<ResultRow>> {
    let perr = |line: usize, msg: String| Error::Parse {
        file: origin.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        _ => return Err(perr(1, format!("expected header {RESULTS_HEADER:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(perr(i + 1, format!("{} fields, expected 12", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| perr(i + 1, format!("bad number {s:?}")))
        };
        let scope = match f[8] {
            "targeted" => Scope::Targeted,
            "untargeted" => Scope::Untargeted,
            other => return Err(perr(i + 1, format!("bad scope {other:?}"))),
        };
        let phase = match f[9] {
            "clean" => Phase::Clean,
            "attacked" => Phase::Attacked,
            other => return Err(perr(i + 1, format!("bad phase {other:?}"))),
        };
        rows.push(ResultRow {
            dataset: f[0].to_string(),
            mechanism: f[1].to_string(),
            epsilon: if f[2].is_empty() { None } else { Some(num(f[2])?) },
            eta1: num(f[3])?,
            eta2: num(f[4])?,
            k: f[5].parse().map_err(|_| perr(i + 1, format!("bad K {:?}", f[5])))?,
            model: f[6].parse()?,
            task: f[7].parse()?,
            scope,
            phase,
            seed: f[10].parse().map_err(|_| perr(i + 1, format!("bad seed {:?}", f[10])))?,
            accuracy: num(f[11])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: Cell,
    pub seed: u64,
    pub reason: String,
}

/// Mean and bootstrap CI of one (cell, scope, phase) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub dataset: String,
    pub mechanism: String,
    pub epsilon: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub model: Arch,
    pub task: Task,
    pub scope: Scope,
    pub phase: Phase,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub per_seed: Vec<f64>,
}

/// `(clean − attacked) / clean` per cell and scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactStat {
    pub dataset: String,
    pub mechanism: String,
    pub epsilon: Option<f64>,
    pub eta1: f64,
    pub eta2: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub model: Arch,
    pub task: Task,
    pub scope: Scope,
    pub clean_mean: f64,
    pub attacked_mean: f64,
    /// `None` when the clean mean is zero.
    pub impact_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub bootstrap_resamples: usize,
    pub stats: Vec<CellStat>,
    pub impact: Vec<ImpactStat>,
    pub skipped: Vec<SkippedCell>,
}

/// A stored attack plan plus what is needed to rebuild the poisoned graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredPlan {
    pub dataset: String,
    pub cell: Cell,
    pub seed: u64,
    pub mechanism: MechanismConfig,
    pub plan: AttackPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub plans: Vec<StoredPlan>,
}

/// Graph and split for one seed.
pub fn seed_instance(cfg: &ExperimentConfig, base: Option<&Graph>, seed: u64) -> Result<(Graph, SplitMasks)> {
    let g = match base {
        Some(g) => g.clone(),
        None => generate_featured_sbm(&cfg.sbm, seed)?,
    };
    let masks = split_nodes(g.num_nodes(), cfg.split, seed)?;
    Ok((g, masks))
}

/// Loads the configured dataset directory; `None` for the synthetic generator.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Option<Graph>> {
    if cfg.is_synthetic() {
        return Ok(None);
    }
    let g = load_graph_dir(Path::new(&cfg.dataset))?;
    Ok(Some(if cfg.normalize {
        normalize_features(&g, -1.0, 1.0)
    } else {
        g
    }))
}

pub fn mechanism_for(cfg: &ExperimentConfig, g: &Graph, kind: MechanismKind, epsilon: f64) -> MechanismConfig {
    let mut m = MechanismConfig::new(kind, epsilon, g.dims()).with_domain(g.alpha, g.beta);
    m.m = cfg.m;
    m.sw_raw = cfg.sw_raw;
    m
}

fn trial_spec(cfg: &ExperimentConfig, g: &Graph, cell: &Cell) -> TrialSpec {
    let mechanism = cell
        .mechanism
        .zip(cell.epsilon)
        .map(|(kind, eps)| mechanism_for(cfg, g, kind, eps));
    TrialSpec {
        mechanism,
        attack: Some(cfg.attack_config(cell.eta1, cell.eta2)),
        clean_only: !cfg.attack || mechanism.is_none(),
        k: cell.k,
        task: cfg.task,
        holdout_frac: cfg.holdout_frac,
        train: cfg.train_config(cell.model),
    }
}

fn outcome_rows(cfg: &ExperimentConfig, dataset: &str, cell: &Cell, seed: u64, o: &TrialOutcome) -> Vec<ResultRow> {
    let row = |scope, phase, accuracy| ResultRow {
        dataset: dataset.to_string(),
        mechanism: cell.mechanism_name(),
        epsilon: cell.epsilon,
        eta1: cell.eta1,
        eta2: cell.eta2,
        k: cell.k,
        model: cell.model,
        task: cfg.task,
        scope,
        phase,
        seed,
        accuracy,
    };
    let mut rows = vec![
        row(Scope::Targeted, Phase::Clean, o.clean.targeted),
        row(Scope::Untargeted, Phase::Clean, o.clean.untargeted),
    ];
    if let Some(a) = o.attacked {
        rows.push(row(Scope::Targeted, Phase::Attacked, a.targeted));
        rows.push(row(Scope::Untargeted, Phase::Attacked, a.untargeted));
    }
    rows
}

type JobResult = (usize, usize, std::result::Result<TrialOutcome, String>);

/// Runs the grid over all seeds without touching the file system.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let dataset = cfg.dataset_name();
    let base = load_dataset(cfg)?;
    let cells = grid_cells(cfg);
    let instances: Vec<(Graph, SplitMasks)> = cfg
        .seeds
        .par_iter()
        .map(|&s| seed_instance(cfg, base.as_ref(), s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.seeds.len()).map(move |s| (c, s)))
        .collect();
    log::info!("{} cells x {} seeds", cells.len(), cfg.seeds.len());
    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let (g, masks) = &instances[s];
            let spec = trial_spec(cfg, g, &cells[c]);
            match run_trial(g, masks, &spec, cfg.seeds[s]) {
                Ok(o) => Ok((c, s, Ok(o))),
                Err(Error::Constraint(msg)) => Ok((c, s, Err(msg))),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut skipped = Vec::new();
    let mut bad_cell = vec![false; cells.len()];
    for (c, s, r) in &results {
        if let Err(reason) = r {
            log::warn!("skipping cell {} (seed {}): {reason}", cells[*c], cfg.seeds[*s]);
            bad_cell[*c] = true;
            skipped.push(SkippedCell {
                cell: cells[*c],
                seed: cfg.seeds[*s],
                reason: reason.clone(),
            });
        }
    }

    let mut keyed = Vec::new();
    let mut plans = Vec::new();
    for (c, s, r) in results {
        let Ok(o) = r else { continue };
        if bad_cell[c] {
            continue;
        }
        let seed = cfg.seeds[s];
        for (i, row) in outcome_rows(cfg, &dataset, &cells[c], seed, &o).into_iter().enumerate() {
            keyed.push(((c, s, i), row));
        }
        if let (Some(plan), Some(kind), Some(eps)) = (o.plan, cells[c].mechanism, cells[c].epsilon) {
            plans.push(((c, s), StoredPlan {
                dataset: dataset.clone(),
                cell: cells[c],
                seed,
                mechanism: mechanism_for(cfg, &instances[s].0, kind, eps),
                plan,
            }));
        }
    }
    keyed.sort_by_key(|a| a.0);
    plans.sort_by_key(|a| a.0);
    let rows: Vec<ResultRow> = keyed.into_iter().map(|(_, r)| r).collect();
    let summary = summarize(cfg, &dataset, &cells, &rows, skipped);
    Ok(ExperimentOutput {
        rows,
        summary,
        plans: plans.into_iter().map(|(_, p)| p).collect(),
    })
}

fn same_cell(r: &ResultRow, cell: &Cell) -> bool {
    r.mechanism == cell.mechanism_name()
        && r.epsilon == cell.epsilon
        && r.eta1 == cell.eta1
        && r.eta2 == cell.eta2
        && r.k == cell.k
        && r.model == cell.model
}

/// Per-cell means with bootstrap CIs and impact ratios, in grid order.
pub fn summarize(
    cfg: &ExperimentConfig,
    dataset: &str,
    cells: &[Cell],
    rows: &[ResultRow],
    skipped: Vec<SkippedCell>,
) -> Summary {
    let mut stats = Vec::new();
    let mut impact = Vec::new();
    for cell in cells {
        let cell_rows: Vec<&ResultRow> = rows.iter().filter(|r| same_cell(r, cell)).collect();
        if cell_rows.is_empty() {
            continue;
        }
        for scope in [Scope::Targeted, Scope::Untargeted] {
            let mut means = [None, None];
            for (pi, phase) in [Phase::Clean, Phase::Attacked].into_iter().enumerate() {
                let xs: Vec<f64> = cell_rows
                    .iter()
                    .filter(|r| r.scope == scope && r.phase == phase)
                    .map(|r| r.accuracy)
                    .collect();
                if xs.is_empty() {
                    continue;
                }
                let mut rng = stream(cfg.bootstrap_seed, Stream::Bootstrap, stats.len() as u64);
                let ci = bootstrap_ci(&xs, cfg.bootstrap_resamples, 0.95, &mut rng);
                means[pi] = Some(ci.mean);
                stats.push(CellStat {
                    dataset: dataset.to_string(),
                    mechanism: cell.mechanism_name(),
                    epsilon: cell.epsilon,
                    eta1: cell.eta1,
                    eta2: cell.eta2,
                    k: cell.k,
                    model: cell.model,
                    task: cfg.task,
                    scope,
                    phase,
                    n: xs.len(),
                    mean: ci.mean,
                    ci_low: ci.low,
                    ci_high: ci.high,
                    per_seed: xs,
                });
            }
            if let [Some(clean), Some(attacked)] = means {
                impact.push(ImpactStat {
                    dataset: dataset.to_string(),
                    mechanism: cell.mechanism_name(),
                    epsilon: cell.epsilon,
                    eta1: cell.eta1,
                    eta2: cell.eta2,
                    k: cell.k,
                    model: cell.model,
                    task: cfg.task,
                    scope,
                    clean_mean: clean,
                    attacked_mean: attacked,
                    impact_ratio: (clean != 0.0).then(|| (clean - attacked) / clean),
                });
            }
        }
    }
    Summary {
        dataset: dataset.to_string(),
        bootstrap_resamples: cfg.bootstrap_resamples,
        stats,
        impact,
        skipped,
    }
}

pub fn plan_file_name(index: usize, p: &StoredPlan) -> String {
    format!("plan_{index:04}_seed{}.json", p.seed)
}

/// Writes `results.csv`, `summary.json`, `config.resolved`, `attack_plan.json`
/// (the first attacked trial) and every plan under `plans/`.
pub fn write_outputs(cfg: &ExperimentConfig, out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESOLVED_FILE), cfg.resolved())?;
    fs::write(dir.join(RESULTS_FILE), rows_to_csv(&out.rows))?;
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&out.summary)?)?;
    let plans_dir = dir.join(PLANS_DIR);
    if plans_dir.exists() {
        fs::remove_dir_all(&plans_dir)?;
    }
    if let Some(first) = out.plans.first() {
        fs::write(dir.join(PLAN_FILE), serde_json::to_string(first)?)?;
        fs::create_dir_all(&plans_dir)?;
        for (i, p) in out.plans.iter().enumerate() {
            fs::write(plans_dir.join(plan_file_name(i, p)), serde_json::to_string(p)?)?;
        }
    } else if dir.join(PLAN_FILE).exists() {
        fs::remove_file(dir.join(PLAN_FILE))?;
    }
    Ok(())
}

/// Runs the grid, writes every output into `cfg.output` and returns the results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let out = with_workers(cfg.workers, || run_grid(cfg))?;
    write_outputs(cfg, &out, &cfg.output)?;
    Ok(out)
}

/// Runs `f` on a dedicated pool of `workers` threads (0 = the global pool).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?
        .install(f)
}

pub fn read_summary(dir: &Path) -> Result<Summary> {
    let p = dir.join(SUMMARY_FILE);
    if !p.exists() {
        return Err(Error::NotFound(p));
    }
    Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
}

pub fn read_stored_plan(path: &Path) -> Result<StoredPlan> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Output paths of an experiment directory.
pub fn plan_path(dir: &Path) -> PathBuf {
    dir.join(PLAN_FILE)
}
