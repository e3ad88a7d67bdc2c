//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, BoundMode, Strategy};
use crate::defense::{DEFAULT_BINS, DEFAULT_FLAG_PERCENTILE};
use crate::error::{Error, Result};
use crate::graph::SbmParams;
use crate::ldp::MechanismKind;
use crate::protocol::{Arch, Task, TrainConfig};

/// Value of the `dataset` key that selects the synthetic generator.
pub const SYNTHETIC: &str = "synthetic";

/// Default aggregation depths.
pub const DEFAULT_K_GRID: [usize; 5] = [0, 2, 4, 8, 16];

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Synthetic benchmark used when no dataset directory is given.
pub fn benchmark_sbm() -> SbmParams {
    SbmParams {
        p_in: 0.04,
        p_out: 0.006,
        ..SbmParams::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `synthetic` or a directory holding `edges.txt`, `features.csv`, `labels.csv`.
    pub dataset: String,
    pub sbm: SbmParams,
    /// Rescale loaded features column-wise into `[-1, 1]`.
    pub normalize: bool,
    pub split: (f64, f64, f64),
    pub mechanisms: Vec<MechanismKind>,
    pub epsilons: Vec<f64>,
    pub m: Option<usize>,
    pub sw_raw: bool,
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    pub k: Vec<usize>,
    pub models: Vec<Arch>,
    pub task: Task,
    pub strategy: Strategy,
    pub bound_mode: BoundMode,
    pub sw_full_range: bool,
    pub targets_from_test: bool,
    pub fakes_unlabeled: bool,
    /// `false` runs the clean phase only.
    pub attack: bool,
    /// Adds clean cells trained on unperturbed features.
    pub non_private: bool,
    pub seeds: Vec<u64>,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub holdout_frac: f64,
    pub defenses: bool,
    /// `None` uses the class count.
    pub kmeans_k: Option<usize>,
    pub flag_percentile: f64,
    /// `None` explores the whole Girvan–Newman dendrogram.
    pub gn_max_communities: Option<usize>,
    pub bins: usize,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub output: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            dataset: SYNTHETIC.into(),
            sbm: benchmark_sbm(),
            normalize: true,
            split: (0.5, 0.25, 0.25),
            mechanisms: vec![MechanismKind::Pm],
            epsilons: vec![0.01],
            m: None,
            sw_raw: false,
            eta1: vec![0.09],
            eta2: vec![0.8],
            k: DEFAULT_K_GRID.to_vec(),
            models: vec![Arch::Gcn],
            task: Task::NodeClassification,
            strategy: Strategy::Identical,
            bound_mode: BoundMode::Algorithm1,
            sw_full_range: false,
            targets_from_test: false,
            fakes_unlabeled: false,
            attack: true,
            non_private: false,
            seeds: (0..10).collect(),
            hidden: t.hidden,
            lr: t.lr,
            weight_decay: t.weight_decay,
            dropout: t.dropout,
            epochs: t.max_epochs,
            holdout_frac: 0.1,
            defenses: false,
            kmeans_k: None,
            flag_percentile: DEFAULT_FLAG_PERCENTILE,
            gn_max_communities: Some(DEFAULT_GN_COMMUNITIES),
            bins: DEFAULT_BINS,
            bootstrap_resamples: BOOTSTRAP_RESAMPLES,
            bootstrap_seed: 0,
            output: PathBuf::from("results"),
            workers: 0,
        }
    }
}

/// Girvan–Newman stopping point used by the defense suite.
pub const DEFAULT_GN_COMMUNITIES: usize = 50;

/// Every recognised key, in the order `config.resolved` lists them.
pub const KEYS: &[&str] = &[
    "dataset",
    "nodes",
    "classes",
    "dims",
    "p_in",
    "p_out",
    "signal",
    "normalize",
    "split",
    "mechanism",
    "epsilon",
    "m",
    "sw_raw",
    "eta1",
    "eta2",
    "K",
    "model",
    "task",
    "strategy",
    "bound_mode",
    "sw_full_range",
    "targets_from_test",
    "fakes_unlabeled",
    "attack",
    "non_private",
    "seeds",
    "hidden",
    "lr",
    "weight_decay",
    "dropout",
    "epochs",
    "holdout_frac",
    "defenses",
    "kmeans_k",
    "flag_percentile",
    "gn_max_communities",
    "bins",
    "bootstrap_resamples",
    "bootstrap_seed",
    "output",
    "workers",
];

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {what}"))
}

fn scalar<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value, what))
}

fn list<T: FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| bad(key, value, what)))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key} must not be empty")));
    }
    Ok(items)
}

fn parse_list<T>(value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

/// `none` (or empty) maps to `None`.
fn optional<T: FromStr>(key: &str, value: &str, what: &str) -> Result<Option<T>> {
    let v = value.trim();
    if v.is_empty() || v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        scalar(key, v, what).map(Some)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn show_opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = v.to_string(),
            "nodes" => self.sbm.nodes = scalar(key, v, "a node count")?,
            "classes" => self.sbm.classes = scalar(key, v, "a class count")?,
            "dims" => self.sbm.dims = scalar(key, v, "a feature dimension")?,
            "p_in" => self.sbm.p_in = scalar(key, v, "a probability")?,
            "p_out" => self.sbm.p_out = scalar(key, v, "a probability")?,
            "signal" => self.sbm.signal = scalar(key, v, "a real")?,
            "normalize" => self.normalize = boolean(key, v)?,
            "split" => {
                let r: Vec<f64> = list(key, v, "three ratios")?;
                let [a, b, c] = r[..] else {
                    return Err(bad(key, v, "three ratios"));
                };
                self.split = (a, b, c);
            }
            "mechanism" => self.mechanisms = parse_list(v, MechanismKind::from_str)?,
            "epsilon" => self.epsilons = list(key, v, "privacy budgets")?,
            "m" => self.m = optional(key, v, "a coordinate count")?,
            "sw_raw" => self.sw_raw = boolean(key, v)?,
            "eta1" => self.eta1 = list(key, v, "fractions")?,
            "eta2" => self.eta2 = list(key, v, "fractions")?,
            "K" | "k" => self.k = list(key, v, "aggregation depths")?,
            "model" => self.models = parse_list(v, Arch::from_str)?,
            "task" => self.task = v.parse()?,
            "strategy" => self.strategy = v.parse()?,
            "bound_mode" => self.bound_mode = v.parse()?,
            "sw_full_range" => self.sw_full_range = boolean(key, v)?,
            "targets_from_test" => self.targets_from_test = boolean(key, v)?,
            "fakes_unlabeled" => self.fakes_unlabeled = boolean(key, v)?,
            "attack" => self.attack = boolean(key, v)?,
            "non_private" => self.non_private = boolean(key, v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "hidden" => self.hidden = scalar(key, v, "a width")?,
            "lr" => self.lr = scalar(key, v, "a learning rate")?,
            "weight_decay" => self.weight_decay = scalar(key, v, "a real")?,
            "dropout" => self.dropout = scalar(key, v, "a rate")?,
            "epochs" => self.epochs = scalar(key, v, "an epoch count")?,
            "holdout_frac" => self.holdout_frac = scalar(key, v, "a fraction")?,
            "defenses" => self.defenses = boolean(key, v)?,
            "kmeans_k" => self.kmeans_k = optional(key, v, "a cluster count")?,
            "flag_percentile" => self.flag_percentile = scalar(key, v, "a percentile")?,
            "gn_max_communities" => self.gn_max_communities = optional(key, v, "a count")?,
            "bins" => self.bins = scalar(key, v, "a bin count")?,
            "bootstrap_resamples" => self.bootstrap_resamples = scalar(key, v, "a count")?,
            "bootstrap_seed" => self.bootstrap_seed = scalar(key, v, "a seed")?,
            "output" => self.output = PathBuf::from(v),
            "workers" => self.workers = scalar(key, v, "a thread count")?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let Some((k, v)) = o.split_once('=') else {
                return Err(Error::Config(format!("override {o:?} is not key=value")));
            };
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    file: origin.to_string(),
                    line: i + 1,
                    msg: "expected key = value".into(),
                });
            };
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Parse {
                    file: origin.to_string(),
                    line: i + 1,
                    msg,
                },
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("mechanism", self.mechanisms.is_empty()),
            ("epsilon", self.epsilons.is_empty()),
            ("eta1", self.eta1.is_empty()),
            ("eta2", self.eta2.is_empty()),
            ("K", self.k.is_empty()),
            ("model", self.models.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        for (key, empty) in nonempty {
            if empty {
                return Err(Error::Config(format!("{key} grid must not be empty")));
            }
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("epsilon must be positive, got {e}")));
        }
        for &eta1 in &self.eta1 {
            for &eta2 in &self.eta2 {
                self.attack_config(eta1, eta2).validate()?;
            }
        }
        if let Some(&k) = self.k.iter().find(|&&k| k > crate::protocol::MAX_CALIBRATION_STEPS) {
            return Err(Error::Config(format!(
                "K = {k} exceeds the limit of {}",
                crate::protocol::MAX_CALIBRATION_STEPS
            )));
        }
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be non-negative and sum to 1, got {a},{b},{c}"
            )));
        }
        if !(self.holdout_frac > 0.0 && self.holdout_frac < 1.0) {
            return Err(Error::Config(format!(
                "holdout_frac must lie in (0, 1), got {}",
                self.holdout_frac
            )));
        }
        if !(self.flag_percentile > 0.0 && self.flag_percentile < 100.0) {
            return Err(Error::Config(format!(
                "flag_percentile must lie in (0, 100), got {}",
                self.flag_percentile
            )));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        self.train_config(Arch::Gcn).validate()
    }

    pub fn is_synthetic(&self) -> bool {
        self.dataset == SYNTHETIC
    }

    /// Name written to the `dataset` column.
    pub fn dataset_name(&self) -> String {
        if self.is_synthetic() {
            return SYNTHETIC.to_string();
        }
        Path::new(&self.dataset)
            .file_name()
            .map_or_else(|| self.dataset.clone(), |n| n.to_string_lossy().into_owned())
    }

    pub fn train_config(&self, arch: Arch) -> TrainConfig {
        TrainConfig {
            arch,
            hidden: self.hidden,
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_epochs: self.epochs,
            dropout: self.dropout,
            ..TrainConfig::default()
        }
    }

    pub fn attack_config(&self, eta1: f64, eta2: f64) -> AttackConfig {
        AttackConfig {
            eta1,
            eta2,
            strategy: self.strategy,
            bound_mode: self.bound_mode,
            sw_full_range: self.sw_full_range,
            targets_from_test: self.targets_from_test,
            fakes_unlabeled: self.fakes_unlabeled,
            seed: 0,
        }
    }

    /// The effective configuration as parseable `key = value` text.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let v = match *key {
                "dataset" => self.dataset.clone(),
                "nodes" => self.sbm.nodes.to_string(),
                "classes" => self.sbm.classes.to_string(),
                "dims" => self.sbm.dims.to_string(),
                "p_in" => self.sbm.p_in.to_string(),
                "p_out" => self.sbm.p_out.to_string(),
                "signal" => self.sbm.signal.to_string(),
                "normalize" => self.normalize.to_string(),
                "split" => format!("{},{},{}", self.split.0, self.split.1, self.split.2),
                "mechanism" => join(&self.mechanisms),
                "epsilon" => join(&self.epsilons),
                "m" => show_opt(&self.m),
                "sw_raw" => self.sw_raw.to_string(),
                "eta1" => join(&self.eta1),
                "eta2" => join(&self.eta2),
                "K" => join(&self.k),
                "model" => join(&self.models),
                "task" => self.task.to_string(),
                "strategy" => self.strategy.to_string(),
                "bound_mode" => self.bound_mode.to_string(),
                "sw_full_range" => self.sw_full_range.to_string(),
                "targets_from_test" => self.targets_from_test.to_string(),
                "fakes_unlabeled" => self.fakes_unlabeled.to_string(),
                "attack" => self.attack.to_string(),
                "non_private" => self.non_private.to_string(),
                "seeds" => join(&self.seeds),
                "hidden" => self.hidden.to_string(),
                "lr" => self.lr.to_string(),
                "weight_decay" => self.weight_decay.to_string(),
                "dropout" => self.dropout.to_string(),
                "epochs" => self.epochs.to_string(),
                "holdout_frac" => self.holdout_frac.to_string(),
                "defenses" => self.defenses.to_string(),
                "kmeans_k" => show_opt(&self.kmeans_k),
                "flag_percentile" => self.flag_percentile.to_string(),
                "gn_max_communities" => show_opt(&self.gn_max_communities),
                "bins" => self.bins.to_string(),
                "bootstrap_resamples" => self.bootstrap_resamples.to_string(),
                "bootstrap_seed" => self.bootstrap_seed.to_string(),
                "output" => self.output.display().to_string(),
                "workers" => self.workers.to_string(),
                _ => unreachable!("every key is listed"),
            };
            writeln!(s, "{key} = {v}").unwrap();
        }
        s
    }
}

/// Comma list of seeds; `a..b` expands to the half-open range.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = scalar("seeds", a, "a seed range")?;
            let b: u64 = scalar("seeds", b, "a seed range")?;
            if b <= a {
                return Err(bad("seeds", part, "a non-empty range"));
            }
            out.extend(a..b);
        } else {
            out.push(scalar("seeds", part, "a seed")?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("seeds must not be empty".into()));
    }
    Ok(out)
}
