//! Local differential privacy mechanisms for node features.
//!
//! Three one-dimensional mechanisms are provided: the multi-bit mechanism
//! (MB), the piecewise mechanism (PM) and the square-wave mechanism (SW).
//! [`perturb_features`] wraps any of them into the multidimensional
//! protocol: sample `m` of the `d` coordinates, spend `ε/m` on each, scale the
//! report by `d/m` and zero the remaining coordinates.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{features_to_csv, Graph};
use crate::matrix::Matrix;
use crate::rng::{self, SimRng, Stream};

const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MechanismKind {
    #[serde(rename = "PM")]
    Pm,
    #[serde(rename = "MB")]
    Mb,
    #[serde(rename = "SW")]
    Sw,
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismKind::Pm => "PM",
            MechanismKind::Mb => "MB",
            MechanismKind::Sw => "SW",
        })
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PM" => Ok(MechanismKind::Pm),
            "MB" => Ok(MechanismKind::Mb),
            "SW" => Ok(MechanismKind::Sw),
            other => Err(Error::Config(format!("unknown mechanism {other:?}"))),
        }
    }
}

/// `max(1, min(d, floor(ε / 2.5)))`
pub fn default_m(epsilon: f64, d: usize) -> usize {
    let m = (epsilon / 2.5).floor();
    let m = if m.is_finite() && m > 0.0 {
        m.min(d as f64) as usize
    } else {
        0
    };
    m.clamp(1, d.max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub epsilon: f64,
    /// Sampled coordinates per node; `None` applies [`default_m`].
    pub m: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub d: usize,
    /// Report raw SW values without the `d/m` scaling.
    #[serde(default)]
    pub sw_raw: bool,
}

impl MechanismConfig {
    pub fn new(kind: MechanismKind, epsilon: f64, d: usize) -> Self {
        MechanismConfig {
            kind,
            epsilon,
            m: None,
            alpha: -1.0,
            beta: 1.0,
            d,
            sw_raw: false,
        }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    pub fn with_domain(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn m(&self) -> usize {
        self.m.unwrap_or_else(|| default_m(self.epsilon, self.d))
    }

    /// Per-coordinate budget `ε / m`.
    pub fn eps_bar(&self) -> f64 {
        self.epsilon / self.m() as f64
    }

    /// Report scale `d / m` applied to PM and (unless raw) SW outputs.
    pub fn scale(&self) -> f64 {
        self.d as f64 / self.m() as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!(
                "privacy budget must be positive and finite, got {}",
                self.epsilon
            )));
        }
        if self.d == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        let m = self.m();
        if m == 0 || m > self.d {
            return Err(Error::invalid(format!("m={m} outside 1..={}", self.d)));
        }
        if !(self.alpha < self.beta) {
            return Err(Error::invalid(format!(
                "empty input domain [{}, {}]",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

fn check_domain(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if x.is_nan() || x < lo - DOMAIN_SLACK || x > hi + DOMAIN_SLACK {
        return Err(Error::Domain(format!("input {x} outside [{lo}, {hi}]")));
    }
    Ok(x.clamp(lo, hi))
}

// ---------------------------------------------------------------------------
// Multi-bit

/// `Pr[+1 | x]` of the multi-bit mechanism.
pub fn mb_prob_plus(x: f64, eps_bar: f64, alpha: f64, beta: f64) -> f64 {
    let e = eps_bar.exp();
    if e.is_infinite() {
        return (x - alpha) / (beta - alpha);
    }
    1.0 / (e + 1.0) + (x - alpha) / (beta - alpha) * (e - 1.0) / (e + 1.0)
}

/// Draws `+1` or `-1`.
pub fn perturb_mb<R: Rng + ?Sized>(
    x: f64,
    eps_bar: f64,
    alpha: f64,
    beta: f64,
    rng: &mut R,
) -> Result<f64> {
    let x = check_domain(x, alpha, beta)?;
    let p = mb_prob_plus(x, eps_bar, alpha, beta).clamp(0.0, 1.0);
    Ok(if rng.random::<f64>() < p { 1.0 } else { -1.0 })
}

/// Server-side unbiasing of a multi-bit report `c ∈ {-1, +1}`:
/// `(d(β-α)/2m)·((e^ε̄+1)/(e^ε̄-1))·c + (α+β)/2`.
pub fn rectify_mb(c: f64, cfg: &MechanismConfig) -> f64 {
    let e = cfg.eps_bar().exp();
    let half_width = cfg.d as f64 * (cfg.beta - cfg.alpha) / (2.0 * cfg.m() as f64);
    half_width * (e + 1.0) / (e - 1.0) * c + (cfg.alpha + cfg.beta) / 2.0
}

// ---------------------------------------------------------------------------
// Piecewise

/// Constants of the piecewise mechanism at budget `ε̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmParams {
    pub eps_bar: f64,
    /// Output range half-width.
    pub s: f64,
    /// High density.
    pub p: f64,
}

impl PmParams {
    pub fn new(eps_bar: f64) -> Self {
        let h = (eps_bar / 2.0).exp();
        // e^{ε/2} - 1 without cancellation at small budgets
        let hm1 = (eps_bar / 2.0).exp_m1();
        PmParams {
            eps_bar,
            s: (h + 1.0) / hm1,
            p: h * hm1 / (2.0 * h + 2.0),
        }
    }

    #[inline]
    pub fn l(&self, x: f64) -> f64 {
        (self.s + 1.0) / 2.0 * x - (self.s - 1.0) / 2.0
    }

    #[inline]
    pub fn r(&self, x: f64) -> f64 {
        self.l(x) + self.s - 1.0
    }

    pub fn low_density(&self) -> f64 {
        self.p / self.eps_bar.exp()
    }

    /// Output density at `c` given input `x`.
    pub fn density(&self, x: f64, c: f64) -> f64 {
        if c < -self.s || c > self.s {
            0.0
        } else if c >= self.l(x) && c <= self.r(x) {
            self.p
        } else {
            self.low_density()
        }
    }

    /// Inverse-CDF draw over the three constant-density segments.
    pub fn sample_with(&self, x: f64, u: f64) -> f64 {
        let (l, r, s) = (self.l(x), self.r(x), self.s);
        let lo = self.low_density();
        let left = (l + s) * lo;
        let mid = (r - l) * self.p;
        let v = if u < left {
            -s + u / lo
        } else if u < left + mid {
            l + (u - left) / self.p
        } else {
            r + (u - left - mid) / lo
        };
        v.clamp(-s, s)
    }
}

pub fn perturb_pm<R: Rng + ?Sized>(x: f64, eps_bar: f64, rng: &mut R) -> Result<f64> {
    let x = check_domain(x, -1.0, 1.0)?;
    Ok(PmParams::new(eps_bar).sample_with(x, rng.random::<f64>()))
}

// ---------------------------------------------------------------------------
// Square wave

/// Constants of the square-wave mechanism at budget `ε̄`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwParams {
    pub eps_bar: f64,
    /// Half-width of the high-density window.
    pub b: f64,
    /// High density.
    pub p: f64,
}

impl SwParams {
    pub fn new(eps_bar: f64) -> Result<Self> {
        let e = eps_bar.exp();
        let em1 = eps_bar.exp_m1();
        let denom = e * (em1 - eps_bar);
        let b = (eps_bar * e - em1) / denom;
        if !(denom > 0.0) || !b.is_finite() || !(b > 0.0) {
            return Err(Error::Numeric(format!(
                "square-wave window undefined at ε̄={eps_bar}: e^ε̄(e^ε̄-ε̄-1) = {denom}"
            )));
        }
        Ok(SwParams {
            eps_bar,
            b,
            p: e / (2.0 * b * e + 2.0),
        })
    }

    pub fn low_density(&self) -> f64 {
        self.p / self.eps_bar.exp()
    }

    pub fn density(&self, x: f64, c: f64) -> f64 {
        let edge = self.b + 1.0;
        if c < -edge || c > edge {
            0.0
        } else if (c - x).abs() <= self.b {
            self.p
        } else {
            self.low_density()
        }
    }

    pub fn sample_with(&self, x: f64, u: f64) -> f64 {
        let edge = self.b + 1.0;
        let (wl, wr) = (x - self.b, x + self.b);
        let lo = self.low_density();
        let left = (wl + edge) * lo;
        let mid = 2.0 * self.b * self.p;
        let v = if u < left {
            -edge + u / lo
        } else if u < left + mid {
            wl + (u - left) / self.p
        } else {
            wr + (u - left - mid) / lo
        };
        v.clamp(-edge, edge)
    }
}

pub fn perturb_sw<R: Rng + ?Sized>(x: f64, eps_bar: f64, rng: &mut R) -> Result<f64> {
    let x = check_domain(x, -1.0, 1.0)?;
    Ok(SwParams::new(eps_bar)?.sample_with(x, rng.random::<f64>()))
}

// ---------------------------------------------------------------------------
// Multidimensional wrapper

/// Server-side view of every node's report.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedFeatures {
    pub matrix: Matrix,
    /// Sorted sampled coordinates per node.
    pub supports: Vec<Vec<usize>>,
    pub config: MechanismConfig,
    pub seed: u64,
}

/// One node's report under `cfg`, drawn from `rng`.
pub fn perturb_row(
    x: &[f64],
    cfg: &MechanismConfig,
    rng: &mut SimRng,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let d = cfg.d;
    let m = cfg.m();
    let eps_bar = cfg.eps_bar();
    let mut support = index::sample(rng, d, m).into_vec();
    support.sort_unstable();
    let mut out = vec![0.0; d];
    for &j in &support {
        out[j] = match cfg.kind {
            MechanismKind::Pm => cfg.scale() * perturb_pm(x[j], eps_bar, rng)?,
            MechanismKind::Sw => {
                let t = perturb_sw(x[j], eps_bar, rng)?;
                if cfg.sw_raw {
                    t
                } else {
                    cfg.scale() * t
                }
            }
            MechanismKind::Mb => {
                let c = perturb_mb(x[j], eps_bar, cfg.alpha, cfg.beta, rng)?;
                rectify_mb(c, cfg)
            }
        };
    }
    Ok((out, support))
}

/// Perturbs every node's features.
///
/// Node `v` draws from its own stream `(seed, Perturb, v)`, so the result is
/// independent of how the rows are scheduled across threads.
pub fn perturb_features(g: &Graph, cfg: &MechanismConfig, seed: u64) -> Result<PerturbedFeatures> {
    perturb_matrix(&g.features, cfg, seed)
}

pub fn perturb_matrix(x: &Matrix, cfg: &MechanismConfig, seed: u64) -> Result<PerturbedFeatures> {
    cfg.validate()?;
    if x.cols() != cfg.d {
        return Err(Error::DimensionMismatch(format!(
            "features have {} columns, mechanism configured for d={}",
            x.cols(),
            cfg.d
        )));
    }
    let rows: Vec<(Vec<f64>, Vec<usize>)> = (0..x.rows())
        .into_par_iter()
        .map(|v| {
            let mut rng = rng::stream(seed, Stream::Perturb, v as u64);
            perturb_row(x.row(v), cfg, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(x.rows() * cfg.d);
    let mut supports = Vec::with_capacity(x.rows());
    for (r, s) in rows {
        data.extend(r);
        supports.push(s);
    }
    Ok(PerturbedFeatures {
        matrix: Matrix::from_vec(x.rows(), cfg.d, data)?,
        supports,
        config: *cfg,
        seed,
    })
}

/// Sidecar metadata for an exported perturbed feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMeta {
    pub kind: MechanismKind,
    pub epsilon: f64,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub d: usize,
    pub sw_raw: bool,
    pub seed: u64,
}

impl PerturbedFeatures {
    pub fn meta(&self) -> PerturbationMeta {
        PerturbationMeta {
            kind: self.config.kind,
            epsilon: self.config.epsilon,
            m: self.config.m(),
            alpha: self.config.alpha,
            beta: self.config.beta,
            d: self.config.d,
            sw_raw: self.config.sw_raw,
            seed: self.seed,
        }
    }
}

pub fn meta_path(features_path: &Path) -> PathBuf {
    let mut name = features_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Writes the feature CSV and its `<file>.meta.json` sidecar.
pub fn write_perturbed(p: &PerturbedFeatures, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, features_to_csv(&p.matrix))?;
    fs::write(meta_path(path), serde_json::to_string_pretty(&p.meta())?)?;
    Ok(())
}
