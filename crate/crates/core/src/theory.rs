//! Closed-form error evaluators and the Monte Carlo harnesses that probe them.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{plan_attack, poison_graph, AttackConfig};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ldp::{perturb_features, perturb_matrix, MechanismConfig};
use crate::matrix::{sq_dist, Matrix};
use crate::protocol::{calibrate, CalibrationConfig};
use crate::rng::{mix_seed, stream, Stream};
use crate::stats::{mean, std_error};

pub const DEFAULT_LAMBDA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    /// Per-coordinate variance of honest reports.
    pub sigma2: f64,
    /// Per-coordinate variance of crafted reports.
    pub sigma2_atk: f64,
    /// `|N(v_t)|`.
    pub deg_target: f64,
    /// Expected fake neighbours of a fake node, `q·(|V_atk| − 1)`.
    pub n_atk_neighbors: f64,
    pub lambda: f64,
    pub q: f64,
    #[serde(rename = "B")]
    pub bound: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub n_fake: usize,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("sigma2", self.sigma2),
            ("sigma2_atk", self.sigma2_atk),
            ("deg_target", self.deg_target),
            ("n_atk_neighbors", self.n_atk_neighbors),
            ("lambda", self.lambda),
            ("q", self.q),
            ("B", self.bound),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Crafted-report variance per coordinate, `B²·m/d`, averaged over the support choice.
pub fn crafted_variance(bound: f64, m: usize, d: usize) -> f64 {
    bound * bound * m as f64 / d as f64
}

/// Expected variance bias of a target's aggregate after one fake neighbour joins.
pub fn variance_bias(inp: &TheoryInputs) -> Result<f64> {
    inp.validate()?;
    if inp.deg_target < 1.0 {
        return Err(Error::Domain(format!(
            "target degree must be at least 1, got {}",
            inp.deg_target
        )));
    }
    let n = inp.deg_target;
    let na = inp.n_atk_neighbors;
    let s2 = inp.sigma2;
    let first = (n + 1.0).powi(2) * s2 / (n + 2.0).powi(4);
    let second = (s2 + (na + 1.0) * inp.sigma2_atk) / ((n + 2.0).powi(2) * (na + 2.0).powi(2));
    let third = s2 / (n + 1.0).powi(2);
    Ok(first + second - third)
}

/// Global error energy `Σ_v ‖h_v − x_v‖² + λ Σ_{(u,v)∈E} ‖h_u − h_v‖²`.
pub fn energy(g: &Graph, features: &Matrix, embeddings: &Matrix, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let n = g.num_nodes();
    if features.rows() != n || embeddings.rows() != n || features.cols() != embeddings.cols() {
        return Err(Error::DimensionMismatch(format!(
            "graph has {n} nodes, features are {}x{}, embeddings are {}x{}",
            features.rows(),
            features.cols(),
            embeddings.rows(),
            embeddings.cols()
        )));
    }
    let fit: f64 = (0..n)
        .map(|v| sq_dist(embeddings.row(v), features.row(v)))
        .sum();
    let smooth: f64 = g
        .edges()
        .iter()
        .map(|&(u, v)| sq_dist(embeddings.row(u), embeddings.row(v)))
        .sum();
    Ok(fit + lambda * smooth)
}

/// `(1 + λq/(1 − λq))·|V_atk|·B²·K`.
pub fn expected_delta_psi(inp: &TheoryInputs) -> Result<f64> {
    inp.validate()?;
    let lq = inp.lambda * inp.q;
    if lq >= 1.0 {
        return Err(Error::Domain(format!("lambda·q = {lq} must be below 1")));
    }
    Ok((1.0 + lq / (1.0 - lq)) * inp.n_fake as f64 * inp.bound * inp.bound * inp.k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

impl McEstimate {
    fn from_samples(xs: &[f64]) -> Self {
        McEstimate {
            mean: mean(xs),
            stderr: std_error(xs),
            trials: xs.len(),
        }
    }
}

/// `Ψ(G′) − Ψ(G)` for one perturbation and one attack plan.
///
/// The reference `x` is the true feature matrix for genuine nodes and the
/// crafted report for fake nodes.
pub fn delta_psi_once(
    g: &Graph,
    mech: &MechanismConfig,
    attack: Option<&AttackConfig>,
    lambda: f64,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let Some(attack) = attack else {
        return Ok(0.0);
    };
    let cal = CalibrationConfig::new(k)?;
    let reports = perturb_features(g, mech, mix_seed(seed, 1))?.matrix;
    let h = calibrate(&reports, g, cal)?;
    let psi = energy(g, &g.features, &h, lambda)?;
    let cfg = AttackConfig {
        seed: mix_seed(seed, 2),
        ..*attack
    };
    let plan = plan_attack(g, mech, &cfg, None)?;
    let gp = poison_graph(g, &reports, &plan)?;
    let hp = calibrate(&gp.features, &gp, cal)?;
    let reference = g.features.vstack(&plan.crafted_features)?;
    let psi_p = energy(&gp, &reference, &hp, lambda)?;
    Ok(psi_p - psi)
}

/// Monte Carlo mean and standard error of `ΔΨ` over independent trials.
pub fn mc_delta_psi(
    g: &Graph,
    mech: &MechanismConfig,
    attack: Option<&AttackConfig>,
    lambda: f64,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    if trials == 0 {
        return Err(Error::invalid("at least one trial is required"));
    }
    let xs: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| delta_psi_once(g, mech, attack, lambda, k, mix_seed(seed, t as u64)))
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&xs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub mean_delta_psi: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

/// `ΔΨ` estimates along increasing privacy budgets, everything else fixed.
#[allow(clippy::too_many_arguments)]
pub fn security_privacy_curve(
    g: &Graph,
    mech: &MechanismConfig,
    epsilons: &[f64],
    attack: &AttackConfig,
    lambda: f64,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if epsilons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("epsilon grid must be strictly increasing"));
    }
    epsilons
        .iter()
        .map(|&epsilon| {
            let cfg = MechanismConfig { epsilon, ..*mech };
            let est = mc_delta_psi(g, &cfg, Some(attack), lambda, k, trials, seed)?;
            Ok(CurvePoint {
                epsilon,
                mean_delta_psi: est.mean,
                stderr: est.stderr,
                trials: est.trials,
                seed,
            })
        })
        .collect()
}

/// Curve as CSV with header `epsilon,mean_delta_psi,stderr,trials,seed`.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("epsilon,mean_delta_psi,stderr,trials,seed\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            p.epsilon, p.mean_delta_psi, p.stderr, p.trials, p.seed
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub degree: usize,
    pub mean_max_error: f64,
}

/// Max-coordinate error of the centre's one-step aggregate on star graphs.
///
/// For each degree, builds a star with uniform random features in `[-1, 1]`,
/// perturbs it `trials` times and averages
/// `max_i |calibrate(x′)_centre,i − calibrate(x)_centre,i|`.
pub fn star_error_trend(
    degrees: &[usize],
    mech: &MechanismConfig,
    trials: usize,
    seed: u64,
) -> Result<Vec<TrendPoint>> {
    let cal = CalibrationConfig::new(1)?;
    degrees
        .iter()
        .map(|&deg| {
            let n = deg + 1;
            let d = mech.d;
            let mut rng = stream(seed, Stream::Trial, deg as u64);
            let data = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let x = Matrix::from_vec(n, d, data)?;
            let g = Graph::new((1..n).map(|v| (0, v)), x.clone(), vec![0; n], 1)?;
            let exact = calibrate(&x, &g, cal)?;
            let errs: Vec<f64> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let s = mix_seed(mix_seed(seed, deg as u64), t as u64);
                    let xp = perturb_matrix(&x, mech, s)?.matrix;
                    let h = calibrate(&xp, &g, cal)?;
                    Ok(h.row(0)
                        .iter()
                        .zip(exact.row(0))
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max))
                })
                .collect::<Result<_>>()?;
            Ok(TrendPoint {
                degree: deg,
                mean_max_error: mean(&errs),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> TheoryInputs {
        TheoryInputs {
            sigma2: 1.0,
            sigma2_atk: 4.0,
            deg_target: 4.0,
            n_atk_neighbors: 2.0,
            lambda: 0.5,
            q: 0.2,
            bound: 2.0,
            k: 2,
            n_fake: 10,
        }
    }

    #[test]
    fn variance_bias_hand_value() {
        let want = 25.0 / 1296.0 + 13.0 / 576.0 - 1.0 / 25.0;
        let got = variance_bias(&inputs()).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.00186).abs() < 5e-6);
    }

    #[test]
    fn variance_bias_vanishes_for_large_degree() {
        let inp = TheoryInputs {
            sigma2_atk: 1.0,
            n_atk_neighbors: 0.0,
            deg_target: 1e6,
            ..inputs()
        };
        assert!(variance_bias(&inp).unwrap().abs() < 1e-11);
    }

    #[test]
    fn delta_psi_hand_value() {
        let got = expected_delta_psi(&inputs()).unwrap();
        assert!((got - 80.0 / 0.9).abs() < 1e-12);
        let none = TheoryInputs {
            n_fake: 0,
            ..inputs()
        };
        assert_eq!(expected_delta_psi(&none).unwrap(), 0.0);
        let big = TheoryInputs {
            lambda: 5.0,
            ..inputs()
        };
        assert!(matches!(expected_delta_psi(&big), Err(Error::Domain(_))));
    }

    #[test]
    fn energy_examples() {
        let x = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let h = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let g = Graph::new([(0, 1)], x.clone(), vec![0, 0], 1).unwrap();
        assert_eq!(energy(&g, &x, &h, 1.0).unwrap(), 2.0);
        assert_eq!(energy(&g, &x, &x, 0.5).unwrap(), 0.5 * 4.0);
        let empty = Graph::new([], x.clone(), vec![0, 0], 1).unwrap();
        assert_eq!(energy(&empty, &x, &h, 3.0).unwrap(), 2.0);
    }

    #[test]
    fn crafted_variance_matches_support_average() {
        assert_eq!(crafted_variance(3.0, 1, 4), 9.0 / 4.0);
    }
}
