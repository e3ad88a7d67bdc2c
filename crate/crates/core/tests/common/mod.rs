//! Checks shared by the property tests and the acceptance target.
#![allow(dead_code)]

use ldp_poison::attack::{plan_attack, poison_graph, AttackConfig};
use ldp_poison::graph::{generate_featured_sbm, Graph, SbmParams};
use ldp_poison::ldp::{
    mb_prob_plus, perturb_mb, perturb_pm, rectify_mb, MechanismConfig, MechanismKind, PmParams,
    SwParams,
};
use ldp_poison::matrix::Matrix;
use ldp_poison::protocol::{cross_entropy, Arch, GnnModel, Propagation};
use ldp_poison::rng::{mix_seed, stream, Stream};
use rayon::prelude::*;

pub const RATIO_SLACK: f64 = 1e-12;

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Integral of a piecewise-constant density over `[lo, hi]` given its breakpoints.
fn piecewise_integral(density: impl Fn(f64) -> f64, lo: f64, hi: f64, breaks: &[f64]) -> f64 {
    let mut pts: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|b| *b > lo && *b < hi)
        .collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.windows(2)
        .map(|w| (w[1] - w[0]) * density(0.5 * (w[0] + w[1])))
        .sum()
}

/// Maximum `|∫ density - 1|` and the worst density ratio relative to `e^ε̄`
/// for PM and SW on a 20×20×50 grid.
#[derive(Debug, Clone, Copy)]
pub struct DensityCheck {
    pub max_integral_error: f64,
    /// `max p(c|x) / (e^ε̄ p(c|x'))`; at most 1 when the bound holds.
    pub max_ratio_excess: f64,
    pub mb_ratio_excess: f64,
}

pub fn density_checks(eps_bars: &[f64]) -> DensityCheck {
    let xs = grid(-1.0, 1.0, 20);
    let mut max_integral_error: f64 = 0.0;
    let mut max_ratio_excess: f64 = 0.0;
    let mut mb_ratio_excess: f64 = 0.0;
    for &eb in eps_bars {
        let pm = PmParams::new(eb);
        let sw = SwParams::new(eb).expect("sw params");
        let bound = eb.exp();
        for &x in &xs {
            let ip = piecewise_integral(|c| pm.density(x, c), -pm.s, pm.s, &[pm.l(x), pm.r(x)]);
            let edge = sw.b + 1.0;
            let is = piecewise_integral(|c| sw.density(x, c), -edge, edge, &[x - sw.b, x + sw.b]);
            max_integral_error = max_integral_error.max((ip - 1.0).abs()).max((is - 1.0).abs());
        }
        let pm_cs = grid(-pm.s, pm.s, 50);
        let sw_cs = grid(-sw.b - 1.0, sw.b + 1.0, 50);
        for &x in &xs {
            for &x2 in &xs {
                for &c in &pm_cs {
                    let r = pm.density(x, c) / (bound * pm.density(x2, c));
                    max_ratio_excess = max_ratio_excess.max(r);
                }
                for &c in &sw_cs {
                    let r = sw.density(x, c) / (bound * sw.density(x2, c));
                    max_ratio_excess = max_ratio_excess.max(r);
                }
            }
        }
        let p_hi = mb_prob_plus(1.0, eb, -1.0, 1.0);
        let p_lo = mb_prob_plus(-1.0, eb, -1.0, 1.0);
        let worst = (p_hi / p_lo).max((1.0 - p_lo) / (1.0 - p_hi));
        mb_ratio_excess = mb_ratio_excess.max(worst / bound);
    }
    DensityCheck {
        max_integral_error,
        max_ratio_excess,
        mb_ratio_excess,
    }
}

/// One unbiasedness cell: mechanism, input, budget, MC mean and its error in SE units.
#[derive(Debug, Clone)]
pub struct BiasCell {
    pub kind: MechanismKind,
    pub x: f64,
    pub epsilon: f64,
    pub mean: f64,
    pub z: f64,
}

pub const BIAS_XS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
pub const BIAS_EPS: [f64; 3] = [0.1, 1.0, 4.0];

/// MC mean of scalar PM and rectified MB reports over `draws` samples per cell.
pub fn unbiasedness(draws: usize, seed: u64) -> Vec<BiasCell> {
    let mut cells = Vec::new();
    for kind in [MechanismKind::Pm, MechanismKind::Mb] {
        for &epsilon in &BIAS_EPS {
            for &x in &BIAS_XS {
                cells.push((kind, epsilon, x));
            }
        }
    }
    cells
        .into_par_iter()
        .enumerate()
        .map(|(i, (kind, epsilon, x))| {
            let cfg = MechanismConfig::new(kind, epsilon, 1).with_m(1);
            let mut rng = stream(seed, Stream::Trial, i as u64);
            let samples: Vec<f64> = (0..draws)
                .map(|_| match kind {
                    MechanismKind::Pm => perturb_pm(x, epsilon, &mut rng).unwrap(),
                    _ => rectify_mb(perturb_mb(x, epsilon, -1.0, 1.0, &mut rng).unwrap(), &cfg),
                })
                .collect();
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            BiasCell {
                kind,
                x,
                epsilon,
                mean,
                z: (mean - x).abs() / se,
            }
        })
        .collect()
}

/// A 20-node random graph with 5 features and 3 classes.
pub fn small_graph(seed: u64) -> Graph {
    let p = SbmParams {
        nodes: 20,
        classes: 3,
        dims: 5,
        p_in: 0.4,
        p_out: 0.1,
        signal: 1.0,
    };
    generate_featured_sbm(&p, seed).expect("small graph")
}

/// Largest per-tensor relative error `‖g - ĝ‖ / (‖g‖ + ‖ĝ‖)` between the
/// analytic cross-entropy gradient and central differences.
pub fn gradient_check(arch: Arch, seed: u64, step: f64) -> f64 {
    let g = small_graph(seed);
    let prop = Propagation::new(arch, &g);
    let u1 = prop.aggregate(&g.features);
    let mut rng = stream(seed, Stream::Model, 0);
    let mut model = GnnModel::new(arch, g.dims(), 8, g.num_classes, 0.0, &mut rng);
    // Non-zero biases so the check covers them.
    for p in [1, 3] {
        for v in model.params[p].as_mut_slice() {
            *v = 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
    }
    let rows: Vec<usize> = (0..g.num_nodes()).collect();
    let loss = |m: &GnnModel| {
        let cache = m.forward(&prop, &u1, None).unwrap();
        cross_entropy(&cache.logits, &g.labels, &rows).0
    };
    let cache = model.forward(&prop, &u1, None).unwrap();
    let (_, dlogits) = cross_entropy(&cache.logits, &g.labels, &rows);
    let analytic = model.backward(&prop, &u1, &cache, &dlogits).unwrap();
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        let mut num = Matrix::zeros(grad.rows(), grad.cols());
        for i in 0..grad.as_slice().len() {
            let orig = model.params[p].as_slice()[i];
            model.params[p].as_mut_slice()[i] = orig + step;
            let up = loss(&model);
            model.params[p].as_mut_slice()[i] = orig - step;
            let down = loss(&model);
            model.params[p].as_mut_slice()[i] = orig;
            num.as_mut_slice()[i] = (up - down) / (2.0 * step);
        }
        let diff: f64 = grad
            .as_slice()
            .iter()
            .zip(num.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = grad.frobenius_sq().sqrt() + num.frobenius_sq().sqrt();
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Graph used for degree preservation: avg degree around 8.
pub fn degree_graph() -> Graph {
    let p = SbmParams {
        nodes: 400,
        classes: 4,
        dims: 8,
        p_in: 0.06,
        p_out: 0.007,
        signal: 1.0,
    };
    generate_featured_sbm(&p, 11).expect("sbm")
}

/// Mean average degree of the poisoned graph over `seeds` attack seeds.
pub fn poisoned_avg_degree(g: &Graph, cfg: &AttackConfig, seeds: usize) -> f64 {
    let mech = MechanismConfig::new(MechanismKind::Pm, 1.0, g.dims());
    let degs: Vec<f64> = (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let c = AttackConfig {
                seed: mix_seed(s, 3),
                ..*cfg
            };
            let plan = plan_attack(g, &mech, &c, None).unwrap();
            poison_graph(g, &g.features, &plan).unwrap().avg_degree()
        })
        .collect();
    degs.iter().sum::<f64>() / degs.len() as f64
}
