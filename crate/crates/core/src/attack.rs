//! Fake-node injection: target selection, extreme-value feature crafting,
//! cyclic matching and degree-preserving inner links.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ldp::{MechanismConfig, MechanismKind, PmParams, SwParams};
use crate::matrix::Matrix;
use crate::rng::{stream, SimRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Diverse,
    Identical,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Diverse => "diverse",
            Strategy::Identical => "identical",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(Strategy::Random),
            "diverse" => Ok(Strategy::Diverse),
            "identical" => Ok(Strategy::Identical),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

/// Which closed form defines the extreme value `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    /// Literal per-mechanism bounds (`d·s` for PM, `b` for SW).
    Paper,
    /// Bounds of the reported values after `d/m` scaling.
    Algorithm1,
}

impl fmt::Display for BoundMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BoundMode::Paper => "paper",
            BoundMode::Algorithm1 => "algorithm1",
        })
    }
}

impl FromStr for BoundMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(BoundMode::Paper),
            "algorithm1" | "alg1" => Ok(BoundMode::Algorithm1),
            other => Err(Error::Config(format!("unknown bound mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Targets as a fraction of genuine nodes.
    pub eta1: f64,
    /// Fake nodes per target.
    pub eta2: f64,
    pub strategy: Strategy,
    pub bound_mode: BoundMode,
    /// Use the SW output edge `b + 1` instead of `b`.
    #[serde(default)]
    pub sw_full_range: bool,
    /// Draw targets from the test mask only.
    #[serde(default)]
    pub targets_from_test: bool,
    /// Keep fake nodes out of the training mask.
    #[serde(default)]
    pub fakes_unlabeled: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            eta1: 0.09,
            eta2: 0.8,
            strategy: Strategy::Identical,
            bound_mode: BoundMode::Algorithm1,
            sw_full_range: false,
            targets_from_test: false,
            fakes_unlabeled: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta1 <= 1.0) {
            return Err(Error::Config(format!("eta1 must lie in (0, 1], got {}", self.eta1)));
        }
        if !(self.eta2 > 0.0 && self.eta2 <= 1.0) {
            return Err(Error::Config(format!("eta2 must lie in (0, 1], got {}", self.eta2)));
        }
        Ok(())
    }
}

/// Everything needed to build and replay a poisoned graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub n_genuine: usize,
    /// Targets in selection order; position `j` (0-based) is index `j + 1`.
    pub targets: Vec<usize>,
    /// Fake node ids `n_genuine..n_genuine + |fakes|`.
    pub fakes: Vec<usize>,
    /// `(target, fake)` pairs, one per target.
    pub matching_edges: Vec<(usize, usize)>,
    pub inner_edges: Vec<(usize, usize)>,
    pub q: f64,
    #[serde(rename = "B")]
    pub bound: f64,
    pub crafted_features: Matrix,
    pub supports: Vec<Vec<usize>>,
    pub fake_labels: Vec<usize>,
    pub strategy: Strategy,
    pub bound_mode: BoundMode,
    pub fakes_unlabeled: bool,
    pub seed: u64,
}

impl AttackPlan {
    /// A plan that injects nothing.
    pub fn empty(n_genuine: usize, d: usize) -> Self {
        AttackPlan {
            n_genuine,
            targets: Vec::new(),
            fakes: Vec::new(),
            matching_edges: Vec::new(),
            inner_edges: Vec::new(),
            q: 0.0,
            bound: 0.0,
            crafted_features: Matrix::zeros(0, d),
            supports: Vec::new(),
            fake_labels: Vec::new(),
            strategy: Strategy::Identical,
            bound_mode: BoundMode::Algorithm1,
            fakes_unlabeled: false,
            seed: 0,
        }
    }

    pub fn n_fake(&self) -> usize {
        self.fakes.len()
    }

    /// Fake ids that should join the training set.
    pub fn training_fakes(&self) -> &[usize] {
        if self.fakes_unlabeled {
            &[]
        } else {
            &self.fakes
        }
    }
}

/// Uniform sample of `round(eta1·n)` nodes in sampled order.
pub fn select_targets(n: usize, eta1: f64, seed: u64) -> Result<Vec<usize>> {
    let pool: Vec<usize> = (0..n).collect();
    select_targets_in(&pool, target_count(n, eta1)?, seed)
}

pub fn target_count(n: usize, eta1: f64) -> Result<usize> {
    if !(eta1 > 0.0 && eta1 <= 1.0) {
        return Err(Error::invalid(format!("eta1 must lie in (0, 1], got {eta1}")));
    }
    let k = (eta1 * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::invalid(format!(
            "eta1={eta1} selects no targets among {n} nodes"
        )));
    }
    Ok(k)
}

/// Uniform sample without replacement of `count` nodes from `pool`.
pub fn select_targets_in(pool: &[usize], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::invalid("target set would be empty"));
    }
    if count > pool.len() {
        return Err(Error::invalid(format!(
            "{count} targets requested from a pool of {}",
            pool.len()
        )));
    }
    let mut rng = stream(seed, Stream::Targets, 0);
    Ok(index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

/// `|V_atk| = round(eta2·|V_t|)` clamped to `[2, |V_t|]`.
pub fn fake_count(n_targets: usize, eta2: f64) -> Result<usize> {
    if n_targets < 2 {
        return Err(Error::Constraint(format!(
            "1 < |V_atk| <= |V_t| is unsatisfiable with |V_t| = {n_targets}"
        )));
    }
    Ok(((eta2 * n_targets as f64).round() as usize).clamp(2, n_targets))
}

/// Largest magnitude a crafted report may take under `cfg`.
pub fn compute_extreme_bound(
    cfg: &MechanismConfig,
    mode: BoundMode,
    sw_full_range: bool,
) -> Result<f64> {
    cfg.validate()?;
    let eps_bar = cfg.eps_bar();
    let d = cfg.d as f64;
    Ok(match cfg.kind {
        MechanismKind::Pm => {
            let s = PmParams::new(eps_bar).s;
            match mode {
                BoundMode::Paper => d * s,
                BoundMode::Algorithm1 => cfg.scale() * s,
            }
        }
        MechanismKind::Mb => {
            let e = eps_bar.exp();
            let ratio = if e.is_infinite() {
                1.0
            } else {
                (e + 1.0) / eps_bar.exp_m1()
            };
            d * (cfg.beta - cfg.alpha) / (2.0 * cfg.m() as f64) * ratio + (cfg.alpha + cfg.beta) / 2.0
        }
        MechanismKind::Sw => {
            let b = SwParams::new(eps_bar)?.b;
            let edge = if sw_full_range { b + 1.0 } else { b };
            match mode {
                BoundMode::Paper => edge,
                BoundMode::Algorithm1 if cfg.sw_raw => edge,
                BoundMode::Algorithm1 => cfg.scale() * edge,
            }
        }
    })
}

/// Crafted reports: `m` coordinates per row at `±B`, zeros elsewhere.
pub fn craft_fake_features(
    n_fake: usize,
    d: usize,
    m: usize,
    bound: f64,
    strategy: Strategy,
    rng: &mut SimRng,
) -> Result<(Matrix, Vec<Vec<usize>>)> {
    if m == 0 || m > d {
        return Err(Error::invalid(format!("m={m} outside 1..={d}")));
    }
    let supports: Vec<Vec<usize>> = match strategy {
        Strategy::Random => (0..n_fake)
            .map(|_| sorted(index::sample(rng, d, m).into_vec()))
            .collect(),
        Strategy::Identical => {
            let s = sorted(index::sample(rng, d, m).into_vec());
            vec![s; n_fake]
        }
        Strategy::Diverse => {
            if m * n_fake > d {
                return Err(Error::invalid(format!(
                    "diverse supports need m·|V_atk| <= d, got {m}·{n_fake} > {d}"
                )));
            }
            let pool = index::sample(rng, d, m * n_fake).into_vec();
            pool.chunks(m).map(|c| sorted(c.to_vec())).collect()
        }
    };
    let mut x = Matrix::zeros(n_fake, d);
    for (r, support) in supports.iter().enumerate() {
        for &j in support {
            let sign = if rng.random::<f64>() > 0.5 { -1.0 } else { 1.0 };
            x.set(r, j, sign * bound);
        }
    }
    Ok((x, supports))
}

fn sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v
}

/// 1-based fake index matched to 1-based target index `j`.
pub fn cyclic_fake_index(j: usize, n_fake: usize) -> usize {
    (j % n_fake) + 1
}

/// One `(target, fake id)` edge per target; fake index `k` has id `first_fake + k - 1`.
pub fn cyclic_match(targets: &[usize], n_fake: usize, first_fake: usize) -> Vec<(usize, usize)> {
    assert!(n_fake >= 1, "cyclic matching needs at least one fake node");
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, first_fake + cyclic_fake_index(i + 1, n_fake) - 1))
        .collect()
}

/// Inner-link probability that keeps the expected average degree unchanged.
pub fn compute_inner_link_prob(avg_deg: f64, n_targets: usize, n_fake: usize) -> Result<f64> {
    let (nt, nf) = (n_targets as f64, n_fake as f64);
    if !(avg_deg >= 2.0) {
        return Err(Error::Constraint(format!(
            "<d_orig> >= 2 violated: average degree is {avg_deg}"
        )));
    }
    if !(n_fake > 1 && n_fake <= n_targets) {
        return Err(Error::Constraint(format!(
            "1 < |V_atk| <= |V_t| violated: |V_atk| = {n_fake}, |V_t| = {n_targets}"
        )));
    }
    let min_targets = (avg_deg + 1.0).powi(2) / 8.0;
    if nt < min_targets {
        return Err(Error::Constraint(format!(
            "|V_t| >= (<d_orig> + 1)^2 / 8 violated: {n_targets} < {min_targets}"
        )));
    }
    let min_fake = 2.0 * nt / avg_deg;
    if !(nf > min_fake) {
        return Err(Error::Constraint(format!(
            "|V_atk| > 2|V_t| / <d_orig> violated (q would be <= 0): {n_fake} <= {min_fake}"
        )));
    }
    let q = (avg_deg - 2.0 * nt / nf) / (nf - 1.0);
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Constraint(format!("0 < q <= 1 violated: q = {q}")));
    }
    Ok(q)
}

/// Independent Bernoulli(q) edge per unordered pair of local fake indices.
pub fn sample_inner_links(n_fake: usize, q: f64, rng: &mut SimRng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n_fake {
        for j in i + 1..n_fake {
            if rng.random::<f64>() < q {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Targets `plan_attack` would pick for a graph of `n` genuine nodes.
pub fn choose_targets(n: usize, cfg: &AttackConfig, test_pool: Option<&[usize]>) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n_targets = target_count(n, cfg.eta1)?;
    match (cfg.targets_from_test, test_pool) {
        (true, Some(pool)) => select_targets_in(pool, n_targets, cfg.seed),
        (true, None) => Err(Error::Config(
            "targets_from_test requires a test mask".into(),
        )),
        (false, _) => select_targets_in(&(0..n).collect::<Vec<_>>(), n_targets, cfg.seed),
    }
}

/// Builds the full plan against the original graph `g`.
///
/// `test_pool` restricts targets when `cfg.targets_from_test` is set.
pub fn plan_attack(
    g: &Graph,
    mech: &MechanismConfig,
    cfg: &AttackConfig,
    test_pool: Option<&[usize]>,
) -> Result<AttackPlan> {
    let n = g.num_nodes();
    let targets = choose_targets(n, cfg, test_pool)?;
    let n_fake = fake_count(targets.len(), cfg.eta2)?;
    let q = compute_inner_link_prob(g.avg_degree(), targets.len(), n_fake)?;
    let bound = compute_extreme_bound(mech, cfg.bound_mode, cfg.sw_full_range)?;
    let (crafted_features, supports) = craft_fake_features(
        n_fake,
        mech.d,
        mech.m(),
        bound,
        cfg.strategy,
        &mut stream(cfg.seed, Stream::Craft, 0),
    )?;
    let fakes: Vec<usize> = (n..n + n_fake).collect();
    let matching_edges = cyclic_match(&targets, n_fake, n);
    let inner_edges = sample_inner_links(n_fake, q, &mut stream(cfg.seed, Stream::InnerLinks, 0))
        .into_iter()
        .map(|(i, j)| (n + i, n + j))
        .collect();
    let mut label_rng = stream(cfg.seed, Stream::FakeLabels, 0);
    let fake_labels = (0..n_fake)
        .map(|_| label_rng.random_range(0..g.num_classes))
        .collect();
    Ok(AttackPlan {
        n_genuine: n,
        targets,
        fakes,
        matching_edges,
        inner_edges,
        q,
        bound,
        crafted_features,
        supports,
        fake_labels,
        strategy: cfg.strategy,
        bound_mode: cfg.bound_mode,
        fakes_unlabeled: cfg.fakes_unlabeled,
        seed: cfg.seed,
    })
}

/// Poisoned graph: genuine rows carry `features` (the server-side reports),
/// fake rows carry the crafted reports.
pub fn poison_graph(g: &Graph, features: &Matrix, plan: &AttackPlan) -> Result<Graph> {
    let n = g.num_nodes();
    if plan.n_genuine != n {
        return Err(Error::Internal(format!(
            "plan built for {} nodes applied to a graph with {n}",
            plan.n_genuine
        )));
    }
    if features.rows() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {n} nodes",
            features.rows()
        )));
    }
    let n_fake = plan.n_fake();
    if plan.fakes.iter().enumerate().any(|(i, &f)| f != n + i) {
        return Err(Error::Internal(
            "fake node ids collide with genuine ids".into(),
        ));
    }
    if plan.crafted_features.rows() != n_fake || plan.fake_labels.len() != n_fake {
        return Err(Error::Internal("plan rows do not match its fake count".into()));
    }
    if n_fake > 0 && plan.crafted_features.cols() != features.cols() {
        return Err(Error::DimensionMismatch(format!(
            "crafted rows have {} columns, features have {}",
            plan.crafted_features.cols(),
            features.cols()
        )));
    }
    let total = n + n_fake;
    let genuine_edge = plan
        .matching_edges
        .iter()
        .chain(&plan.inner_edges)
        .find(|&&(u, v)| (u < n && v < n) || u >= total || v >= total);
    if let Some(e) = genuine_edge {
        return Err(Error::Internal(format!("malicious edge {e:?} is invalid")));
    }
    let x = if n_fake == 0 {
        features.clone()
    } else {
        features.vstack(&plan.crafted_features)?
    };
    let mut labels = g.labels.clone();
    labels.extend(&plan.fake_labels);
    let edges = g
        .edges()
        .iter()
        .chain(&plan.matching_edges)
        .chain(&plan.inner_edges)
        .copied();
    let mut out = Graph::new(edges, x, labels, g.num_classes)?;
    out.alpha = g.alpha;
    out.beta = g.beta;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_count_examples() {
        assert_eq!(target_count(2708, 0.09).unwrap(), 244);
        let all = select_targets(10, 1.0, 3).unwrap();
        assert_eq!(sorted(all.clone()), (0..10).collect::<Vec<_>>());
        assert_eq!(select_targets(10, 1.0, 3).unwrap(), all);
        assert!(select_targets(10, 0.01, 3).is_err());
    }

    #[test]
    fn bound_examples() {
        let pm = MechanismConfig::new(MechanismKind::Pm, 2.0, 4).with_m(1);
        let e = 1f64.exp();
        let b = compute_extreme_bound(&pm, BoundMode::Paper, false).unwrap();
        assert!((b - 4.0 * (e + 1.0) / (e - 1.0)).abs() < 1e-12);
        assert!((b - 8.65580).abs() < 5e-5);
        let mb = MechanismConfig::new(MechanismKind::Mb, 1.0, 4)
            .with_m(1)
            .with_domain(0.0, 1.0);
        let b = compute_extreme_bound(&mb, BoundMode::Paper, false).unwrap();
        assert!((b - 4.82790).abs() < 1e-5);
        let sw = MechanismConfig::new(MechanismKind::Sw, 1.0, 4).with_m(1);
        let b = compute_extreme_bound(&sw, BoundMode::Paper, false).unwrap();
        assert!((b - 1.0 / (e * (e - 2.0))).abs() < 1e-12);
        let full = compute_extreme_bound(&sw, BoundMode::Paper, true).unwrap();
        assert!((full - b - 1.0).abs() < 1e-12);
        let alg = compute_extreme_bound(&sw, BoundMode::Algorithm1, false).unwrap();
        assert!((alg - 4.0 * b).abs() < 1e-12);
    }

    #[test]
    fn pm_bound_modes_differ_when_m_exceeds_one() {
        let pm = MechanismConfig::new(MechanismKind::Pm, 6.0, 4).with_m(2);
        let s = PmParams::new(3.0).s;
        assert!((compute_extreme_bound(&pm, BoundMode::Paper, false).unwrap() - 4.0 * s).abs() < 1e-12);
        assert!(
            (compute_extreme_bound(&pm, BoundMode::Algorithm1, false).unwrap() - 2.0 * s).abs() < 1e-12
        );
    }

    #[test]
    fn sw_bound_at_tiny_budget_is_numeric_error() {
        let sw = MechanismConfig::new(MechanismKind::Sw, 1e-30, 4);
        assert!(matches!(
            compute_extreme_bound(&sw, BoundMode::Paper, false),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn crafting_strategies() {
        let mut rng = stream(1, Stream::Craft, 0);
        let (x, s) = craft_fake_features(3, 6, 2, 5.0, Strategy::Identical, &mut rng).unwrap();
        assert!(s.iter().all(|r| r == &s[0]));
        for (r, sup) in s.iter().enumerate() {
            for j in 0..6 {
                let v = x.get(r, j);
                if sup.contains(&j) {
                    assert_eq!(v.abs(), 5.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        assert!(matches!(
            craft_fake_features(4, 6, 2, 1.0, Strategy::Diverse, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        let (_, s) = craft_fake_features(3, 6, 2, 1.0, Strategy::Diverse, &mut rng).unwrap();
        let mut all: Vec<usize> = s.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 6);
    }

    #[test]
    fn cyclic_match_examples() {
        let idx: Vec<usize> = (1..=5).map(|j| cyclic_fake_index(j, 2)).collect();
        assert_eq!(idx, vec![2, 1, 2, 1, 2]);
        let e = cyclic_match(&[7, 8, 9], 1, 100);
        assert!(e.iter().all(|&(_, f)| f == 100));
        let e = cyclic_match(&[0, 1, 2, 3], 4, 10);
        let mut fakes: Vec<usize> = e.iter().map(|&(_, f)| f).collect();
        fakes.sort_unstable();
        assert_eq!(fakes, vec![10, 11, 12, 13]);
    }

    #[test]
    fn inner_link_prob_examples() {
        assert!((compute_inner_link_prob(4.0, 8, 5).unwrap() - 0.2).abs() < 1e-15);
        let q = compute_inner_link_prob(3.90, 243, 194).unwrap();
        assert!((q - (3.90 - 486.0 / 194.0) / 193.0).abs() < 1e-15);
        assert!((q - 0.00723).abs() < 1e-5);
        assert!(matches!(
            compute_inner_link_prob(4.0, 8, 4),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn constraint_errors_name_the_inequality() {
        let msg = |r: Result<f64>| r.unwrap_err().to_string();
        assert!(msg(compute_inner_link_prob(1.5, 8, 5)).contains("<d_orig> >= 2"));
        assert!(msg(compute_inner_link_prob(4.0, 8, 1)).contains("1 < |V_atk| <= |V_t|"));
        assert!(msg(compute_inner_link_prob(4.0, 8, 9)).contains("1 < |V_atk| <= |V_t|"));
        assert!(msg(compute_inner_link_prob(9.0, 10, 9)).contains("(<d_orig> + 1)^2 / 8"));
        assert!(msg(compute_inner_link_prob(4.0, 8, 3)).contains("2|V_t| / <d_orig>"));
    }

    #[test]
    fn complete_inner_graph_at_q_one() {
        let mut rng = stream(0, Stream::InnerLinks, 0);
        assert_eq!(sample_inner_links(6, 1.0, &mut rng).len(), 15);
    }

    #[test]
    fn empty_plan_leaves_graph_unchanged() {
        let x = Matrix::from_rows(&[vec![0.1], vec![0.2], vec![0.3]]).unwrap();
        let g = Graph::new([(0, 1), (1, 2)], x.clone(), vec![0, 1, 0], 2).unwrap();
        let p = poison_graph(&g, &x, &AttackPlan::empty(3, 1)).unwrap();
        assert_eq!(p, g);
    }

    #[test]
    fn edge_accounting() {
        let x = Matrix::zeros(8, 2);
        let g = Graph::new((0..7).map(|i| (i, i + 1)), x.clone(), vec![0; 8], 2).unwrap();
        let mut plan = AttackPlan::empty(8, 2);
        plan.targets = vec![0, 2, 4, 6, 7];
        plan.fakes = vec![8, 9];
        plan.matching_edges = cyclic_match(&plan.targets, 2, 8);
        plan.inner_edges = vec![(8, 9)];
        plan.crafted_features = Matrix::zeros(2, 2);
        plan.fake_labels = vec![1, 0];
        let p = poison_graph(&g, &x, &plan).unwrap();
        assert_eq!(p.num_nodes(), 10);
        assert_eq!(p.num_edges(), 7 + 5 + 1);
        plan.fakes = vec![7, 9];
        assert!(matches!(poison_graph(&g, &x, &plan), Err(Error::Internal(_))));
    }
}
