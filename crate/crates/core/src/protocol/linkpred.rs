//! Link prediction with a GNN encoder and dot-product decoder.
//!
//! Protocol: a fraction of the edges between genuine nodes is held out as
//! positives together with the same number of sampled non-edges as
//! negatives. Held-out pairs are split in half into validation and test
//! pairs. The encoder is trained on the remaining graph with binary
//! cross-entropy over its edges and a fixed set of sampled non-edges. Scores
//! are centered by the median validation score and thresholded at 0.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{dot, Matrix};
use crate::protocol::gnn::{GnnModel, Propagation};
use crate::protocol::train::{Adam, TrainConfig};
use crate::rng::{stream, SimRng, Stream};
use crate::stats::quantile_sorted;

/// Output width of the link-prediction encoder.
pub const LINK_EMBED_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPredSetup {
    pub holdout_frac: f64,
    /// Nodes `0..genuine` are eligible for held-out pairs; later ids (injected
    /// nodes) only appear in training.
    pub genuine: usize,
    /// Nodes whose held-out pairs form the targeted score.
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPredReport {
    pub accuracy: f64,
    pub targeted_accuracy: Option<f64>,
    pub test_pairs: usize,
    pub targeted_pairs: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub threshold: f64,
}

type Pair = (usize, usize);

fn ordered(u: usize, v: usize) -> Pair {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

fn sample_non_edges(
    g: &Graph,
    range: usize,
    count: usize,
    exclude: &HashSet<Pair>,
    rng: &mut SimRng,
) -> Result<Vec<Pair>> {
    let total = range * range.saturating_sub(1) / 2;
    let existing = g
        .edges()
        .iter()
        .filter(|&&(u, v)| u < range && v < range)
        .count();
    let available = total.saturating_sub(existing + exclude.len());
    if available < count {
        return Err(Error::invalid(format!(
            "graph too dense to sample {count} non-edges"
        )));
    }
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..range);
        let v = rng.random_range(0..range);
        if u == v {
            continue;
        }
        let p = ordered(u, v);
        if g.has_edge(u, v) || exclude.contains(&p) || !seen.insert(p) {
            continue;
        }
        out.push(p);
    }
    Ok(out)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE over labelled pairs and, optionally, its gradient w.r.t. `z`.
fn pair_loss(z: &Matrix, pos: &[Pair], neg: &[Pair], grad: Option<&mut Matrix>) -> f64 {
    let total = (pos.len() + neg.len()) as f64;
    let mut loss = 0.0;
    let mut grad = grad;
    for (pairs, y) in [(pos, 1.0), (neg, 0.0)] {
        for &(u, v) in pairs {
            let s = dot(z.row(u), z.row(v));
            loss += if y > 0.5 { softplus(-s) } else { softplus(s) };
            if let Some(gm) = grad.as_deref_mut() {
                let coef = (sigmoid(s) - y) / total;
                let (zu, zv) = (z.row(u).to_vec(), z.row(v).to_vec());
                for (gv, x) in gm.row_mut(u).iter_mut().zip(&zv) {
                    *gv += coef * x;
                }
                for (gv, x) in gm.row_mut(v).iter_mut().zip(&zu) {
                    *gv += coef * x;
                }
            }
        }
    }
    loss / total
}

/// Link prediction over all nodes with no targeted score.
pub fn link_prediction_eval(
    g: &Graph,
    embeddings: &Matrix,
    holdout_frac: f64,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<LinkPredReport> {
    let setup = LinkPredSetup {
        holdout_frac,
        genuine: g.num_nodes(),
        targets: Vec::new(),
    };
    link_prediction_eval_with(g, embeddings, &setup, tcfg, seed)
}

pub fn link_prediction_eval_with(
    g: &Graph,
    embeddings: &Matrix,
    setup: &LinkPredSetup,
    tcfg: &TrainConfig,
    seed: u64,
) -> Result<LinkPredReport> {
    tcfg.validate()?;
    let f = setup.holdout_frac;
    if !(f > 0.0 && f < 0.5) {
        return Err(Error::invalid(format!(
            "holdout fraction must lie in (0, 0.5), got {f}"
        )));
    }
    if embeddings.rows() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} nodes",
            embeddings.rows(),
            g.num_nodes()
        )));
    }
    let genuine = setup.genuine.min(g.num_nodes());
    let mut candidates: Vec<Pair> = g
        .edges()
        .iter()
        .copied()
        .filter(|&(u, v)| u < genuine && v < genuine)
        .collect();
    let n_hold = (f * candidates.len() as f64).round() as usize;
    if n_hold < 2 || n_hold >= candidates.len() {
        return Err(Error::invalid(format!(
            "graph with {} edges is too small to hold out a fraction {f}",
            candidates.len()
        )));
    }
    candidates.shuffle(&mut stream(seed, Stream::LinkSplit, 0));
    let held_pos: Vec<Pair> = candidates[..n_hold].to_vec();
    let held_set: HashSet<Pair> = held_pos.iter().copied().collect();
    let held_neg = sample_non_edges(
        g,
        genuine,
        n_hold,
        &HashSet::new(),
        &mut stream(seed, Stream::LinkSplit, 1),
    )?;

    let train_graph = g.with_edges(
        g.edges()
            .iter()
            .copied()
            .filter(|p| !held_set.contains(p)),
    )?;
    let train_pos: Vec<Pair> = train_graph.edges().to_vec();
    let exclude: HashSet<Pair> = held_neg.iter().copied().collect();
    let train_neg = sample_non_edges(
        &train_graph,
        g.num_nodes(),
        train_pos.len(),
        &exclude,
        &mut stream(seed, Stream::LinkSplit, 2),
    )?;
    // held-out positives are non-edges of the training graph; keep them out of
    // the negatives
    let train_neg: Vec<Pair> = train_neg
        .into_iter()
        .filter(|p| !held_set.contains(p))
        .collect();

    let half_pos = n_hold / 2;
    let (val_pos, test_pos) = held_pos.split_at(half_pos);
    let (val_neg, test_neg) = held_neg.split_at(half_pos);

    let mut rng = stream(tcfg.seed, Stream::Model, 1);
    let mut model = GnnModel::new(
        tcfg.arch,
        embeddings.cols(),
        tcfg.hidden,
        LINK_EMBED_DIM,
        tcfg.dropout,
        &mut rng,
    );
    let prop = Propagation::new(tcfg.arch, &train_graph);
    let u1 = prop.aggregate(embeddings);
    let encode = |m: &GnnModel| -> Result<Matrix> { Ok(m.forward(&prop, &u1, None)?.logits) };

    let mut best = model.clone();
    let mut best_val_loss = pair_loss(&encode(&model)?, val_pos, val_neg, None);
    let mut adam = Adam::new(tcfg, &model.params);
    for epoch in 1..=tcfg.max_epochs {
        let cache = model.forward(&prop, &u1, Some(&mut rng))?;
        let mut dz = Matrix::zeros(cache.logits.rows(), cache.logits.cols());
        let loss = pair_loss(&cache.logits, &train_pos, &train_neg, Some(&mut dz));
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "link loss is {loss} at epoch {epoch} (lr = {})",
                tcfg.lr
            )));
        }
        let grads = model.backward(&prop, &u1, &cache, &dz)?;
        adam.step(&mut model.params, &grads);
        let val = pair_loss(&encode(&model)?, val_pos, val_neg, None);
        if val < best_val_loss {
            best_val_loss = val;
            best = model.clone();
        }
    }

    let z = encode(&best)?;
    let score = |&(u, v): &Pair| dot(z.row(u), z.row(v));
    let mut val_scores: Vec<f64> = val_pos.iter().chain(val_neg).map(score).collect();
    val_scores.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&val_scores, 0.5);

    let targets: HashSet<usize> = setup.targets.iter().copied().collect();
    let (mut hits, mut total, mut t_hits, mut t_total) = (0usize, 0usize, 0usize, 0usize);
    for (pairs, positive) in [(test_pos, true), (test_neg, false)] {
        for p in pairs {
            let ok = (score(p) - threshold > 0.0) == positive;
            hits += usize::from(ok);
            total += 1;
            if targets.contains(&p.0) || targets.contains(&p.1) {
                t_hits += usize::from(ok);
                t_total += 1;
            }
        }
    }
    Ok(LinkPredReport {
        accuracy: hits as f64 / total as f64,
        targeted_accuracy: (t_total > 0).then(|| t_hits as f64 / t_total as f64),
        test_pairs: total,
        targeted_pairs: t_total,
        epochs_run: tcfg.max_epochs,
        best_val_loss,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cliques(size: usize) -> Graph {
        let n = 2 * size;
        let mut edges = Vec::new();
        for b in 0..2 {
            for i in 0..size {
                for j in i + 1..size {
                    edges.push((b * size + i, b * size + j));
                }
            }
        }
        let mut x = Matrix::zeros(n, 2);
        for v in 0..n {
            x.set(v, v / size, 1.0);
        }
        let labels = (0..n).map(|v| v / size).collect();
        Graph::new(edges, x, labels, 2).unwrap()
    }

    #[test]
    fn community_indicators_are_separable() {
        let g = two_cliques(15);
        let cfg = TrainConfig {
            max_epochs: 150,
            ..TrainConfig::default()
        };
        let r = link_prediction_eval(&g, &g.features, 0.1, &cfg, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn holdout_fraction_is_checked() {
        let g = two_cliques(5);
        let cfg = TrainConfig::default();
        assert!(link_prediction_eval(&g, &g.features, 0.5, &cfg, 0).is_err());
        assert!(link_prediction_eval(&g, &g.features, 0.0, &cfg, 0).is_err());
        let tiny = Graph::new([(0, 1), (1, 2)], Matrix::zeros(4, 1), vec![0; 4], 1).unwrap();
        assert!(matches!(
            link_prediction_eval(&tiny, &tiny.features, 0.2, &cfg, 0),
            Err(Error::InvalidArgument(_))
        ));
    }
}
