use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::matrix::{dot, Matrix};
use crate::stats::ks_statistic;

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// `h_v = cos(r_v, x_v)` with `r_v = Σ_{j∈N(v)} x_j / (√d_j √d_v)`; isolated nodes score 0.
pub fn node_homophily(g: &Graph, features: &Matrix) -> Vec<f64> {
    let mut r = vec![0.0; features.cols()];
    (0..g.num_nodes())
        .map(|v| {
            if g.degree(v) == 0 {
                return 0.0;
            }
            r.iter_mut().for_each(|e| *e = 0.0);
            let sv = (g.degree(v) as f64).sqrt();
            for &j in g.neighbors(v) {
                let w = 1.0 / ((g.degree(j) as f64).sqrt() * sv);
                for (e, &x) in r.iter_mut().zip(features.row(j)) {
                    *e += w * x;
                }
            }
            cosine(&r, features.row(v))
        })
        .collect()
}

/// Cosine of the endpoint features, in the graph's edge order.
pub fn edge_homophily(g: &Graph, features: &Matrix) -> Vec<f64> {
    g.edges()
        .iter()
        .map(|&(u, v)| cosine(features.row(u), features.row(v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub mass: f64,
}

/// Normalised histogram over `[-1, 1]` with equal-width bins; 1 lands in the last bin.
pub fn histogram(scores: &[f64], bins: usize) -> Vec<HistBin> {
    let bins = bins.max(1);
    let width = 2.0 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in scores {
        let i = (((s + 1.0) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total = scores.len().max(1) as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistBin {
            bin_low: -1.0 + i as f64 * width,
            bin_high: if i + 1 == bins {
                1.0
            } else {
                -1.0 + (i + 1) as f64 * width
            },
            mass: c as f64 / total,
        })
        .collect()
}

pub const DEFAULT_BINS: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomophilyReport {
    pub node_scores_pre: Vec<f64>,
    pub node_scores_post: Vec<f64>,
    pub edge_scores_pre: Vec<f64>,
    pub edge_scores_post: Vec<f64>,
    pub node_hist_pre: Vec<HistBin>,
    pub node_hist_post: Vec<HistBin>,
    pub edge_hist_pre: Vec<HistBin>,
    pub edge_hist_post: Vec<HistBin>,
    pub ks_node: f64,
    pub ks_edge: f64,
}

/// Node and edge homophily before and after an attack, with KS distances.
pub fn homophily_report(
    pre: &Graph,
    pre_features: &Matrix,
    post: &Graph,
    post_features: &Matrix,
    bins: usize,
) -> HomophilyReport {
    let node_scores_pre = node_homophily(pre, pre_features);
    let node_scores_post = node_homophily(post, post_features);
    let edge_scores_pre = edge_homophily(pre, pre_features);
    let edge_scores_post = edge_homophily(post, post_features);
    HomophilyReport {
        node_hist_pre: histogram(&node_scores_pre, bins),
        node_hist_post: histogram(&node_scores_post, bins),
        edge_hist_pre: histogram(&edge_scores_pre, bins),
        edge_hist_post: histogram(&edge_scores_post, bins),
        ks_node: ks_statistic(&node_scores_pre, &node_scores_post),
        ks_edge: ks_statistic(&edge_scores_pre, &edge_scores_post),
        node_scores_pre,
        node_scores_post,
        edge_scores_pre,
        edge_scores_post,
    }
}

/// CSV with header `bin_low,bin_high,mass,phase`.
pub fn histograms_to_csv(pre: &[HistBin], post: Option<&[HistBin]>) -> String {
    let mut s = String::from("bin_low,bin_high,mass,phase\n");
    let phases = [("pre", Some(pre)), ("post", post)];
    for (phase, bins) in phases {
        for b in bins.unwrap_or(&[]) {
            s.push_str(&format!("{},{},{},{phase}\n", b.bin_low, b.bin_high, b.mass));
        }
    }
    s
}
