//! Detection-side analyses: homophily, community structure and feature outliers.

mod community;
mod homophily;
mod kmeans;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use community::{girvan_newman, modularity, CommunityResult, ModularityPoint, GN_MAX_NODES};
pub use homophily::{
    cosine, edge_homophily, histogram, histograms_to_csv, homophily_report, node_homophily,
    HistBin, HomophilyReport, DEFAULT_BINS,
};
pub use kmeans::{anomaly_scores, kmeans, KMeansFit, KMEANS_MAX_ITER, KMEANS_RESTARTS, KMEANS_TOL};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::stats::quantile_sorted;

pub const DEFAULT_FLAG_PERCENTILE: f64 = 99.0;

/// Communities smaller than this are treated as isolated.
pub const SMALL_COMMUNITY: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMethod {
    Kmeans,
    GirvanNewman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub method: DetectionMethod,
    pub flagged: Vec<usize>,
    /// `None` when no ground truth was supplied.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub parameters: BTreeMap<String, f64>,
}

/// Precision and recall of `flagged` against `truth`; an empty flag set has precision 0.
pub fn precision_recall(flagged: &[usize], truth: &[usize]) -> (f64, f64) {
    let truth: BTreeSet<usize> = truth.iter().copied().collect();
    let hits = flagged.iter().filter(|v| truth.contains(v)).count() as f64;
    let precision = if flagged.is_empty() {
        0.0
    } else {
        hits / flagged.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        hits / truth.len() as f64
    };
    (precision, recall)
}

/// Flags points whose distance to the nearest k-means centroid exceeds the
/// `flag_percentile`-th percentile of all distances.
pub fn kmeans_anomaly(
    features: &Matrix,
    k: usize,
    flag_percentile: f64,
    fakes: Option<&[usize]>,
    seed: u64,
) -> Result<DetectionReport> {
    if !(flag_percentile > 0.0 && flag_percentile < 100.0) {
        return Err(Error::invalid(format!(
            "flag percentile must lie in (0, 100), got {flag_percentile}"
        )));
    }
    let fit = kmeans(features, k, seed)?;
    let scores = anomaly_scores(features, &fit);
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = quantile_sorted(&sorted, flag_percentile / 100.0);
    let flagged: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > threshold).collect();
    let (precision, recall) = match fakes {
        Some(f) => {
            let (p, r) = precision_recall(&flagged, f);
            (Some(p), Some(r))
        }
        None => (None, None),
    };
    let parameters = BTreeMap::from([
        ("k".to_string(), k as f64),
        ("flag_percentile".to_string(), flag_percentile),
        ("threshold".to_string(), threshold),
        ("inertia".to_string(), fit.inertia),
    ]);
    Ok(DetectionReport {
        method: DetectionMethod::Kmeans,
        flagged,
        precision,
        recall,
        parameters,
    })
}

/// Flags nodes that Girvan–Newman places in communities smaller than
/// [`SMALL_COMMUNITY`]; recall is the fraction of fakes isolated this way.
pub fn gn_detection(
    g: &Graph,
    max_communities: Option<usize>,
    fakes: Option<&[usize]>,
) -> Result<(DetectionReport, CommunityResult)> {
    let result = girvan_newman(g, max_communities)?;
    let sizes = result.sizes();
    let flagged: Vec<usize> = (0..g.num_nodes())
        .filter(|&v| sizes[result.assignment[v]] < SMALL_COMMUNITY)
        .collect();
    let (precision, recall) = match fakes {
        Some(f) => {
            let (p, r) = precision_recall(&flagged, f);
            (Some(p), Some(r))
        }
        None => (None, None),
    };
    let mut parameters = BTreeMap::from([
        ("communities".to_string(), result.communities as f64),
        ("modularity".to_string(), result.modularity),
        ("edges_removed".to_string(), result.edges_removed as f64),
    ]);
    if let Some(m) = max_communities {
        parameters.insert("max_communities".to_string(), m as f64);
    }
    Ok((
        DetectionReport {
            method: DetectionMethod::GirvanNewman,
            flagged,
            precision,
            recall,
            parameters,
        },
        result,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_recall_edges() {
        assert_eq!(precision_recall(&[], &[1, 2]), (0.0, 0.0));
        assert_eq!(precision_recall(&[1, 5], &[1, 2]), (0.5, 0.5));
    }

    #[test]
    fn outlier_is_flagged() {
        let mut rows: Vec<Vec<f64>> = (0..199).map(|i| vec![(i % 7) as f64 * 0.01, 0.0]).collect();
        rows.push(vec![50.0, 50.0]);
        let x = Matrix::from_rows(&rows).unwrap();
        let r = kmeans_anomaly(&x, 1, 99.0, Some(&[199]), 3).unwrap();
        assert!(r.flagged.contains(&199));
        assert_eq!(r.recall, Some(1.0));
        assert!(kmeans_anomaly(&x, 1, 100.0, None, 3).is_err());
    }
}
