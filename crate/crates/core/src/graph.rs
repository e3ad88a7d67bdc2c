//! Undirected featured graphs: ingestion, export, synthetic generation and splits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{self, Stream};

/// Simple undirected graph with node features and class labels.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted; the neighbor lists
/// are sorted as well so every traversal is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Feature domain lower bound.
    pub alpha: f64,
    /// Feature domain upper bound.
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub nodes: usize,
    pub edges: usize,
    pub features: usize,
    pub classes: usize,
    pub avg_degree: f64,
}

/// Counts of input edges that were discarded while building a graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeCleanup {
    pub self_loops: usize,
    pub duplicates: usize,
}

impl Graph {
    /// Builds a graph, dropping self-loops and duplicate edges.
    pub fn new(
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        Self::with_cleanup(edges, features, labels, num_classes).map(|(g, _)| g)
    }

    pub fn with_cleanup(
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<(Self, EdgeCleanup)> {
        let n = labels.len();
        if features.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {n} labels",
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        let mut cleanup = EdgeCleanup::default();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                cleanup.self_loops += 1;
                continue;
            }
            if !set.insert((u.min(v), u.max(v))) {
                cleanup.duplicates += 1;
            }
        }
        let edges: Vec<(usize, usize)> = set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(u, v) in &edges {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let (alpha, beta) = value_range(&features);
        Ok((
            Graph {
                edges,
                neighbors,
                features,
                labels,
                num_classes,
                alpha,
                beta,
            },
            cleanup,
        ))
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn avg_degree(&self) -> f64 {
        if self.num_nodes() == 0 {
            return 0.0;
        }
        2.0 * self.num_edges() as f64 / self.num_nodes() as f64
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            nodes: self.num_nodes(),
            edges: self.num_edges(),
            features: self.dims(),
            classes: self.num_classes,
            avg_degree: self.avg_degree(),
        }
    }

    /// Same topology and labels with a different feature matrix.
    pub fn with_features(&self, features: Matrix) -> Result<Graph> {
        if features.rows() != self.num_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows for {} nodes",
                features.rows(),
                self.num_nodes()
            )));
        }
        let (alpha, beta) = (self.alpha, self.beta);
        Ok(Graph {
            features,
            alpha,
            beta,
            ..self.clone()
        })
    }

    /// Same nodes with a subset of the edges.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        let mut g = Graph::new(
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.num_classes,
        )?;
        g.alpha = self.alpha;
        g.beta = self.beta;
        Ok(g)
    }
}

fn value_range(m: &Matrix) -> (f64, f64) {
    let lo = m.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (-1.0, 1.0)
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

/// Parses an edge list: one `u v` pair per line, blank lines ignored.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read(path)?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, i + 1, "expected two node ids"));
        };
        let a = a
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {a:?}")))?;
        let b = b
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {b:?}")))?;
        edges.push((a, b));
    }
    Ok(edges)
}

/// Parses a header-less CSV of reals, one row per node.
pub fn read_features(path: &Path) -> Result<Matrix> {
    let text = read(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, i + 1, format!("bad real {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

/// Parses the `node_id,label` CSV. Node ids must cover `0..n` exactly once.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "node_id,label" => {}
        _ => return Err(parse_err(path, 1, "expected header \"node_id,label\"")),
    }
    let mut pairs = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((id, label)) = line.split_once(',') else {
            return Err(parse_err(path, i + 1, "expected node_id,label"));
        };
        let id: usize = id
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad node id {id:?}")))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad label {label:?}")))?;
        pairs.push((i + 1, id, label));
    }
    let n = pairs.len();
    let mut labels = vec![usize::MAX; n];
    for (line, id, label) in pairs {
        if id >= n {
            return Err(parse_err(
                path,
                line,
                format!("node id {id} leaves a gap (only {n} rows)"),
            ));
        }
        if labels[id] != usize::MAX {
            return Err(parse_err(path, line, format!("node id {id} listed twice")));
        }
        labels[id] = label;
    }
    Ok(labels)
}

/// Loads a graph from the three text files.
pub fn load_graph(edge_file: &Path, feature_file: &Path, label_file: &Path) -> Result<Graph> {
    let edges = read_edges(edge_file)?;
    let features = read_features(feature_file)?;
    let labels = read_labels(label_file)?;
    if features.rows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} rows but {} has {}",
            feature_file.display(),
            features.rows(),
            label_file.display(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let (g, cleanup) = Graph::with_cleanup(edges, features, labels, classes)?;
    if cleanup.self_loops > 0 {
        log::warn!(
            "dropped {} self-loop(s) from {}",
            cleanup.self_loops,
            edge_file.display()
        );
    }
    Ok(g)
}

/// Conventional file names inside a dataset directory.
pub const EDGE_FILE: &str = "edges.txt";
pub const FEATURE_FILE: &str = "features.csv";
pub const LABEL_FILE: &str = "labels.csv";

pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    load_graph(
        &dir.join(EDGE_FILE),
        &dir.join(FEATURE_FILE),
        &dir.join(LABEL_FILE),
    )
}

/// Formats a real with 17 significant digits, enough to round-trip any f64.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn features_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_real(*v));
        }
        out.push('\n');
    }
    out
}

/// Writes `edges.txt`, `features.csv` and `labels.csv` into `dir`.
pub fn write_graph_dir(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        writeln!(edges, "{u} {v}").unwrap();
    }
    fs::write(dir.join(EDGE_FILE), edges)?;
    fs::write(dir.join(FEATURE_FILE), features_to_csv(&g.features))?;
    let mut labels = String::from("node_id,label\n");
    for (i, l) in g.labels.iter().enumerate() {
        writeln!(labels, "{i},{l}").unwrap();
    }
    fs::write(dir.join(LABEL_FILE), labels)?;
    Ok(())
}

/// Affine per-column rescale into `[low, high]`; constant columns go to the midpoint.
pub fn normalize_features(g: &Graph, low: f64, high: f64) -> Graph {
    let n = g.num_nodes();
    let d = g.dims();
    let mut out = g.features.clone();
    let mid = (low + high) / 2.0;
    for j in 0..d {
        let col = g.features.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, &x) in col.iter().enumerate().take(n) {
            let y = if hi > lo {
                (low + (x - lo) / (hi - lo) * (high - low)).clamp(low, high)
            } else {
                mid
            };
            out.set(i, j, y);
        }
    }
    Graph {
        features: out,
        alpha: low,
        beta: high,
        ..g.clone()
    }
}

/// Planted-partition generator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub nodes: usize,
    pub classes: usize,
    pub dims: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub signal: f64,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams {
            nodes: 1000,
            classes: 4,
            dims: 16,
            p_in: 0.03,
            p_out: 0.002,
            signal: 1.0,
        }
    }
}

impl SbmParams {
    /// Expected average degree under balanced classes.
    pub fn expected_avg_degree(&self) -> f64 {
        let n = self.nodes as f64;
        let c = self.classes as f64;
        n * (self.p_in / c + self.p_out * (c - 1.0) / c)
    }
}

/// Samples a featured planted-partition graph, normalized to `[-1, 1]`.
///
/// Class `c` owns the feature columns `j` with `j % C == c`; its mean vector
/// is `±signal` on that support and zero elsewhere. Each node adds standard
/// normal noise to its class mean.
pub fn generate_featured_sbm(p: &SbmParams, seed: u64) -> Result<Graph> {
    if p.classes == 0 || p.nodes < p.classes {
        return Err(Error::invalid(format!(
            "need at least one node per class (n={}, C={})",
            p.nodes, p.classes
        )));
    }
    if p.dims == 0 {
        return Err(Error::invalid("feature dimension must be positive"));
    }
    if !(0.0..=1.0).contains(&p.p_out) || !(0.0..=1.0).contains(&p.p_in) || p.p_out > p.p_in {
        return Err(Error::invalid(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
            p.p_in, p.p_out
        )));
    }
    if !(p.signal >= 0.0) {
        return Err(Error::invalid("signal must be non-negative"));
    }
    let mut rng = rng::stream(seed, Stream::Graph, 0);
    let n = p.nodes;
    let mut labels: Vec<usize> = (0..n).map(|i| i % p.classes).collect();
    labels.shuffle(&mut rng);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
            if rng.random_bool(prob) {
                edges.push((u, v));
            }
        }
    }

    let mut means = Matrix::zeros(p.classes, p.dims);
    for c in 0..p.classes {
        for j in 0..p.dims {
            let owned = if p.dims >= p.classes {
                j % p.classes == c
            } else {
                c % p.dims == j
            };
            if owned {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                means.set(c, j, sign * p.signal);
            }
        }
    }
    let mut features = Matrix::zeros(n, p.dims);
    for (i, &c) in labels.iter().enumerate() {
        for j in 0..p.dims {
            let noise: f64 = rng.sample(StandardNormal);
            features.set(i, j, means.get(c, j) + noise);
        }
    }
    let g = Graph::new(edges, features, labels, p.classes)?;
    Ok(normalize_features(&g, -1.0, 1.0))
}

/// Disjoint train/validation/test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitMasks {
    /// Adds node ids to the training set (used for injected nodes).
    pub fn with_extra_train(&self, extra: impl IntoIterator<Item = usize>) -> SplitMasks {
        let mut s = self.clone();
        s.train.extend(extra);
        s
    }
}

/// Uniformly random partition with sizes `round(r·n)` for train and validation.
pub fn split_nodes(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<SplitMasks> {
    let (a, b, c) = ratios;
    if a <= 0.0 || b <= 0.0 || c <= 0.0 {
        return Err(Error::invalid(format!(
            "split ratios must be positive, got {ratios:?}"
        )));
    }
    if (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must sum to 1, got {ratios:?}"
        )));
    }
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed, Stream::Split, 0));
    let mut train = ids[..n_train].to_vec();
    let mut val = ids[n_train..n_train + n_val].to_vec();
    let mut test = ids[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitMasks { train, val, test })
}
