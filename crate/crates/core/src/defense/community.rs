//! Girvan–Newman community discovery by repeated removal of the edge with
//! the highest betweenness.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub const GN_MAX_NODES: usize = 5000;

/// Relative slack under which two betweenness values count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularityPoint {
    pub communities: usize,
    pub modularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityResult {
    /// Community id per node, numbered by first appearance.
    pub assignment: Vec<usize>,
    pub communities: usize,
    pub modularity: f64,
    /// Modularity each time the component count grew.
    pub trace: Vec<ModularityPoint>,
    pub edges_removed: usize,
}

impl CommunityResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.communities];
        for &c in &self.assignment {
            s[c] += 1;
        }
        s
    }
}

/// Newman modularity of `assignment` on `g`; 0 for an edgeless graph.
pub fn modularity(g: &Graph, assignment: &[usize]) -> f64 {
    let m = g.num_edges() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let k = assignment.iter().max().map_or(0, |c| c + 1);
    let mut inner = vec![0.0; k];
    let mut degree = vec![0.0; k];
    for &(u, v) in g.edges() {
        if assignment[u] == assignment[v] {
            inner[assignment[u]] += 1.0;
        }
    }
    for v in 0..g.num_nodes() {
        degree[assignment[v]] += g.degree(v) as f64;
    }
    inner
        .iter()
        .zip(&degree)
        .map(|(l, d)| l / m - (d / (2.0 * m)).powi(2))
        .sum()
}

/// Adjacency with edge ids; ids follow the lexicographic order of `(min, max)` pairs.
type Adj = Vec<Vec<(usize, usize)>>;

fn components(adj: &Adj) -> Vec<usize> {
    let n = adj.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &(w, _) in &adj[u] {
                if comp[w] == usize::MAX {
                    comp[w] = next;
                    queue.push_back(w);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Nodes reachable from `s`.
fn reachable(adj: &Adj, s: usize, seen: &mut [bool]) -> Vec<usize> {
    let mut out = vec![s];
    seen[s] = true;
    let mut i = 0;
    while i < out.len() {
        let u = out[i];
        i += 1;
        for &(w, _) in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                out.push(w);
            }
        }
    }
    out
}

/// Scratch buffers for Brandes' algorithm.
struct Brandes {
    sigma: Vec<f64>,
    dist: Vec<usize>,
    delta: Vec<f64>,
    order: Vec<usize>,
    queue: VecDeque<usize>,
}

impl Brandes {
    fn new(n: usize) -> Self {
        Brandes {
            sigma: vec![0.0; n],
            dist: vec![usize::MAX; n],
            delta: vec![0.0; n],
            order: Vec::with_capacity(n),
            queue: VecDeque::new(),
        }
    }

    /// Edge betweenness restricted to `nodes` (one connected component), written into `out`.
    fn run(&mut self, adj: &Adj, nodes: &[usize], out: &mut [f64]) {
        for &u in nodes {
            for &(w, e) in &adj[u] {
                if u < w {
                    out[e] = 0.0;
                }
            }
        }
        for &s in nodes {
            for &v in nodes {
                self.sigma[v] = 0.0;
                self.dist[v] = usize::MAX;
                self.delta[v] = 0.0;
            }
            self.order.clear();
            self.sigma[s] = 1.0;
            self.dist[s] = 0;
            self.queue.push_back(s);
            while let Some(v) = self.queue.pop_front() {
                self.order.push(v);
                for &(w, _) in &adj[v] {
                    if self.dist[w] == usize::MAX {
                        self.dist[w] = self.dist[v] + 1;
                        self.queue.push_back(w);
                    }
                    if self.dist[w] == self.dist[v] + 1 {
                        self.sigma[w] += self.sigma[v];
                    }
                }
            }
            for &w in self.order.iter().rev() {
                for &(v, e) in &adj[w] {
                    if self.dist[v] != usize::MAX && self.dist[v] + 1 == self.dist[w] {
                        let c = self.sigma[v] / self.sigma[w] * (1.0 + self.delta[w]);
                        out[e] += c;
                        self.delta[v] += c;
                    }
                }
            }
        }
        // each undirected path was counted from both endpoints
        for &u in nodes {
            for &(w, e) in &adj[u] {
                if u < w {
                    out[e] /= 2.0;
                }
            }
        }
    }
}

fn relabel(comp: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let out = comp
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Runs Girvan–Newman on `g`.
///
/// Without `max_communities` the whole dendrogram is explored and the
/// partition with the highest modularity is returned (earliest on ties).
/// With it, removal stops once that many components exist and the partition
/// at that point is returned.
pub fn girvan_newman(g: &Graph, max_communities: Option<usize>) -> Result<CommunityResult> {
    let n = g.num_nodes();
    if n > GN_MAX_NODES {
        return Err(Error::TooLarge(format!(
            "Girvan–Newman refuses graphs above {GN_MAX_NODES} nodes (got {n})"
        )));
    }
    // graph edges are stored sorted, so edge ids are in lexicographic order
    let edges = g.edges();
    let mut adj: Adj = vec![Vec::new(); n];
    for (e, &(u, v)) in edges.iter().enumerate() {
        adj[u].push((v, e));
        adj[v].push((u, e));
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let mut alive = vec![true; edges.len()];
    let mut comp = components(&adj);
    let (start, count) = relabel(&comp);
    let mut trace = vec![ModularityPoint {
        communities: count,
        modularity: modularity(g, &start),
    }];
    let mut best = (trace[0].modularity, start, count);
    let mut current_count = count;
    let mut removed = 0;

    let mut brandes = Brandes::new(n);
    let mut betweenness = vec![0.0; edges.len()];
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        members.entry(comp[v]).or_default().push(v);
    }
    for nodes in members.values() {
        brandes.run(&adj, nodes, &mut betweenness);
    }
    let mut seen = vec![false; n];

    while removed < edges.len() {
        if max_communities.is_some_and(|k| current_count >= k) {
            break;
        }
        let top = (0..edges.len())
            .filter(|&e| alive[e])
            .map(|e| betweenness[e])
            .fold(f64::NEG_INFINITY, f64::max);
        let slack = TIE_TOLERANCE * top.abs().max(1.0);
        let e = (0..edges.len())
            .find(|&e| alive[e] && betweenness[e] >= top - slack)
            .expect("an edge remains");
        let (u, v) = edges[e];
        adj[u].retain(|&(w, _)| w != v);
        adj[v].retain(|&(w, _)| w != u);
        alive[e] = false;
        removed += 1;

        // only the component that contained (u, v) changes
        let old = comp[u];
        let side_u = reachable(&adj, u, &mut seen);
        let split = !seen[v];
        for &x in &side_u {
            seen[x] = false;
        }
        let mut side_u = side_u;
        side_u.sort_unstable();
        brandes.run(&adj, &side_u, &mut betweenness);
        if split {
            let fresh = comp.iter().max().map_or(0, |c| c + 1);
            let mut side_v = reachable(&adj, v, &mut seen);
            for &x in &side_v {
                seen[x] = false;
                comp[x] = fresh;
            }
            debug_assert!(side_u.iter().all(|&x| comp[x] == old));
            side_v.sort_unstable();
            brandes.run(&adj, &side_v, &mut betweenness);
            current_count += 1;
            let (labels, k) = relabel(&comp);
            let q = modularity(g, &labels);
            trace.push(ModularityPoint {
                communities: k,
                modularity: q,
            });
            let stop = max_communities.is_some_and(|m| k >= m);
            if q > best.0 || stop {
                best = (q, labels, k);
            }
            if stop {
                break;
            }
        }
    }

    Ok(CommunityResult {
        assignment: best.1,
        communities: best.2,
        modularity: best.0,
        trace,
        edges_removed: removed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn barbell() -> Graph {
        let mut edges = Vec::new();
        for base in [0, 4] {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((base + i, base + j));
                }
            }
        }
        edges.push((3, 4));
        Graph::new(edges, Matrix::zeros(8, 1), vec![0; 8], 1).unwrap()
    }

    #[test]
    fn bridge_goes_first() {
        let g = barbell();
        let r = girvan_newman(&g, Some(2)).unwrap();
        assert_eq!(r.edges_removed, 1);
        assert_eq!(r.assignment, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        let full = girvan_newman(&g, None).unwrap();
        assert_eq!(full.assignment, r.assignment);
        assert!(full.trace.iter().all(|p| (-0.5..=1.0).contains(&p.modularity)));
    }

    #[test]
    fn edgeless_graph_is_all_singletons() {
        let g = Graph::new([], Matrix::zeros(5, 1), vec![0; 5], 1).unwrap();
        let r = girvan_newman(&g, None).unwrap();
        assert_eq!(r.communities, 5);
        assert_eq!(r.modularity, 0.0);
    }

    #[test]
    fn betweenness_of_a_path() {
        let adj: Adj = vec![vec![(1, 0)], vec![(0, 0), (2, 1)], vec![(1, 1)]];
        let mut b = vec![0.0; 2];
        Brandes::new(3).run(&adj, &[0, 1, 2], &mut b);
        assert_eq!(b, vec![2.0, 2.0]);
    }

    #[test]
    fn size_guard() {
        let g = Graph::new([], Matrix::zeros(GN_MAX_NODES + 1, 1), vec![0; GN_MAX_NODES + 1], 1)
            .unwrap();
        assert!(matches!(girvan_newman(&g, None), Err(Error::TooLarge(_))));
    }
}
