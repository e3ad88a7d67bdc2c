//! Two-layer GCN and mean-aggregator GraphSAGE with hand-written backprop.
//!
//! Both architectures share one shape: each layer first aggregates its input
//! over the graph (`U = agg(X)`), then applies an affine map `Z = U W + b`.
//! For GCN `agg(X) = Â X` with `Â = D̃^{-1/2}(A+I)D̃^{-1/2}`; for SAGE
//! `agg(X) = [X | M X]` where `M` averages neighbors (zero rows for isolated
//! nodes). ReLU and dropout sit between the layers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::{Csr, Matrix};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "SAGE")]
    Sage,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Gcn => "GCN",
            Arch::Sage => "SAGE",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GCN" => Ok(Arch::Gcn),
            "SAGE" | "GRAPHSAGE" => Ok(Arch::Sage),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

/// Graph operator used by the layers of one architecture.
#[derive(Debug, Clone)]
pub struct Propagation {
    arch: Arch,
    op: Csr,
}

impl Propagation {
    pub fn new(arch: Arch, g: &Graph) -> Self {
        let n = g.num_nodes();
        let rows = match arch {
            Arch::Gcn => {
                let inv_sqrt: Vec<f64> = (0..n)
                    .map(|v| 1.0 / ((g.degree(v) + 1) as f64).sqrt())
                    .collect();
                (0..n)
                    .map(|v| {
                        let mut row: Vec<(usize, f64)> = g
                            .neighbors(v)
                            .iter()
                            .map(|&u| (u, inv_sqrt[v] * inv_sqrt[u]))
                            .collect();
                        row.push((v, inv_sqrt[v] * inv_sqrt[v]));
                        row
                    })
                    .collect()
            }
            Arch::Sage => (0..n)
                .map(|v| {
                    let w = 1.0 / g.degree(v).max(1) as f64;
                    g.neighbors(v).iter().map(|&u| (u, w)).collect()
                })
                .collect(),
        };
        Propagation {
            arch,
            op: Csr::from_rows(rows),
        }
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn num_nodes(&self) -> usize {
        self.op.n()
    }

    /// Width of `agg(X)` for an input of width `f`.
    pub fn aggregated_width(&self, f: usize) -> usize {
        match self.arch {
            Arch::Gcn => f,
            Arch::Sage => 2 * f,
        }
    }

    pub fn aggregate(&self, x: &Matrix) -> Matrix {
        match self.arch {
            Arch::Gcn => self.op.apply(x),
            Arch::Sage => x
                .hconcat(&self.op.apply(x))
                .expect("aggregate keeps row count"),
        }
    }

    /// Adjoint of [`Propagation::aggregate`].
    pub fn aggregate_backward(&self, du: &Matrix) -> Matrix {
        match self.arch {
            // Â is symmetric
            Arch::Gcn => self.op.apply(du),
            Arch::Sage => {
                let f = du.cols() / 2;
                let mut dx = du.column_slice(0, f);
                let dn = self.op.apply_transpose(&du.column_slice(f, 2 * f));
                dx.axpy(1.0, &dn);
                dx
            }
        }
    }
}

/// Weights of a two-layer GNN: `[W1, b1, W2, b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub arch: Arch,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub params: Vec<Matrix>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub z1: Matrix,
    pub dropout_mask: Option<Vec<f64>>,
    pub u2: Matrix,
    pub logits: Matrix,
}

fn glorot(rows: usize, cols: usize, rng: &mut SimRng) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

impl GnnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(
        arch: Arch,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        dropout: f64,
        rng: &mut SimRng,
    ) -> Self {
        let mult = if arch == Arch::Sage { 2 } else { 1 };
        let w1 = glorot(mult * in_dim, hidden, rng);
        let w2 = glorot(mult * hidden, out_dim, rng);
        GnnModel {
            arch,
            in_dim,
            hidden,
            out_dim,
            dropout,
            params: vec![w1, Matrix::zeros(1, hidden), w2, Matrix::zeros(1, out_dim)],
        }
    }

    pub fn zeros(arch: Arch, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        let mult = if arch == Arch::Sage { 2 } else { 1 };
        GnnModel {
            arch,
            in_dim,
            hidden,
            out_dim,
            dropout: 0.0,
            params: vec![
                Matrix::zeros(mult * in_dim, hidden),
                Matrix::zeros(1, hidden),
                Matrix::zeros(mult * hidden, out_dim),
                Matrix::zeros(1, out_dim),
            ],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Matrix::is_finite)
    }

    fn check(&self, prop: &Propagation, u1: &Matrix) -> Result<()> {
        if prop.arch() != self.arch {
            return Err(Error::Shape(format!(
                "{} model used with {} propagation",
                self.arch,
                prop.arch()
            )));
        }
        if u1.rows() != prop.num_nodes() || u1.cols() != self.params[0].rows() {
            return Err(Error::Shape(format!(
                "aggregated input is {}x{}, model expects {}x{}",
                u1.rows(),
                u1.cols(),
                prop.num_nodes(),
                self.params[0].rows()
            )));
        }
        Ok(())
    }

    /// Forward pass from the first-layer aggregated input `u1 = agg(X)`.
    ///
    /// Passing an RNG enables training mode (dropout on the hidden layer).
    pub fn forward(
        &self,
        prop: &Propagation,
        u1: &Matrix,
        dropout_rng: Option<&mut SimRng>,
    ) -> Result<ForwardCache> {
        self.check(prop, u1)?;
        let mut z1 = u1.matmul(&self.params[0])?;
        z1.add_row_vector(&self.params[1]);
        let mut h1 = z1.clone();
        h1.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
        let mut dropout_mask = None;
        if let Some(rng) = dropout_rng {
            if self.dropout > 0.0 {
                let keep = 1.0 - self.dropout;
                let mask: Vec<f64> = (0..h1.as_slice().len())
                    .map(|_| {
                        if rng.random::<f64>() < self.dropout {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect();
                for (v, m) in h1.as_mut_slice().iter_mut().zip(&mask) {
                    *v *= m;
                }
                dropout_mask = Some(mask);
            }
        }
        let u2 = prop.aggregate(&h1);
        let mut logits = u2.matmul(&self.params[2])?;
        logits.add_row_vector(&self.params[3]);
        Ok(ForwardCache {
            z1,
            dropout_mask,
            u2,
            logits,
        })
    }

    /// Gradients of a loss with respect to `[W1, b1, W2, b2]` given `∂L/∂logits`.
    pub fn backward(
        &self,
        prop: &Propagation,
        u1: &Matrix,
        cache: &ForwardCache,
        dlogits: &Matrix,
    ) -> Result<Vec<Matrix>> {
        let dw2 = cache.u2.t_matmul(dlogits)?;
        let db2 = dlogits.column_sums();
        let du2 = dlogits.matmul_t(&self.params[2])?;
        let mut dh1 = prop.aggregate_backward(&du2);
        if let Some(mask) = &cache.dropout_mask {
            for (g, m) in dh1.as_mut_slice().iter_mut().zip(mask) {
                *g *= m;
            }
        }
        for (g, &z) in dh1.as_mut_slice().iter_mut().zip(cache.z1.as_slice()) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        let dw1 = u1.t_matmul(&dh1)?;
        let db1 = dh1.column_sums();
        Ok(vec![dw1, db1, dw2, db2])
    }

    /// Evaluation-mode class probabilities.
    pub fn predict_proba(&self, prop: &Propagation, u1: &Matrix) -> Result<Matrix> {
        let cache = self.forward(prop, u1, None)?;
        Ok(softmax_rows(&cache.logits))
    }
}

pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy over `rows` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize], rows: &[usize]) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    if rows.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    for &r in rows {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[r]];
        let g = grad.row_mut(r);
        for (gv, &z) in g.iter_mut().zip(row) {
            *gv = (z - lse).exp() * scale;
        }
        g[labels[r]] -= scale;
    }
    (loss * scale, grad)
}

fn forward_probs(model: &GnnModel, g: &Graph, embeddings: &Matrix, arch: Arch) -> Result<Matrix> {
    if model.arch != arch {
        return Err(Error::Shape(format!(
            "expected a {arch} model, got {}",
            model.arch
        )));
    }
    if embeddings.rows() != g.num_nodes() {
        return Err(Error::Shape(format!(
            "{} embedding rows for {} nodes",
            embeddings.rows(),
            g.num_nodes()
        )));
    }
    let prop = Propagation::new(arch, g);
    let u1 = prop.aggregate(embeddings);
    model.predict_proba(&prop, &u1)
}

/// Class probabilities of a GCN in evaluation mode.
pub fn gcn_forward(model: &GnnModel, g: &Graph, embeddings: &Matrix) -> Result<Matrix> {
    forward_probs(model, g, embeddings, Arch::Gcn)
}

/// Class probabilities of a mean-aggregator GraphSAGE in evaluation mode.
pub fn sage_forward(model: &GnnModel, g: &Graph, embeddings: &Matrix) -> Result<Matrix> {
    forward_probs(model, g, embeddings, Arch::Sage)
}
