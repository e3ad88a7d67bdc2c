use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;

pub const MAX_CALIBRATION_STEPS: usize = 32;

/// K-step server-side calibration (linear mean-with-self aggregation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub steps: usize,
}

impl CalibrationConfig {
    pub fn new(steps: usize) -> Result<Self> {
        if steps > MAX_CALIBRATION_STEPS {
            return Err(Error::invalid(format!(
                "calibration steps {steps} exceed {MAX_CALIBRATION_STEPS}"
            )));
        }
        Ok(CalibrationConfig { steps })
    }
}

/// One aggregation step: `h_v ← (h_v + Σ_{u∈N(v)} h_u) / (|N(v)| + 1)`.
pub fn aggregate_step(g: &Graph, h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for v in 0..g.num_nodes() {
        let o = out.row_mut(v);
        o.copy_from_slice(h.row(v));
        for &u in g.neighbors(v) {
            for (ov, &hv) in o.iter_mut().zip(h.row(u)) {
                *ov += hv;
            }
        }
        let w = 1.0 / (g.degree(v) + 1) as f64;
        o.iter_mut().for_each(|x| *x *= w);
    }
    out
}

/// Applies `cfg.steps` aggregation steps to `features` (no nonlinearity between steps).
pub fn calibrate(features: &Matrix, g: &Graph, cfg: CalibrationConfig) -> Result<Matrix> {
    if features.rows() != g.num_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} nodes",
            features.rows(),
            g.num_nodes()
        )));
    }
    let mut h = features.clone();
    for _ in 0..cfg.steps {
        h = aggregate_step(g, &h);
    }
    Ok(h)
}
