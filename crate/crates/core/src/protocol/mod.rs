//! Server side of the protocol: calibration, GNN models, training and evaluation.

mod calibrate;
mod gnn;
mod linkpred;
mod train;

use serde::{Deserialize, Serialize};

pub use calibrate::{aggregate_step, calibrate, CalibrationConfig, MAX_CALIBRATION_STEPS};
pub use gnn::{
    cross_entropy, gcn_forward, sage_forward, softmax_rows, Arch, ForwardCache, GnnModel,
    Propagation,
};
pub use linkpred::{
    link_prediction_eval, link_prediction_eval_with, LinkPredReport, LinkPredSetup,
    LINK_EMBED_DIM,
};
pub use train::{
    accuracy_of, argmax_rows, evaluate_accuracy, predict, train_node_classifier, Adam,
    TrainConfig, TrainReport,
};

use crate::ldp::MechanismKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Targeted,
    Untargeted,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::NodeClassification => "node_classification",
            Task::LinkPrediction => "link_prediction",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.trim() {
            "node_classification" | "node" => Ok(Task::NodeClassification),
            "link_prediction" | "link" => Ok(Task::LinkPrediction),
            other => Err(crate::Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scope::Targeted => "targeted",
            Scope::Untargeted => "untargeted",
        })
    }
}

/// One evaluated accuracy, as written by the `train`/`eval` commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub arch: Arch,
    /// `None` for non-private runs.
    pub mechanism: Option<MechanismKind>,
    pub epsilon: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub task: Task,
    pub scope: Scope,
    pub seed: u64,
    pub accuracy: f64,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}
