use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, SplitMasks};
use crate::matrix::Matrix;
use crate::protocol::gnn::{cross_entropy, Arch, GnnModel, Propagation};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub hidden: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub max_epochs: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Gcn,
            hidden: 64,
            lr: 1e-2,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_epochs: 300,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose weights were kept (0 = initial weights).
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = params
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Adam {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps_adam,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let iter = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
            for ((w, &gr), (mi, vi)) in iter {
                let gr = gr + self.weight_decay * *w;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gr;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gr * gr;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

fn check_nodes(nodes: &[usize], n: usize, what: &str) -> Result<()> {
    if let Some(&bad) = nodes.iter().find(|&&v| v >= n) {
        return Err(Error::invalid(format!("{what} node {bad} out of range (n = {n})")));
    }
    Ok(())
}

/// Trains a two-layer GNN on `embeddings` with cross-entropy over `masks.train`.
///
/// The returned model carries the weights with the lowest validation loss
/// seen (training loss when the validation set is empty).
pub fn train_node_classifier(
    g: &Graph,
    embeddings: &Matrix,
    masks: &SplitMasks,
    tcfg: &TrainConfig,
) -> Result<(GnnModel, TrainReport)> {
    tcfg.validate()?;
    let n = g.num_nodes();
    if embeddings.rows() != n {
        return Err(Error::Shape(format!(
            "{} embedding rows for {n} nodes",
            embeddings.rows()
        )));
    }
    if masks.train.is_empty() {
        return Err(Error::invalid("training mask is empty"));
    }
    check_nodes(&masks.train, n, "train")?;
    check_nodes(&masks.val, n, "validation")?;
    check_nodes(&masks.test, n, "test")?;

    let mut rng = stream(tcfg.seed, Stream::Model, 0);
    let mut model = GnnModel::new(
        tcfg.arch,
        embeddings.cols(),
        tcfg.hidden,
        g.num_classes,
        tcfg.dropout,
        &mut rng,
    );
    let prop = Propagation::new(tcfg.arch, g);
    let u1 = prop.aggregate(embeddings);
    let select = if masks.val.is_empty() {
        &masks.train
    } else {
        &masks.val
    };

    let eval_loss = |m: &GnnModel| -> Result<f64> {
        let cache = m.forward(&prop, &u1, None)?;
        Ok(cross_entropy(&cache.logits, &g.labels, select).0)
    };

    let mut best = model.clone();
    let mut best_val_loss = eval_loss(&model)?;
    let mut best_epoch = 0;
    let mut final_train_loss = f64::NAN;
    let mut adam = Adam::new(tcfg, &model.params);

    for epoch in 1..=tcfg.max_epochs {
        let cache = model.forward(&prop, &u1, Some(&mut rng))?;
        let (loss, dlogits) = cross_entropy(&cache.logits, &g.labels, &masks.train);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "training loss is {loss} at epoch {epoch} (lr = {})",
                tcfg.lr
            )));
        }
        final_train_loss = loss;
        let grads = model.backward(&prop, &u1, &cache, &dlogits)?;
        adam.step(&mut model.params, &grads);
        if !model.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite weights at epoch {epoch} (lr = {})",
                tcfg.lr
            )));
        }
        let val = eval_loss(&model)?;
        if val < best_val_loss {
            best_val_loss = val;
            best_epoch = epoch;
            best = model.clone();
        }
    }

    Ok((
        best,
        TrainReport {
            epochs_run: tcfg.max_epochs,
            best_epoch,
            best_val_loss,
            final_train_loss,
        },
    ))
}

/// Argmax class per row; ties go to the lowest class id.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|r| {
            let mut best = 0;
            for (c, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Predicted classes for every node.
pub fn predict(model: &GnnModel, g: &Graph, embeddings: &Matrix) -> Result<Vec<usize>> {
    let prop = Propagation::new(model.arch, g);
    let u1 = prop.aggregate(embeddings);
    Ok(argmax_rows(&model.predict_proba(&prop, &u1)?))
}

/// Fraction of `nodes` whose predicted class equals the label.
pub fn evaluate_accuracy(
    model: &GnnModel,
    g: &Graph,
    embeddings: &Matrix,
    nodes: &[usize],
) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::invalid("accuracy over an empty node set"));
    }
    check_nodes(nodes, g.num_nodes(), "evaluation")?;
    let pred = predict(model, g, embeddings)?;
    Ok(accuracy_of(&pred, &g.labels, nodes))
}

pub fn accuracy_of(pred: &[usize], labels: &[usize], nodes: &[usize]) -> f64 {
    let hits = nodes.iter().filter(|&&v| pred[v] == labels[v]).count();
    hits as f64 / nodes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_toy() -> (Graph, SplitMasks) {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let s = if i < 5 { 1.0 } else { -1.0 };
                vec![s * (0.5 + 0.1 * i as f64), 0.2 * (i % 3) as f64 - 0.2]
            })
            .collect();
        let labels = (0..10).map(|i| usize::from(i >= 5)).collect();
        let g = Graph::new([], Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap();
        let masks = SplitMasks {
            train: (0..10).collect(),
            val: vec![],
            test: vec![],
        };
        (g, masks)
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let (g, masks) = separable_toy();
        let cfg = TrainConfig::default();
        let (model, report) = train_node_classifier(&g, &g.features, &masks, &cfg).unwrap();
        assert_eq!(report.epochs_run, 300);
        let acc = evaluate_accuracy(&model, &g, &g.features, &masks.train).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let (g, masks) = separable_toy();
        let cfg = TrainConfig {
            max_epochs: 0,
            seed: 4,
            ..TrainConfig::default()
        };
        let (model, report) = train_node_classifier(&g, &g.features, &masks, &cfg).unwrap();
        let mut rng = stream(4, Stream::Model, 0);
        let init = GnnModel::new(Arch::Gcn, 2, 64, 2, 0.1, &mut rng);
        assert_eq!(model, init);
        assert_eq!(report.best_epoch, 0);
    }

    #[test]
    fn same_seed_same_loss() {
        let (g, masks) = separable_toy();
        let cfg = TrainConfig {
            max_epochs: 40,
            seed: 9,
            ..TrainConfig::default()
        };
        let (_, a) = train_node_classifier(&g, &g.features, &masks, &cfg).unwrap();
        let (_, b) = train_node_classifier(&g, &g.features, &masks, &cfg).unwrap();
        assert_eq!(a.final_train_loss.to_bits(), b.final_train_loss.to_bits());
        assert_eq!(a.best_val_loss.to_bits(), b.best_val_loss.to_bits());
    }

    #[test]
    fn nan_loss_reports_lr_and_epoch() {
        let (g, masks) = separable_toy();
        let mut x = g.features.clone();
        x.set(0, 0, f64::NAN);
        let err = train_node_classifier(&g, &x, &masks, &TrainConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(msg.contains("epoch 1") && msg.contains("lr = 0.01"), "{msg}");
    }

    #[test]
    fn uniform_predictor_picks_class_zero() {
        let g = separable_toy().0;
        let model = GnnModel::zeros(Arch::Gcn, 2, 4, 2);
        let pred = predict(&model, &g, &g.features).unwrap();
        assert!(pred.iter().all(|&c| c == 0));
        let acc = evaluate_accuracy(&model, &g, &g.features, &[0, 1, 5]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_node_set_is_rejected() {
        let g = separable_toy().0;
        let model = GnnModel::zeros(Arch::Gcn, 2, 4, 2);
        assert!(matches!(
            evaluate_accuracy(&model, &g, &g.features, &[]),
            Err(Error::InvalidArgument(_))
        ));
    }
}
