use serde::{Deserialize, Serialize};

use crate::attack::{choose_targets, plan_attack, poison_graph, AttackConfig, AttackPlan};
use crate::error::{Error, Result};
use crate::graph::{Graph, SplitMasks};
use crate::ldp::{perturb_features, MechanismConfig};
use crate::matrix::Matrix;
use crate::protocol::{
    accuracy_of, calibrate, link_prediction_eval_with, predict, train_node_classifier,
    CalibrationConfig, LinkPredSetup, Task, TrainConfig,
};
use crate::rng::mix_seed;

/// One protocol run: optional perturbation, optional attack, calibration, training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    /// `None` trains on raw features (non-private reference).
    pub mechanism: Option<MechanismConfig>,
    /// `None` evaluates the clean phase only, with targeted equal to untargeted.
    pub attack: Option<AttackConfig>,
    /// Select targets from `attack` but skip the attacked phase.
    #[serde(default)]
    pub clean_only: bool,
    pub k: usize,
    pub task: Task,
    pub holdout_frac: f64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseAccuracy {
    pub targeted: f64,
    pub untargeted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub clean: PhaseAccuracy,
    pub attacked: Option<PhaseAccuracy>,
    pub plan: Option<AttackPlan>,
}

/// Seeds of the independent random components of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub perturb: u64,
    pub attack: u64,
    pub model: u64,
    pub link: u64,
}

impl TrialSeeds {
    pub fn derive(seed: u64) -> Self {
        TrialSeeds {
            perturb: mix_seed(seed, 1),
            attack: mix_seed(seed, 2),
            model: mix_seed(seed, 3),
            link: mix_seed(seed, 4),
        }
    }
}

/// Server-side reports of every genuine node.
pub fn reports(g: &Graph, mechanism: Option<&MechanismConfig>, seed: u64) -> Result<Matrix> {
    match mechanism {
        Some(cfg) => Ok(perturb_features(g, cfg, seed)?.matrix),
        None => Ok(g.features.clone()),
    }
}

fn phase_accuracy(
    g: &Graph,
    features: &Matrix,
    masks: &SplitMasks,
    targets: &[usize],
    spec: &TrialSpec,
    seeds: TrialSeeds,
) -> Result<PhaseAccuracy> {
    let emb = calibrate(features, g, CalibrationConfig::new(spec.k)?)?;
    let tcfg = TrainConfig {
        seed: seeds.model,
        ..spec.train.clone()
    };
    match spec.task {
        Task::NodeClassification => {
            let (model, _) = train_node_classifier(g, &emb, masks, &tcfg)?;
            let pred = predict(&model, g, &emb)?;
            let untargeted = accuracy_of(&pred, &g.labels, &masks.test);
            let targeted = if targets.is_empty() {
                untargeted
            } else {
                accuracy_of(&pred, &g.labels, targets)
            };
            Ok(PhaseAccuracy {
                targeted,
                untargeted,
            })
        }
        Task::LinkPrediction => {
            let genuine = masks.train.len() + masks.val.len() + masks.test.len();
            let setup = LinkPredSetup {
                holdout_frac: spec.holdout_frac,
                genuine,
                targets: targets.to_vec(),
            };
            let r = link_prediction_eval_with(g, &emb, &setup, &tcfg, seeds.link)?;
            Ok(PhaseAccuracy {
                targeted: r.targeted_accuracy.unwrap_or(r.accuracy),
                untargeted: r.accuracy,
            })
        }
    }
}

/// Runs the clean phase and, if configured, the attacked phase on `g`.
///
/// Both phases share the perturbed reports, the split and the model seed,
/// so the difference between them is the injected nodes alone.
pub fn run_trial(g: &Graph, masks: &SplitMasks, spec: &TrialSpec, seed: u64) -> Result<TrialOutcome> {
    let seeds = TrialSeeds::derive(seed);
    let x = reports(g, spec.mechanism.as_ref(), seeds.perturb)?;
    let plan = match &spec.attack {
        Some(a) if !spec.clean_only => {
            let mech = spec.mechanism.ok_or_else(|| {
                Error::Config("an attack needs a mechanism to bound its crafted reports".into())
            })?;
            let cfg = AttackConfig {
                seed: seeds.attack,
                ..*a
            };
            Some(plan_attack(g, &mech, &cfg, Some(&masks.test))?)
        }
        _ => None,
    };
    let targets = match (&plan, &spec.attack) {
        (Some(p), _) => p.targets.clone(),
        (None, Some(a)) => {
            let cfg = AttackConfig {
                seed: seeds.attack,
                ..*a
            };
            choose_targets(g.num_nodes(), &cfg, Some(&masks.test))?
        }
        (None, None) => Vec::new(),
    };
    let targets = &targets[..];
    let clean = phase_accuracy(g, &x, masks, targets, spec, seeds)?;
    let attacked = match &plan {
        Some(p) => {
            let gp = poison_graph(g, &x, p)?;
            let mp = masks.with_extra_train(p.training_fakes().iter().copied());
            Some(phase_accuracy(&gp, &gp.features, &mp, targets, spec, seeds)?)
        }
        None => None,
    };
    Ok(TrialOutcome {
        clean,
        attacked,
        plan,
    })
}
