//! Training loops: the two-group progressive teacher, its baselines and
//! ablations, plus evaluation and abandonment audits.

mod audit;
mod baselines;
mod pt;
mod step;

pub use audit::{audit_abandoned, audit_abandoned_since, AbandonAudit};
pub use baselines::{
    train_baseline, train_finetune, train_mean_teacher, train_pseudo_label, BaselineKind,
    BaselineRun,
};
pub use pt::{train_pt, PtRun};
pub use step::{loss_snet, loss_snet_with_targets, AugmentedBatch, SnetLoss};

use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceConfig;
use crate::data::{AugmentationSpec, DatasetSplit, LabeledExample};
use crate::ema::{init_teacher, TeacherState};
use crate::error::{PtError, Result};
use crate::math::{predict_logits, Activation, NetConfig, ParamSet};
use crate::noise::{NoiseAudit, NoiseSpec};
use crate::par::{self, Execution};
use crate::schedules::ScheduleConfig;

/// Where a student takes its selected samples and consistency targets from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    /// From the teacher of the other group.
    #[default]
    Cross,
    /// From its own teacher.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Ratio shrinks from 1 to `1 - r` over the first `T` iterations.
    #[default]
    Progressive,
    /// Ratio is `1 - r` from the first iteration.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub group1: u64,
    pub group2: u64,
    pub data: u64,
}

impl Seeds {
    /// Derive a full seed triple from one experiment seed.
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            group1: seed.wrapping_mul(0x9E37_79B9).wrapping_add(1),
            group2: seed.wrapping_mul(0x9E37_79B9).wrapping_add(2),
            data: seed.wrapping_mul(0x9E37_79B9).wrapping_add(3),
        }
    }

    pub fn group(&self, g: usize) -> u64 {
        if g == 0 {
            self.group1
        } else {
            self.group2
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Student1,
    Student2,
    #[default]
    Teacher1,
    Teacher2,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Student1,
        ModelKind::Student2,
        ModelKind::Teacher1,
        ModelKind::Teacher2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Student1 => "student1",
            ModelKind::Student2 => "student2",
            ModelKind::Teacher1 => "teacher1",
            ModelKind::Teacher2 => "teacher2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ModelKind::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub schedules: ScheduleConfig,
    pub batch_size: usize,
    pub labeled_fraction: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub aug: AugmentationSpec,
    pub guidance: Guidance,
    pub selection_mode: SelectionMode,
    pub seeds: Seeds,
    pub noise: Option<NoiseSpec>,
    pub confidence: Option<ConfidenceConfig>,
    /// Per-class probability of keeping an abandoned sample anyway.
    pub class_keep_prob: Option<Vec<f64>>,
    /// Overrides the pass-over-the-larger-pool default.
    pub iters_per_epoch: Option<usize>,
    /// Evaluation spacing (in iterations) inside the final epoch.
    pub eval_interval: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig {
                input_dim: 8,
                hidden_dims: vec![64, 64],
                num_classes: 7,
                activation: Activation::Relu,
            },
            schedules: ScheduleConfig::default(),
            batch_size: 200,
            labeled_fraction: 0.25,
            momentum: 0.9,
            weight_decay: 0.0005,
            aug: AugmentationSpec::default(),
            guidance: Guidance::Cross,
            selection_mode: SelectionMode::Progressive,
            seeds: Seeds::default(),
            noise: None,
            confidence: None,
            class_keep_prob: None,
            iters_per_epoch: None,
            eval_interval: 50,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic ring benchmark. Training runs long enough,
    /// with label-preserving augmentation only (swaps of the nuisance
    /// dimensions, no jitter), that a plain supervised network memorizes
    /// flipped labels; the schedules are stretched to match.
    pub fn desk_benchmark() -> Self {
        TrainConfig {
            schedules: ScheduleConfig {
                turning_iteration: 400,
                total_epochs: 40,
                base_lr: 0.1,
                lr_decay_epoch: 30,
                decayed_lr: 0.005,
                ..ScheduleConfig::default()
            },
            aug: AugmentationSpec {
                gaussian_sigma: 0.0,
                flip_axes: vec![(2, 3), (4, 5), (6, 7)],
            },
            // fine-tune must be able to memorize flipped labels for noise to hurt it
            weight_decay: 0.0,
            eval_interval: 10,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.schedules.validate()?;
        self.aug.validate(self.net.input_dim)?;
        crate::data::batch_counts(self.batch_size, self.labeled_fraction)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(PtError::Config("momentum must be in [0,1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(PtError::Config(
                "weight_decay must be finite and >= 0".into(),
            ));
        }
        if self.eval_interval == 0 {
            return Err(PtError::Config("eval_interval must be >= 1".into()));
        }
        if self.iters_per_epoch == Some(0) {
            return Err(PtError::Config("iters_per_epoch must be >= 1".into()));
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        if let Some(c) = &self.confidence {
            c.validate()?;
        }
        if let Some(p) = &self.class_keep_prob {
            if p.len() != self.net.num_classes || p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(PtError::Config(
                    "class_keep_prob needs one probability in [0,1] per class".into(),
                ));
            }
        }
        Ok(())
    }

    fn check_data(&self, data: &DatasetSplit) -> Result<()> {
        if data.labeled.is_empty() || data.test.is_empty() {
            return Err(PtError::Config(
                "labeled and test pools must be nonempty".into(),
            ));
        }
        if data.dim() != self.net.input_dim || data.num_classes != self.net.num_classes {
            return Err(PtError::Config(format!(
                "data has dim {} and {} classes, network expects {} and {}",
                data.dim(),
                data.num_classes,
                self.net.input_dim,
                self.net.num_classes
            )));
        }
        Ok(())
    }

    /// Apply the configured label noise to the labeled pool.
    pub fn noisy_data(&self, data: &DatasetSplit) -> Result<(DatasetSplit, NoiseAudit)> {
        let labels = data.labels();
        match &self.noise {
            Some(spec) if spec.rate > 0.0 => {
                let (noisy, audit) = spec.apply(&labels, data.num_classes)?;
                Ok((data.with_labels(&noisy)?, audit))
            }
            _ => Ok((data.clone(), NoiseAudit::clean(&labels))),
        }
    }
}

/// One teacher-student pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupState {
    pub student: ParamSet,
    pub velocity: ParamSet,
    pub teacher: TeacherState,
}

impl GroupState {
    pub fn init(cfg: &NetConfig, seed: u64) -> Self {
        let student = ParamSet::init_uniform(cfg, seed);
        let velocity = ParamSet::zeros(cfg);
        let teacher = init_teacher(&student);
        GroupState {
            student,
            velocity,
            teacher,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Recall per true class; 0 for classes absent from the test set.
    pub per_class_recall: Vec<f64>,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|r| r.len() != c) {
            return Err(PtError::Contract(
                "confusion matrix must be square and nonempty".into(),
            ));
        }
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..c).map(|k| confusion[k][k]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[k] as f64 / n as f64
                }
            })
            .collect();
        Ok(Metrics {
            accuracy: if total == 0 {
                0.0
            } else {
                trace as f64 / total as f64
            },
            confusion,
            per_class_recall,
        })
    }
}

/// Argmax of the logits, lowest index on ties.
pub fn predict_class(model: &ParamSet, x: &[f64], cfg: &NetConfig) -> Result<usize> {
    let logits = predict_logits(model, x, cfg)?;
    let mut best = 0;
    for (k, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = k;
        }
    }
    Ok(best)
}

/// Test-set metrics without augmentation.
pub fn evaluate(
    model: &ParamSet,
    test: &[LabeledExample],
    cfg: &NetConfig,
    exec: Execution,
) -> Result<Metrics> {
    if test.is_empty() {
        return Err(PtError::Contract("test set is empty".into()));
    }
    let preds: Vec<usize> = par::map(exec, test, |_, e| predict_class(model, &e.x, cfg))
        .into_iter()
        .collect::<Result<_>>()?;
    let c = cfg.num_classes;
    let mut confusion = vec![vec![0u64; c]; c];
    for (e, p) in test.iter().zip(preds) {
        if e.y >= c {
            return Err(PtError::Contract(format!(
                "test label {} out of range",
                e.y
            )));
        }
        confusion[e.y][p] += 1;
    }
    Metrics::from_confusion(confusion)
}

/// Per-iteration training record. Vectors are indexed by group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration counter `t`.
    pub iteration: usize,
    pub epoch: usize,
    pub supervised_loss: Vec<f64>,
    pub unsupervised_loss: Vec<f64>,
    pub ratio: f64,
    pub omega: f64,
    pub alpha: f64,
    pub lr: f64,
    pub labeled_in_batch: usize,
    pub kept: Vec<usize>,
    pub rescued: Vec<usize>,
    /// Labeled-pool indices each group's selection abandoned.
    pub abandoned: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub epoch_end: bool,
    pub model: ModelKind,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub iters_per_epoch: usize,
    pub epochs: usize,
    pub iterations: Vec<IterationRecord>,
    pub evals: Vec<EvalRecord>,
    pub noise_audit: Option<NoiseAudit>,
}

impl TrainHistory {
    /// Mean accuracy of `model` over the evaluations of the final epoch.
    pub fn stable_accuracy(&self, model: ModelKind) -> Option<f64> {
        self.stable_evals(model)
            .map(|evs| evs.iter().map(|e| e.metrics.accuracy).sum::<f64>() / evs.len() as f64)
    }

    /// Mean per-class recall of `model` over the final epoch's evaluations.
    pub fn stable_recall(&self, model: ModelKind) -> Option<Vec<f64>> {
        let evs = self.stable_evals(model)?;
        let c = evs[0].metrics.per_class_recall.len();
        let mut out = vec![0.0; c];
        for e in &evs {
            for (o, r) in out.iter_mut().zip(&e.metrics.per_class_recall) {
                *o += r;
            }
        }
        Some(out.into_iter().map(|v| v / evs.len() as f64).collect())
    }

    fn stable_evals(&self, model: ModelKind) -> Option<Vec<&EvalRecord>> {
        let last = self.epochs.checked_sub(1)?;
        let evs: Vec<&EvalRecord> = self
            .evals
            .iter()
            .filter(|e| e.model == model && e.epoch == last)
            .collect();
        (!evs.is_empty()).then_some(evs)
    }

    /// End-of-epoch metrics for `model`, in epoch order.
    pub fn epoch_metrics(&self, model: ModelKind) -> Vec<&EvalRecord> {
        self.evals
            .iter()
            .filter(|e| e.model == model && e.epoch_end)
            .collect()
    }

    pub fn models(&self) -> Vec<ModelKind> {
        let mut out: Vec<ModelKind> = Vec::new();
        for e in &self.evals {
            if !out.contains(&e.model) {
                out.push(e.model);
            }
        }
        out
    }
}

/// Iterations per epoch: one pass over the unlabeled pool when it is used,
/// otherwise one pass over the labeled pool.
pub fn default_iters_per_epoch(
    n_labeled: usize,
    n_unlabeled: usize,
    batch_size: usize,
    labeled_fraction: f64,
) -> Result<usize> {
    let (l, u) = crate::data::batch_counts(batch_size, labeled_fraction)?;
    Ok(if u > 0 && n_unlabeled > 0 {
        n_unlabeled.div_ceil(u)
    } else {
        n_labeled.div_ceil(l)
    }
    .max(1))
}

/// Whether to evaluate after 0-based iteration `idx`.
pub(crate) fn eval_due(idx: usize, ipe: usize, epochs: usize, interval: usize) -> (bool, bool) {
    let in_epoch = idx % ipe + 1;
    let epoch_end = in_epoch == ipe;
    let final_epoch = idx / ipe + 1 == epochs;
    (
        epoch_end || (final_epoch && in_epoch.is_multiple_of(interval)),
        epoch_end,
    )
}
