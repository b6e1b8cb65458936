use serde::{Deserialize, Serialize};

use crate::data::{augment, keyed_rng, AugmentationSpec, MiniBatch, ROLE_STUDENT, ROLE_TEACHER};
use crate::ema::TeacherState;
use crate::error::{PtError, Result};
use crate::math::{
    backward_into, ce_loss_index, forward, mse_consistency, predict_logits,
    sgd_momentum_step_in_place, softmax, softmax_backward, GradSet, NetConfig, ParamSet,
};
use crate::par::{self, Execution};

use super::GroupState;

/// Augmented views of one mini-batch. Inputs are ordered labeled part
/// first, then unlabeled part.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub student_inputs: Vec<Vec<f64>>,
    pub teacher_inputs: Vec<Vec<f64>>,
    /// Labels of the labeled part.
    pub labels: Vec<usize>,
}

impl AugmentedBatch {
    /// Draw the student (`eta`) and teacher (`eta'`) views of `batch` from
    /// the streams of `seed` at 0-based iteration `iter`.
    pub fn draw(
        batch: &MiniBatch,
        aug: &AugmentationSpec,
        seed: u64,
        iter: usize,
        exec: Execution,
    ) -> Self {
        AugmentedBatch {
            student_inputs: augment_batch(batch, aug, seed, iter, ROLE_STUDENT, true, exec),
            teacher_inputs: augment_batch(batch, aug, seed, iter, ROLE_TEACHER, true, exec),
            labels: batch.labeled_part.iter().map(|e| e.y).collect(),
        }
    }
}

/// Augment every batch member with its own keyed stream.
pub(crate) fn augment_batch(
    batch: &MiniBatch,
    aug: &AugmentationSpec,
    seed: u64,
    iter: usize,
    role: u64,
    include_unlabeled: bool,
    exec: Execution,
) -> Vec<Vec<f64>> {
    let members: Vec<(&[f64], u64)> = if include_unlabeled {
        batch.inputs().collect()
    } else {
        batch
            .labeled_part
            .iter()
            .map(|e| (e.x.as_slice(), e.id))
            .collect()
    };
    par::map(exec, &members, |_, &(x, id)| {
        if aug.is_identity() {
            x.to_vec()
        } else {
            augment(x, aug, &mut keyed_rng(seed, iter as u64, id, role))
        }
    })
}

/// Softmax outputs of `model` for every input.
pub(crate) fn predict_probs(
    model: &ParamSet,
    inputs: &[Vec<f64>],
    cfg: &NetConfig,
    exec: Execution,
) -> Result<Vec<Vec<f64>>> {
    par::map(exec, inputs, |_, x| {
        predict_logits(model, x, cfg).map(|z| softmax(&z))
    })
    .into_iter()
    .collect()
}

/// Value and gradient of a student's objective `L_s + omega * L_u`.
#[derive(Debug, Clone)]
pub struct SnetLoss {
    pub supervised: f64,
    pub unsupervised: f64,
    pub total: f64,
    pub grads: GradSet,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct StepLosses {
    pub supervised: f64,
    pub unsupervised: f64,
}

/// Student objective against a teacher evaluated on the teacher view.
///
/// The supervised term averages cross-entropy over the `kept` labeled
/// indices (0 when none are kept); the consistency term averages the squared
/// distance between student and teacher softmax outputs over every batch
/// member.
pub fn loss_snet(
    student: &ParamSet,
    teacher: &TeacherState,
    kept: &[usize],
    batch: &AugmentedBatch,
    omega: f64,
    cfg: &NetConfig,
    exec: Execution,
) -> Result<SnetLoss> {
    let targets = predict_probs(&teacher.weights, &batch.teacher_inputs, cfg, exec)?;
    loss_snet_with_targets(
        student,
        Some(&targets),
        kept,
        &batch.student_inputs,
        &batch.labels,
        omega,
        cfg,
        exec,
    )
}

/// [`loss_snet`] with precomputed teacher outputs. With `targets = None` the
/// consistency term is skipped entirely.
#[allow(clippy::too_many_arguments)]
pub fn loss_snet_with_targets(
    student: &ParamSet,
    targets: Option<&[Vec<f64>]>,
    kept: &[usize],
    student_inputs: &[Vec<f64>],
    labels: &[usize],
    omega: f64,
    cfg: &NetConfig,
    exec: Execution,
) -> Result<SnetLoss> {
    let n_labeled = labels.len();
    if n_labeled > student_inputs.len() {
        return Err(PtError::Contract("more labels than batch inputs".into()));
    }
    if let Some(t) = targets {
        if t.len() != student_inputs.len() {
            return Err(PtError::Contract(
                "teacher targets not aligned with batch".into(),
            ));
        }
    }
    let mut kept_mask = vec![false; n_labeled];
    for &k in kept {
        if k >= n_labeled {
            return Err(PtError::Contract(format!(
                "kept index {k} is not a labeled sample"
            )));
        }
        kept_mask[k] = true;
    }
    let n_kept = kept_mask.iter().filter(|&&k| k).count();
    let inv_kept = if n_kept > 0 { 1.0 / n_kept as f64 } else { 0.0 };
    let use_consistency = targets.is_some() && omega != 0.0;
    let n = if use_consistency {
        student_inputs.len()
    } else {
        n_labeled
    };
    let scale_u = omega * 2.0 / n as f64;

    type Acc = (GradSet, f64, f64, Option<PtError>);
    let chunks: Vec<Acc> = par::fold_chunks(
        exec,
        n,
        || (GradSet::zeros_like(student), 0.0, 0.0, None),
        |acc, i| {
            if acc.3.is_some() {
                return;
            }
            let labeled_kept = i < n_labeled && kept_mask[i];
            if !labeled_kept && !use_consistency {
                return;
            }
            let trace = match forward(student, &student_inputs[i], cfg) {
                Ok(t) => t,
                Err(e) => {
                    acc.3 = Some(e);
                    return;
                }
            };
            let p = softmax(trace.logits());
            let mut d = vec![0.0; p.len()];
            if labeled_kept {
                let y = labels[i];
                acc.1 += ce_loss_index(&p, y);
                for (j, dj) in d.iter_mut().enumerate() {
                    let target = if j == y { 1.0 } else { 0.0 };
                    *dj = (p[j] - target) * inv_kept;
                }
            }
            if use_consistency {
                let t = &targets.unwrap()[i];
                acc.2 += mse_consistency(&p, t).unwrap_or(f64::NAN);
                let diff: Vec<f64> = p.iter().zip(t).map(|(a, b)| a - b).collect();
                let dz = softmax_backward(&p, &diff);
                if labeled_kept {
                    for (dj, z) in d.iter_mut().zip(dz) {
                        *dj += scale_u * z;
                    }
                } else {
                    for (dj, z) in d.iter_mut().zip(dz) {
                        *dj = scale_u * z;
                    }
                }
            }
            if let Err(e) = backward_into(&trace, student, &d, cfg, &mut acc.0) {
                acc.3 = Some(e);
            }
        },
    );

    let mut grads = GradSet::zeros_like(student);
    let (mut ce_sum, mut mse_sum) = (0.0, 0.0);
    for (g, ce, mse, err) in chunks {
        if let Some(e) = err {
            return Err(e);
        }
        grads.add_assign(&g);
        ce_sum += ce;
        mse_sum += mse;
    }
    let supervised = ce_sum * inv_kept;
    let unsupervised = if use_consistency {
        mse_sum / n as f64
    } else {
        0.0
    };
    let total = if use_consistency {
        supervised + omega * unsupervised
    } else {
        supervised
    };
    Ok(SnetLoss {
        supervised,
        unsupervised,
        total,
        grads,
    })
}

/// One optimizer step of a group's student.
#[allow(clippy::too_many_arguments)]
pub(crate) fn student_step(
    group: &mut GroupState,
    targets: Option<&[Vec<f64>]>,
    kept: &[usize],
    student_inputs: &[Vec<f64>],
    labels: &[usize],
    omega: f64,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    cfg: &NetConfig,
    exec: Execution,
    iteration: usize,
    group_index: usize,
) -> Result<StepLosses> {
    let loss = loss_snet_with_targets(
        &group.student,
        targets,
        kept,
        student_inputs,
        labels,
        omega,
        cfg,
        exec,
    )?;
    let diverged = |detail: String| PtError::Divergence {
        iteration,
        group: group_index,
        detail,
    };
    if !loss.total.is_finite() {
        return Err(diverged(format!(
            "loss is {} (supervised {}, consistency {})",
            loss.total, loss.supervised, loss.unsupervised
        )));
    }
    sgd_momentum_step_in_place(
        &mut group.student,
        &loss.grads,
        &mut group.velocity,
        lr,
        momentum,
        weight_decay,
    )
    .map_err(|e| match e {
        PtError::Divergence { detail, .. } => diverged(detail),
        other => other,
    })?;
    Ok(StepLosses {
        supervised: loss.supervised,
        unsupervised: loss.unsupervised,
    })
}
