use crate::confidence::ConfidenceState;
use crate::data::{
    compose_minibatch, keyed_rng, BatchSampler, DatasetSplit, ROLE_RESCUE, ROLE_STUDENT,
    ROLE_TEACHER,
};
use crate::ema::ema_update;
use crate::error::Result;
use crate::math::ce_loss_index;
use crate::schedules::{ema_coefficient, learning_rate, rampup_weight, selection_ratio};
use crate::selection::{confidence_rescue, select_small_loss, SelectionResult};

use super::step::{augment_batch, predict_probs, student_step};
use super::{
    eval_due, evaluate, EvalRecord, GroupState, Guidance, IterationRecord, ModelKind,
    SelectionMode, TrainConfig, TrainHistory,
};

/// Result of a two-group run.
#[derive(Debug, Clone)]
pub struct PtRun {
    pub group1: GroupState,
    pub group2: GroupState,
    pub history: TrainHistory,
    pub confidence: Option<ConfidenceState>,
}

impl PtRun {
    pub fn model(&self, which: ModelKind) -> &crate::math::ParamSet {
        match which {
            ModelKind::Student1 => &self.group1.student,
            ModelKind::Student2 => &self.group2.student,
            ModelKind::Teacher1 => &self.group1.teacher.weights,
            ModelKind::Teacher2 => &self.group2.teacher.weights,
        }
    }
}

/// Two teacher-student groups trained on a shared batch stream.
///
/// Per iteration, each teacher ranks the labeled part of the batch by its
/// cross-entropy and keeps the `R(t)` smallest-loss fraction. Each student
/// then trains on the samples kept by the guiding teacher (the other group's
/// under cross guidance) plus a consistency term against that teacher over
/// the whole batch. Both teachers are EMA-updated afterwards. All selections
/// use the teachers as they stood at the end of the previous iteration.
///
/// The configured label noise is applied to `data` before training; the
/// audit is stored in the returned history.
pub fn train_pt(config: &TrainConfig, data: &DatasetSplit) -> Result<PtRun> {
    config.validate()?;
    config.check_data(data)?;
    let (data, noise_audit) = config.noisy_data(data)?;
    let exec = config.execution;
    let net = &config.net;
    let sched = &config.schedules;

    let mut sampler = BatchSampler::new(
        data.labeled.len(),
        data.unlabeled.len(),
        config.batch_size,
        config.labeled_fraction,
        config.seeds.data,
    )?;
    let ipe = config
        .iters_per_epoch
        .unwrap_or_else(|| sampler.iters_per_epoch());
    let epochs = sched.total_epochs;
    let mut groups = [
        GroupState::init(net, config.seeds.group1),
        GroupState::init(net, config.seeds.group2),
    ];
    let conf_cfg = config.confidence.as_ref().filter(|c| c.enabled);
    let mut confidence = conf_cfg.map(|c| ConfidenceState::new(c, net.input_dim, net.num_classes));
    let rescue_enabled = conf_cfg.is_some() || config.class_keep_prob.is_some();

    let mut history = TrainHistory {
        iters_per_epoch: ipe,
        epochs,
        noise_audit: Some(noise_audit),
        ..Default::default()
    };

    for idx in 0..epochs * ipe {
        let t = idx + 1;
        let epoch = idx / ipe;
        let ratio = match config.selection_mode {
            SelectionMode::Progressive => selection_ratio(t, sched),
            SelectionMode::Fixed => 1.0 - sched.abandon_rate,
        };
        let omega = rampup_weight(idx as f64 / ipe as f64, sched);
        let alpha = ema_coefficient(idx, sched);
        let lr = learning_rate(epoch, sched);

        let batch = compose_minibatch(&data.labeled, &data.unlabeled, &mut sampler)?;
        let labels: Vec<usize> = batch.labeled_part.iter().map(|e| e.y).collect();
        let n_labeled = labels.len();
        let consistency = omega != 0.0;

        // teacher views, outputs and selections, all from last iteration's teachers
        let mut teacher_probs = Vec::with_capacity(2);
        let mut selections: Vec<SelectionResult> = Vec::with_capacity(2);
        let mut rescued = [0usize; 2];
        for (g, group) in groups.iter().enumerate() {
            let seed = config.seeds.group(g);
            let inputs = augment_batch(
                &batch,
                &config.aug,
                seed,
                idx,
                ROLE_TEACHER,
                consistency,
                exec,
            );
            let probs = predict_probs(&group.teacher.weights, &inputs, net, exec)?;
            let losses: Vec<f64> = probs[..n_labeled]
                .iter()
                .zip(&labels)
                .map(|(p, &y)| ce_loss_index(p, y))
                .collect();
            let mut sel = select_small_loss(&losses, ratio)?;
            if rescue_enabled && !sel.abandoned_indices.is_empty() {
                let abandoned_inputs: Vec<Vec<f64>> = sel
                    .abandoned_indices
                    .iter()
                    .map(|&i| inputs[i].clone())
                    .collect();
                let (scores, threshold) = match (&confidence, conf_cfg) {
                    (Some(state), Some(cc)) => {
                        (state.scores(&abandoned_inputs, exec)?, cc.threshold)
                    }
                    _ => (vec![0.0; abandoned_inputs.len()], 1.0),
                };
                let mut rng = keyed_rng(seed, idx as u64, g as u64, ROLE_RESCUE);
                let before = sel.kept_indices.len();
                sel = confidence_rescue(
                    &sel,
                    &scores,
                    threshold,
                    config.class_keep_prob.as_deref(),
                    &labels,
                    &mut rng,
                )?;
                rescued[g] = sel.kept_indices.len() - before;
            }
            teacher_probs.push(probs);
            selections.push(sel);
        }

        let mut supervised = vec![0.0; 2];
        let mut unsupervised = vec![0.0; 2];
        for g in 0..2 {
            let guide = match config.guidance {
                Guidance::Cross => 1 - g,
                Guidance::Same => g,
            };
            let seed = config.seeds.group(g);
            let inputs = augment_batch(
                &batch,
                &config.aug,
                seed,
                idx,
                ROLE_STUDENT,
                consistency,
                exec,
            );
            let targets = consistency.then(|| teacher_probs[guide].as_slice());
            let losses = student_step(
                &mut groups[g],
                targets,
                &selections[guide].kept_indices,
                &inputs,
                &labels,
                omega,
                lr,
                config.momentum,
                config.weight_decay,
                net,
                exec,
                t,
                g + 1,
            )?;
            supervised[g] = losses.supervised;
            unsupervised[g] = losses.unsupervised;
        }
        for group in groups.iter_mut() {
            ema_update(&mut group.teacher, &group.student, alpha)?;
        }
        if let (Some(state), Some(cc)) = (confidence.as_mut(), conf_cfg) {
            state.step(
                cc,
                &batch.labeled_part,
                &config.aug,
                idx,
                lr,
                config.momentum,
                config.weight_decay,
                alpha,
                exec,
            )?;
        }

        // a group's "abandoned" samples are those its guiding teacher dropped
        let abandoned = (0..2)
            .map(|g| {
                let guide = match config.guidance {
                    Guidance::Cross => 1 - g,
                    Guidance::Same => g,
                };
                selections[guide]
                    .abandoned_indices
                    .iter()
                    .map(|&i| batch.labeled_pool_indices[i])
                    .collect()
            })
            .collect();
        let kept = (0..2)
            .map(|g| {
                let guide = match config.guidance {
                    Guidance::Cross => 1 - g,
                    Guidance::Same => g,
                };
                selections[guide].kept_indices.len()
            })
            .collect();
        let rescued = (0..2)
            .map(|g| match config.guidance {
                Guidance::Cross => rescued[1 - g],
                Guidance::Same => rescued[g],
            })
            .collect();
        history.iterations.push(IterationRecord {
            iteration: t,
            epoch,
            supervised_loss: supervised,
            unsupervised_loss: unsupervised,
            ratio,
            omega,
            alpha,
            lr,
            labeled_in_batch: n_labeled,
            kept,
            rescued,
            abandoned,
        });

        let (due, epoch_end) = eval_due(idx, ipe, epochs, config.eval_interval);
        if due {
            for model in ModelKind::ALL {
                let params = match model {
                    ModelKind::Student1 => &groups[0].student,
                    ModelKind::Student2 => &groups[1].student,
                    ModelKind::Teacher1 => &groups[0].teacher.weights,
                    ModelKind::Teacher2 => &groups[1].teacher.weights,
                };
                history.evals.push(EvalRecord {
                    iteration: t,
                    epoch,
                    epoch_end,
                    model,
                    metrics: evaluate(params, &data.test, net, exec)?,
                });
            }
        }
    }

    let [group1, group2] = groups;
    Ok(PtRun {
        group1,
        group2,
        history,
        confidence,
    })
}
