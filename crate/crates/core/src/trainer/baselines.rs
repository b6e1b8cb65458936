use serde::{Deserialize, Serialize};

use crate::data::{
    compose_minibatch, BatchSampler, DatasetSplit, LabeledExample, ROLE_STUDENT, ROLE_TEACHER,
};
use crate::ema::ema_update;
use crate::error::{PtError, Result};
use crate::math::ParamSet;
use crate::schedules::{ema_coefficient, learning_rate, rampup_weight};

use super::step::{augment_batch, predict_probs, student_step};
use super::{
    default_iters_per_epoch, eval_due, evaluate, predict_class, EvalRecord, GroupState,
    IterationRecord, ModelKind, TrainConfig, TrainHistory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Finetune,
    MeanTeacher,
    PseudoLabel,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    /// The model to report: the student for fine-tune and pseudo-label, the
    /// teacher for mean teacher.
    pub model: ParamSet,
    pub reported: ModelKind,
    pub group: GroupState,
    pub history: TrainHistory,
}

pub fn train_baseline(
    kind: BaselineKind,
    config: &TrainConfig,
    data: &DatasetSplit,
) -> Result<BaselineRun> {
    match kind {
        BaselineKind::Finetune => train_finetune(config, data),
        BaselineKind::MeanTeacher => train_mean_teacher(config, data),
        BaselineKind::PseudoLabel => train_pseudo_label(config, data),
    }
}

/// Supervised training of one network on the labeled pool, using group 1's
/// seed. The iteration budget matches what a semi-supervised run on the
/// same data would get.
pub fn train_finetune(config: &TrainConfig, data: &DatasetSplit) -> Result<BaselineRun> {
    config.validate()?;
    config.check_data(data)?;
    let (data, audit) = config.noisy_data(data)?;
    let ipe = match config.iters_per_epoch {
        Some(n) => n,
        None => default_iters_per_epoch(
            data.labeled.len(),
            data.unlabeled.len(),
            config.batch_size,
            config.labeled_fraction,
        )?,
    };
    let mut run = supervised_loop(config, &data.labeled, &data.test, ipe)?;
    run.history.noise_audit = Some(audit);
    Ok(run)
}

fn supervised_loop(
    config: &TrainConfig,
    pool: &[LabeledExample],
    test: &[LabeledExample],
    ipe: usize,
) -> Result<BaselineRun> {
    let exec = config.execution;
    let net = &config.net;
    let sched = &config.schedules;
    let seed = config.seeds.group1;
    let mut sampler = BatchSampler::new(
        pool.len(),
        0,
        config.batch_size,
        config.labeled_fraction,
        config.seeds.data,
    )?;
    let epochs = sched.total_epochs;
    let mut group = GroupState::init(net, seed);
    let mut history = TrainHistory {
        iters_per_epoch: ipe,
        epochs,
        ..Default::default()
    };
    for idx in 0..epochs * ipe {
        let t = idx + 1;
        let epoch = idx / ipe;
        let lr = learning_rate(epoch, sched);
        let batch = compose_minibatch(pool, &[], &mut sampler)?;
        let labels: Vec<usize> = batch.labeled_part.iter().map(|e| e.y).collect();
        let kept: Vec<usize> = (0..labels.len()).collect();
        let inputs = augment_batch(&batch, &config.aug, seed, idx, ROLE_STUDENT, false, exec);
        let losses = student_step(
            &mut group,
            None,
            &kept,
            &inputs,
            &labels,
            0.0,
            lr,
            config.momentum,
            config.weight_decay,
            net,
            exec,
            t,
            1,
        )?;
        history.iterations.push(IterationRecord {
            iteration: t,
            epoch,
            supervised_loss: vec![losses.supervised],
            unsupervised_loss: vec![0.0],
            ratio: 1.0,
            omega: 0.0,
            alpha: 0.0,
            lr,
            labeled_in_batch: labels.len(),
            kept: vec![labels.len()],
            rescued: vec![0],
            abandoned: vec![Vec::new()],
        });
        let (due, epoch_end) = eval_due(idx, ipe, epochs, config.eval_interval);
        if due {
            history.evals.push(EvalRecord {
                iteration: t,
                epoch,
                epoch_end,
                model: ModelKind::Student1,
                metrics: evaluate(&group.student, test, net, exec)?,
            });
        }
    }
    Ok(BaselineRun {
        model: group.student.clone(),
        reported: ModelKind::Student1,
        group,
        history,
    })
}

/// One teacher-student group: no selection, consistency against its own
/// teacher, group 1's seeds.
pub fn train_mean_teacher(config: &TrainConfig, data: &DatasetSplit) -> Result<BaselineRun> {
    config.validate()?;
    config.check_data(data)?;
    let (data, audit) = config.noisy_data(data)?;
    let exec = config.execution;
    let net = &config.net;
    let sched = &config.schedules;
    let seed = config.seeds.group1;
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
    let mut group = GroupState::init(net, seed);
    let mut history = TrainHistory {
        iters_per_epoch: ipe,
        epochs,
        noise_audit: Some(audit),
        ..Default::default()
    };
    for idx in 0..epochs * ipe {
        let t = idx + 1;
        let epoch = idx / ipe;
        let omega = rampup_weight(idx as f64 / ipe as f64, sched);
        let alpha = ema_coefficient(idx, sched);
        let lr = learning_rate(epoch, sched);
        let consistency = omega != 0.0;
        let batch = compose_minibatch(&data.labeled, &data.unlabeled, &mut sampler)?;
        let labels: Vec<usize> = batch.labeled_part.iter().map(|e| e.y).collect();
        let kept: Vec<usize> = (0..labels.len()).collect();

        let targets = if consistency {
            let teacher_inputs =
                augment_batch(&batch, &config.aug, seed, idx, ROLE_TEACHER, true, exec);
            Some(predict_probs(
                &group.teacher.weights,
                &teacher_inputs,
                net,
                exec,
            )?)
        } else {
            None
        };
        let inputs = augment_batch(
            &batch,
            &config.aug,
            seed,
            idx,
            ROLE_STUDENT,
            consistency,
            exec,
        );
        let losses = student_step(
            &mut group,
            targets.as_deref(),
            &kept,
            &inputs,
            &labels,
            omega,
            lr,
            config.momentum,
            config.weight_decay,
            net,
            exec,
            t,
            1,
        )?;
        ema_update(&mut group.teacher, &group.student, alpha)?;
        history.iterations.push(IterationRecord {
            iteration: t,
            epoch,
            supervised_loss: vec![losses.supervised],
            unsupervised_loss: vec![losses.unsupervised],
            ratio: 1.0,
            omega,
            alpha,
            lr,
            labeled_in_batch: labels.len(),
            kept: vec![labels.len()],
            rescued: vec![0],
            abandoned: vec![Vec::new()],
        });
        let (due, epoch_end) = eval_due(idx, ipe, epochs, config.eval_interval);
        if due {
            for (model, params) in [
                (ModelKind::Student1, &group.student),
                (ModelKind::Teacher1, &group.teacher.weights),
            ] {
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
    Ok(BaselineRun {
        model: group.teacher.weights.clone(),
        reported: ModelKind::Teacher1,
        group,
        history,
    })
}

/// Fine-tune, label the unlabeled pool with the model's argmax, then
/// retrain from the same initialization on the union with the same
/// iteration budget.
pub fn train_pseudo_label(config: &TrainConfig, data: &DatasetSplit) -> Result<BaselineRun> {
    let first = train_finetune(config, data)?;
    let (noisy, _) = config.noisy_data(data)?;
    if noisy.unlabeled.is_empty() {
        return Err(PtError::Config(
            "pseudo-labeling needs an unlabeled pool".into(),
        ));
    }
    let mut pool = noisy.labeled.clone();
    for e in &noisy.unlabeled {
        pool.push(LabeledExample {
            x: e.x.clone(),
            y: predict_class(&first.model, &e.x, &config.net)?,
            id: e.id,
        });
    }
    let mut run = supervised_loop(config, &pool, &noisy.test, first.history.iters_per_epoch)?;
    run.history.noise_audit = first.history.noise_audit;
    Ok(run)
}
