//! Confidence estimator used to rescue hard-but-clean samples from
//! small-loss abandonment.
//!
//! The estimator is a separate MLP with a shared trunk and two linear heads:
//! `C` class logits and one confidence logit. Both heads read the last
//! hidden layer, so they are stored as a single output layer of width
//! `C + 1` whose last unit is the confidence logit.
//!
//! Training interpolates the prediction towards the label by the
//! confidence, `p' = c * p + (1 - c) * y`, and pays `-lambda * ln c` for
//! asking for the hint. `lambda` is adapted so the mean confidence tracks a
//! budget.

use serde::{Deserialize, Serialize};

use crate::data::{augment, keyed_rng, AugmentationSpec, LabeledExample, ROLE_CONFIDENCE};
use crate::ema::{ema_update, init_teacher, TeacherState};
use crate::error::{PtError, Result};
use crate::math::{
    backward_into, forward, predict_logits, sgd_momentum_step_in_place, softmax, GradSet,
    NetConfig, ParamSet, LOG_EPS,
};
use crate::par::{self, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfidenceConfig {
    pub enabled: bool,
    /// Abandoned samples with confidence above this are kept.
    pub threshold: f64,
    /// Initial weight of the `-ln c` penalty.
    pub penalty: f64,
    /// Mean confidence the adaptive penalty aims for.
    pub budget_target: f64,
    /// Multiplicative step of the penalty controller.
    pub penalty_step: f64,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        ConfidenceConfig {
            enabled: true,
            threshold: 0.9,
            penalty: 0.1,
            budget_target: 0.7,
            penalty_step: 1.01,
            hidden_dims: vec![64, 64],
            seed: 0xC0F1,
        }
    }
}

impl ConfidenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PtError::Config(
                "confidence threshold must be in [0,1]".into(),
            ));
        }
        if !(self.penalty > 0.0 && self.penalty.is_finite()) {
            return Err(PtError::Config(
                "confidence penalty must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.budget_target) {
            return Err(PtError::Config("budget_target must be in [0,1]".into()));
        }
        if !(self.penalty_step >= 1.0) {
            return Err(PtError::Config("penalty_step must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceNet {
    /// Architecture with `num_classes + 1` outputs.
    pub net: NetConfig,
    pub params: ParamSet,
}

impl ConfidenceNet {
    pub fn num_classes(&self) -> usize {
        self.net.num_classes - 1
    }

    pub fn init(input_dim: usize, hidden_dims: &[usize], num_classes: usize, seed: u64) -> Self {
        let net = NetConfig::new(input_dim, hidden_dims.to_vec(), num_classes + 1);
        let params = ParamSet::init_uniform(&net, seed);
        ConfidenceNet { net, params }
    }

    /// The class-head-only network: same trunk, output layer without the
    /// confidence unit.
    pub fn class_model(&self) -> (NetConfig, ParamSet) {
        let c = self.num_classes();
        let mut cfg = self.net.clone();
        cfg.num_classes = c;
        let mut layers = self.params.layers().to_vec();
        let last = layers.last_mut().unwrap();
        let width = last.outputs;
        last.weights = last
            .weights
            .chunks_exact(width)
            .flat_map(|row| row[..c].to_vec())
            .collect();
        last.bias.truncate(c);
        last.outputs = c;
        (
            cfg,
            ParamSet::from_layers(layers).expect("sliced layers stay consistent"),
        )
    }
}

#[inline]
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Class probabilities and confidence in `(0, 1)`.
pub fn forward_with_confidence(net: &ConfidenceNet, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let logits = predict_logits(&net.params, x, &net.net)?;
    Ok(split_logits(&logits))
}

fn split_logits(logits: &[f64]) -> (Vec<f64>, f64) {
    let c = logits.len() - 1;
    (softmax(&logits[..c]), sigmoid(logits[c]))
}

/// `-ln(c * p_y + (1 - c) + eps) - penalty * ln(c + eps)`.
pub fn confidence_loss(probs: &[f64], c: f64, y_onehot: &[f64], penalty: f64) -> Result<f64> {
    if probs.len() != y_onehot.len() {
        return Err(PtError::Contract(
            "probability and target lengths differ".into(),
        ));
    }
    let y = y_onehot
        .iter()
        .position(|&v| v == 1.0)
        .filter(|_| y_onehot.iter().filter(|&&v| v != 0.0).count() == 1)
        .ok_or_else(|| PtError::Contract("target is not one-hot".into()))?;
    Ok(loss_from_parts(probs[y], c, penalty))
}

#[inline]
fn loss_from_parts(p_y: f64, c: f64, penalty: f64) -> f64 {
    let hinted = c * p_y + (1.0 - c);
    -(hinted + LOG_EPS).ln() - penalty * (c + LOG_EPS).ln()
}

/// Loss and its gradient with respect to all `C + 1` output logits.
pub fn confidence_loss_grad(logits: &[f64], y: usize, penalty: f64) -> (f64, Vec<f64>) {
    let (p, c) = split_logits(logits);
    let p_y = p[y];
    let hinted = c * p_y + (1.0 - c) + LOG_EPS;
    let loss = loss_from_parts(p_y, c, penalty);
    let d_py = -c / hinted;
    let mut d: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(j, &pj)| {
            let delta = if j == y { 1.0 } else { 0.0 };
            d_py * p_y * (delta - pj)
        })
        .collect();
    let d_c = -(p_y - 1.0) / hinted - penalty / (c + LOG_EPS);
    d.push(d_c * c * (1.0 - c));
    (loss, d)
}

/// Confidence of every input under `net`, in input order.
pub fn rescue_scores(
    net: &ConfidenceNet,
    inputs: &[Vec<f64>],
    exec: Execution,
) -> Result<Vec<f64>> {
    par::map(exec, inputs, |_, x| {
        forward_with_confidence(net, x).map(|(_, c)| c)
    })
    .into_iter()
    .collect()
}

/// Mean loss and gradient over a labeled set.
pub fn batch_confidence_loss(
    net: &ConfidenceNet,
    inputs: &[Vec<f64>],
    labels: &[usize],
    penalty: f64,
    exec: Execution,
) -> Result<(f64, f64, GradSet)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(PtError::Contract(
            "confidence batch needs one label per input".into(),
        ));
    }
    let inv = 1.0 / inputs.len() as f64;
    type Acc = (GradSet, f64, f64, Option<PtError>);
    let chunks: Vec<Acc> = par::fold_chunks(
        exec,
        inputs.len(),
        || (GradSet::zeros_like(&net.params), 0.0, 0.0, None),
        |acc, i| {
            let trace = match forward(&net.params, &inputs[i], &net.net) {
                Ok(t) => t,
                Err(e) => {
                    acc.3 = Some(e);
                    return;
                }
            };
            let (loss, d) = confidence_loss_grad(trace.logits(), labels[i], penalty);
            acc.1 += loss;
            let logits = trace.logits();
            acc.2 += sigmoid(logits[logits.len() - 1]);
            let d: Vec<f64> = d.into_iter().map(|v| v * inv).collect();
            if let Err(e) = backward_into(&trace, &net.params, &d, &net.net, &mut acc.0) {
                acc.3 = Some(e);
            }
        },
    );
    let mut grads = GradSet::zeros_like(&net.params);
    let (mut loss, mut conf) = (0.0, 0.0);
    for (g, l, c, err) in chunks {
        if let Some(e) = err {
            return Err(e);
        }
        grads.add_assign(&g);
        loss += l;
        conf += c;
    }
    Ok((loss * inv, conf * inv, grads))
}

/// A confidence estimator trained alongside the main run, with an EMA
/// teacher used for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceState {
    pub student: ConfidenceNet,
    pub velocity: ParamSet,
    pub teacher: TeacherState,
    pub penalty: f64,
    pub last_mean_confidence: f64,
}

impl ConfidenceState {
    pub fn new(cfg: &ConfidenceConfig, input_dim: usize, num_classes: usize) -> Self {
        let student = ConfidenceNet::init(input_dim, &cfg.hidden_dims, num_classes, cfg.seed);
        let velocity = ParamSet::zeros(&student.net);
        let teacher = init_teacher(&student.params);
        ConfidenceState {
            student,
            velocity,
            teacher,
            penalty: cfg.penalty,
            last_mean_confidence: 0.5,
        }
    }

    pub fn teacher_net(&self) -> ConfidenceNet {
        ConfidenceNet {
            net: self.student.net.clone(),
            params: self.teacher.weights.clone(),
        }
    }

    /// Scores from the teacher weights.
    pub fn scores(&self, inputs: &[Vec<f64>], exec: Execution) -> Result<Vec<f64>> {
        let net = ConfidenceNet {
            net: self.student.net.clone(),
            params: self.teacher.weights.clone(),
        };
        rescue_scores(&net, inputs, exec)
    }

    /// One SGD step on the labeled part of a batch, then EMA and penalty
    /// adaptation.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        cfg: &ConfidenceConfig,
        batch: &[LabeledExample],
        aug: &AugmentationSpec,
        iter: usize,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        alpha: f64,
        exec: Execution,
    ) -> Result<()> {
        let inputs: Vec<Vec<f64>> = par::map(exec, batch, |_, e| {
            if aug.is_identity() {
                e.x.clone()
            } else {
                augment(
                    &e.x,
                    aug,
                    &mut keyed_rng(cfg.seed, iter as u64, e.id, ROLE_CONFIDENCE),
                )
            }
        });
        let labels: Vec<usize> = batch.iter().map(|e| e.y).collect();
        let (loss, mean_c, grads) =
            batch_confidence_loss(&self.student, &inputs, &labels, self.penalty, exec)?;
        if !loss.is_finite() {
            return Err(PtError::Divergence {
                iteration: iter + 1,
                group: 0,
                detail: format!("confidence loss is {loss}"),
            });
        }
        sgd_momentum_step_in_place(
            &mut self.student.params,
            &grads,
            &mut self.velocity,
            lr,
            momentum,
            weight_decay,
        )?;
        ema_update(&mut self.teacher, &self.student.params, alpha)?;
        if mean_c < cfg.budget_target {
            self.penalty *= cfg.penalty_step;
        } else {
            self.penalty /= cfg.penalty_step;
        }
        self.last_mean_confidence = mean_c;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::one_hot;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_head_gives_half_confidence() {
        let mut net = ConfidenceNet::init(4, &[6], 3, 1);
        let last = net.params.layers_mut().last_mut().unwrap();
        let w = last.outputs;
        for row in last.weights.chunks_exact_mut(w) {
            row[w - 1] = 0.0;
        }
        last.bias[w - 1] = 0.0;
        let (_, c) = forward_with_confidence(&net, &[0.3, -0.2, 1.0, 2.0]).unwrap();
        assert_eq!(c, 0.5);
    }

    #[test]
    fn class_head_matches_plain_model() {
        let net = ConfidenceNet::init(4, &[6, 5], 3, 7);
        let (cfg, plain) = net.class_model();
        let x = [0.1, 0.2, -0.7, 1.5];
        let (p, _) = forward_with_confidence(&net, &x).unwrap();
        let q = softmax(&predict_logits(&plain, &x, &cfg).unwrap());
        assert_eq!(p, q);
    }

    #[test]
    fn confidence_in_open_unit_interval() {
        let net = ConfidenceNet::init(3, &[8], 4, 2);
        for i in 0..200 {
            let x = [
                (i as f64).sin() * 5.0,
                (i as f64 * 0.3).cos() * 9.0,
                i as f64 * 0.05,
            ];
            let (_, c) = forward_with_confidence(&net, &x).unwrap();
            assert!(c > 0.0 && c < 1.0);
        }
    }

    #[test]
    fn loss_limits() {
        let p = [0.2, 0.5, 0.3];
        let y = one_hot(0, 3);
        let full = confidence_loss(&p, 1.0, &y, 0.5).unwrap();
        assert_abs_diff_eq!(
            full,
            -(0.2f64 + LOG_EPS).ln() - 0.5 * (1.0 + LOG_EPS).ln(),
            epsilon = 1e-12
        );
        // pinned at c = 1 without penalty this is plain cross-entropy
        let plain = confidence_loss(&p, 1.0, &y, 0.0).unwrap();
        assert_abs_diff_eq!(
            plain,
            crate::math::ce_loss(&p, &y).unwrap(),
            epsilon = 1e-15
        );
        // c -> 0: the hinted prediction is the label, penalty explodes but stays finite
        let tiny = confidence_loss(&p, 1e-300, &y, 1.0).unwrap();
        assert!(tiny.is_finite());
        assert!(tiny > 20.0);
    }

    #[test]
    fn grad_matches_finite_difference_at_logits() {
        let logits = [0.3, -1.2, 0.8, 0.4];
        let (_, d) = confidence_loss_grad(&logits, 2, 0.7);
        let h = 1e-6;
        for j in 0..4 {
            let mut a = logits;
            let mut b = logits;
            a[j] += h;
            b[j] -= h;
            let fd = (confidence_loss_grad(&a, 2, 0.7).0 - confidence_loss_grad(&b, 2, 0.7).0)
                / (2.0 * h);
            assert_abs_diff_eq!(d[j], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn untrained_scores_are_aligned_and_near_half() {
        let mut st = ConfidenceState::new(&ConfidenceConfig::default(), 3, 4);
        let last = st.teacher.weights.layers_mut().last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        let inputs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 0.0, 1.0]).collect();
        let s = st.scores(&inputs, Execution::Sequential).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|&c| c == 0.5));
    }
}
