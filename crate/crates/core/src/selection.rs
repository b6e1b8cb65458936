//! Small-loss selection of probably-clean labeled samples.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PtError, Result};
use crate::math::{ce_loss_index, predict_logits, softmax, NetConfig, ParamSet};
use crate::par::{self, Execution};

/// Split of a batch's labeled samples into kept and abandoned indices.
///
/// Both index lists are batch-local and sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub kept_indices: Vec<usize>,
    pub abandoned_indices: Vec<usize>,
    pub per_sample_loss: Vec<f64>,
}

/// Number of samples kept out of `n` at ratio `ratio`: `ceil(ratio * n)`,
/// at least one, at most `n`.
pub fn kept_count(n: usize, ratio: f64) -> usize {
    // the small slack absorbs products like 0.7 * 10 = 7.000000000000001
    let k = (ratio * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Cross-entropy of the teacher's prediction for every (already augmented)
/// labeled input.
pub fn per_sample_ce(
    teacher: &ParamSet,
    inputs: &[Vec<f64>],
    labels: &[usize],
    cfg: &NetConfig,
    exec: Execution,
) -> Result<Vec<f64>> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(PtError::Contract(
            "per-sample loss needs a nonempty batch with one label per input".into(),
        ));
    }
    par::map(exec, inputs, |i, x| {
        let logits = predict_logits(teacher, x, cfg)?;
        Ok(ce_loss_index(&softmax(&logits), labels[i]))
    })
    .into_iter()
    .collect()
}

/// Keep the `ceil(ratio * n)` smallest losses; ties go to the lower index.
pub fn select_small_loss(losses: &[f64], ratio: f64) -> Result<SelectionResult> {
    if losses.is_empty() {
        return Err(PtError::Contract(
            "cannot select from an empty batch".into(),
        ));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(PtError::Contract(format!(
            "selection ratio must be in (0,1], got {ratio}"
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(PtError::Contract("losses must be finite".into()));
    }
    let n = losses.len();
    let k = kept_count(n, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    let mut abandoned = order[k..].to_vec();
    kept.sort_unstable();
    abandoned.sort_unstable();
    Ok(SelectionResult {
        kept_indices: kept,
        abandoned_indices: abandoned,
        per_sample_loss: losses.to_vec(),
    })
}

/// Move abandoned samples back into the kept set.
///
/// A sample is rescued if its confidence exceeds `threshold`; otherwise a
/// sample of class `c` is rescued with probability `class_keep_prob[c]`.
/// `confidences` is aligned with `result.abandoned_indices` and `labels` is
/// indexed by batch-local index.
pub fn confidence_rescue<R: Rng + ?Sized>(
    result: &SelectionResult,
    confidences: &[f64],
    threshold: f64,
    class_keep_prob: Option<&[f64]>,
    labels: &[usize],
    rng: &mut R,
) -> Result<SelectionResult> {
    if confidences.len() != result.abandoned_indices.len() {
        return Err(PtError::Contract(format!(
            "{} confidences for {} abandoned samples",
            confidences.len(),
            result.abandoned_indices.len()
        )));
    }
    if labels.len() != result.per_sample_loss.len() {
        return Err(PtError::Contract(
            "labels are not aligned with the batch".into(),
        ));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PtError::Contract(format!(
            "threshold must be in [0,1], got {threshold}"
        )));
    }
    let mut kept = result.kept_indices.clone();
    let mut abandoned = Vec::new();
    for (&idx, &c) in result.abandoned_indices.iter().zip(confidences) {
        let rescued = if c > threshold {
            true
        } else {
            match class_keep_prob {
                Some(probs) => {
                    let p = probs.get(labels[idx]).copied().unwrap_or(0.0);
                    p > 0.0 && rng.random::<f64>() < p
                }
                None => false,
            }
        };
        if rescued {
            kept.push(idx);
        } else {
            abandoned.push(idx);
        }
    }
    kept.sort_unstable();
    Ok(SelectionResult {
        kept_indices: kept,
        abandoned_indices: abandoned,
        per_sample_loss: result.per_sample_loss.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::NetConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_sorted_example() {
        let r = select_small_loss(&[0.1, 2.3, 0.5, 9.0], 0.75).unwrap();
        assert_eq!(r.kept_indices, vec![0, 1, 2]);
        assert_eq!(r.abandoned_indices, vec![3]);
    }

    #[test]
    fn ratio_one_keeps_all() {
        let r = select_small_loss(&[3.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(r.kept_indices, vec![0, 1, 2]);
        assert!(r.abandoned_indices.is_empty());
    }

    #[test]
    fn ties_prefer_lower_index() {
        let r = select_small_loss(&[1.0, 1.0, 1.0, 1.0], 0.5).unwrap();
        assert_eq!(r.kept_indices, vec![0, 1]);
    }

    #[test]
    fn kept_count_is_robust_to_rounding() {
        assert_eq!(kept_count(10, 0.7), 7);
        assert_eq!(kept_count(50, 0.95), 48);
        assert_eq!(kept_count(3, 0.01), 1);
        assert_eq!(kept_count(50, 0.6), 30);
    }

    #[test]
    fn empty_losses_rejected() {
        assert!(select_small_loss(&[], 0.5).is_err());
    }

    #[test]
    fn uniform_teacher_gives_log_c() {
        let cfg = NetConfig::new(2, vec![3], 7);
        let t = ParamSet::zeros(&cfg);
        let xs = vec![vec![0.3, 0.1], vec![-2.0, 1.0]];
        let l = per_sample_ce(&t, &xs, &[0, 6], &cfg, Execution::Sequential).unwrap();
        for v in l {
            assert!((v - 7f64.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn rescue_noop_and_threshold() {
        let base = select_small_loss(&[0.1, 5.0, 0.2, 4.0], 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels = [0, 1, 0, 2];
        let same = confidence_rescue(&base, &[0.0, 0.0], 0.9, None, &labels, &mut rng).unwrap();
        assert_eq!(same, base);
        let r = confidence_rescue(&base, &[0.95, 0.1], 0.9, None, &labels, &mut rng).unwrap();
        assert_eq!(r.kept_indices, vec![0, 1, 2]);
        assert_eq!(r.abandoned_indices, vec![3]);
    }

    #[test]
    fn rescue_with_certain_class_probability() {
        let base = select_small_loss(&[0.1, 5.0, 0.2, 4.0, 3.0], 0.4).unwrap();
        let labels = [0, 1, 0, 1, 2];
        let probs = [0.0, 1.0, 0.0];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r =
                confidence_rescue(&base, &[0.0; 3], 0.9, Some(&probs), &labels, &mut rng).unwrap();
            assert_eq!(r.kept_indices, vec![0, 1, 2, 3]);
            assert_eq!(r.abandoned_indices, vec![4]);
        }
    }

    #[test]
    fn rescue_rejects_misaligned() {
        let base = select_small_loss(&[0.1, 5.0], 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(confidence_rescue(&base, &[], 0.9, None, &[0, 1], &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn partition_and_ordering(losses in prop::collection::vec(0.0f64..10.0, 1..64), ratio in 0.01f64..=1.0) {
            let r = select_small_loss(&losses, ratio).unwrap();
            let n = losses.len();
            prop_assert_eq!(r.kept_indices.len(), kept_count(n, ratio));
            let mut all: Vec<usize> = r.kept_indices.iter().chain(&r.abandoned_indices).cloned().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let max_kept = r.kept_indices.iter().map(|&i| losses[i]).fold(f64::NEG_INFINITY, f64::max);
            let min_ab = r.abandoned_indices.iter().map(|&i| losses[i]).fold(f64::INFINITY, f64::min);
            prop_assert!(max_kept <= min_ab);
        }

        #[test]
        fn permutation_equivariant(losses in prop::collection::vec(0.0f64..10.0, 1..40), ratio in 0.01f64..=1.0, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..losses.len()).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            // continuous draws are distinct almost surely, so ties do not matter here
            let permuted: Vec<f64> = perm.iter().map(|&i| losses[i]).collect();
            let a = select_small_loss(&losses, ratio).unwrap();
            let b = select_small_loss(&permuted, ratio).unwrap();
            let mut mapped: Vec<usize> = b.kept_indices.iter().map(|&j| perm[j]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(mapped, a.kept_indices);
        }
    }
}
