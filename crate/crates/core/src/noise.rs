//! Synthetic label noise with a ground-truth record for audits.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PtError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Relabel a fraction of every class uniformly to the other classes.
    Symmetric,
    /// Swap a fraction of two confusable classes into each other.
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    #[serde(default)]
    pub swap_pair: Option<(usize, usize)>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(PtError::Config(format!(
                "noise rate must be in [0,1), got {}",
                self.rate
            )));
        }
        if self.kind == NoiseKind::Asymmetric {
            match self.swap_pair {
                Some((a, b)) if a != b => {}
                _ => {
                    return Err(PtError::Config(
                        "asymmetric noise needs swap_pair with two distinct classes".into(),
                    ))
                }
            }
        }
        Ok(())
    }

    /// Apply this noise to `labels` over `num_classes` classes.
    pub fn apply(&self, labels: &[usize], num_classes: usize) -> Result<(Vec<usize>, NoiseAudit)> {
        self.validate()?;
        match self.kind {
            NoiseKind::Symmetric => inject_symmetric(labels, self.rate, num_classes, self.seed),
            NoiseKind::Asymmetric => {
                inject_asymmetric(labels, self.rate, self.swap_pair.unwrap(), self.seed)
            }
        }
    }
}

/// Which labels were changed, and what they were before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAudit {
    pub flip_mask: Vec<bool>,
    pub original_labels: Vec<usize>,
}

impl NoiseAudit {
    pub fn clean(labels: &[usize]) -> Self {
        NoiseAudit {
            flip_mask: vec![false; labels.len()],
            original_labels: labels.to_vec(),
        }
    }

    pub fn num_flipped(&self) -> usize {
        self.flip_mask.iter().filter(|&&f| f).count()
    }
}

fn indices_of(labels: &[usize], class: usize) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == class)
        .map(|(i, _)| i)
        .collect()
}

/// Number of flips requested for a class of size `n`.
fn flip_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64).round() as usize).min(n)
}

/// Per class, relabel exactly `round(rate * n_c)` samples to a class drawn
/// uniformly from the other `C - 1`.
pub fn inject_symmetric(
    labels: &[usize],
    rate: f64,
    num_classes: usize,
    seed: u64,
) -> Result<(Vec<usize>, NoiseAudit)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(PtError::Config(format!(
            "noise rate must be in [0,1), got {rate}"
        )));
    }
    if num_classes < 2 {
        return Err(PtError::Config(
            "symmetric noise needs at least 2 classes".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(PtError::Contract(format!(
            "label {bad} outside [0,{num_classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = labels.to_vec();
    for class in 0..num_classes {
        let members = indices_of(labels, class);
        let k = flip_count(rate, members.len());
        for pick in sample(&mut rng, members.len(), k) {
            let draw = rng.random_range(0..num_classes - 1);
            noisy[members[pick]] = if draw < class { draw } else { draw + 1 };
        }
    }
    let audit = NoiseAudit {
        flip_mask: noisy.iter().zip(labels).map(|(a, b)| a != b).collect(),
        original_labels: labels.to_vec(),
    };
    Ok((noisy, audit))
}

/// Relabel `round(rate * n_a)` samples of class `a` as `b` and
/// `round(rate * n_b)` of class `b` as `a`.
pub fn inject_asymmetric(
    labels: &[usize],
    rate: f64,
    pair: (usize, usize),
    seed: u64,
) -> Result<(Vec<usize>, NoiseAudit)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(PtError::Config(format!(
            "noise rate must be in [0,1), got {rate}"
        )));
    }
    let (a, b) = pair;
    if a == b {
        return Err(PtError::Contract(
            "swap pair must name two different classes".into(),
        ));
    }
    let members_a = indices_of(labels, a);
    let members_b = indices_of(labels, b);
    if members_a.is_empty() || members_b.is_empty() {
        return Err(PtError::Contract(format!(
            "class {a} or {b} absent from labels"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = labels.to_vec();
    for (members, target) in [(&members_a, b), (&members_b, a)] {
        let k = flip_count(rate, members.len());
        for pick in sample(&mut rng, members.len(), k) {
            noisy[members[pick]] = target;
        }
    }
    let audit = NoiseAudit {
        flip_mask: noisy.iter().zip(labels).map(|(x, y)| x != y).collect(),
        original_labels: labels.to_vec(),
    };
    Ok((noisy, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn balanced(c: usize, per: usize) -> Vec<usize> {
        (0..c).flat_map(|k| std::iter::repeat_n(k, per)).collect()
    }

    #[test]
    fn zero_rate_is_identity() {
        let y = balanced(7, 10);
        let (n, a) = inject_symmetric(&y, 0.0, 7, 1).unwrap();
        assert_eq!(n, y);
        assert_eq!(a.num_flipped(), 0);
        let (n, _) = inject_asymmetric(&y, 0.0, (2, 6), 1).unwrap();
        assert_eq!(n, y);
    }

    #[test]
    fn symmetric_exact_counts() {
        let y = balanced(7, 1000);
        let (n, a) = inject_symmetric(&y, 0.3, 7, 9).unwrap();
        for c in 0..7 {
            let flips = (0..y.len())
                .filter(|&i| y[i] == c && a.flip_mask[i])
                .count();
            assert_eq!(flips, 300);
        }
        for i in 0..y.len() {
            assert_eq!(a.flip_mask[i], n[i] != y[i]);
        }
    }

    #[test]
    fn small_class_caps_flips() {
        let y = vec![0, 1, 1, 1];
        let (_, a) = inject_symmetric(&y, 0.9, 2, 0).unwrap();
        assert_eq!(a.num_flipped(), 1 + 3);
    }

    #[test]
    fn asymmetric_near_total_swap() {
        let y = balanced(7, 20);
        let (n, a) = inject_asymmetric(&y, 0.99, (2, 6), 4).unwrap();
        for i in 0..y.len() {
            match y[i] {
                2 => assert_eq!(n[i], 6),
                6 => assert_eq!(n[i], 2),
                _ => assert_eq!(n[i], y[i]),
            }
        }
        assert_eq!(n.iter().filter(|&&v| v == 2 || v == 6).count(), 40);
        assert_eq!(a.num_flipped(), 40);
    }

    #[test]
    fn asymmetric_counts_and_locality() {
        let mut y = balanced(7, 30);
        y.extend(std::iter::repeat_n(2, 15));
        let (n, a) = inject_asymmetric(&y, 0.2, (2, 6), 11).unwrap();
        assert_eq!(a.num_flipped(), 9 + 6);
        for i in 0..y.len() {
            if y[i] != 2 && y[i] != 6 {
                assert_eq!(n[i], y[i]);
            }
        }
    }

    #[test]
    fn asymmetric_missing_class_is_contract_violation() {
        let y = vec![0, 1, 2];
        assert!(matches!(
            inject_asymmetric(&y, 0.2, (2, 6), 0),
            Err(PtError::Contract(_))
        ));
    }

    #[test]
    fn seeds_change_flip_sets() {
        let y = balanced(7, 100);
        let (_, a) = inject_symmetric(&y, 0.2, 7, 1).unwrap();
        let (_, b) = inject_symmetric(&y, 0.2, 7, 2).unwrap();
        let (_, c) = inject_symmetric(&y, 0.2, 7, 1).unwrap();
        assert_ne!(a.flip_mask, b.flip_mask);
        assert_eq!(a, c);
    }

    proptest! {
        #[test]
        fn symmetric_never_keeps_original_on_flip(seed in any::<u64>(), rate in 0.0f64..0.99) {
            let y = balanced(5, 37);
            let (n, a) = inject_symmetric(&y, rate, 5, seed).unwrap();
            prop_assert_eq!(n.len(), y.len());
            for c in 0..5 {
                let flips = (0..y.len()).filter(|&i| y[i] == c && a.flip_mask[i]).count();
                prop_assert_eq!(flips, ((rate * 37.0).round() as usize).min(37));
            }
            // audit recovers the originals
            let recovered: Vec<usize> = (0..n.len())
                .map(|i| if a.flip_mask[i] { a.original_labels[i] } else { n[i] })
                .collect();
            prop_assert_eq!(recovered, y);
        }
    }
}
