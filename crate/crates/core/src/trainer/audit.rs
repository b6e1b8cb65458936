use serde::{Deserialize, Serialize};

use crate::error::{PtError, Result};
use crate::noise::NoiseAudit;

use super::TrainHistory;

/// Abandonment events split by whether the sample's label was injected
/// noise. Clean events are broken down by class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbandonAudit {
    pub noisy: u64,
    pub clean_by_class: Vec<u64>,
    /// Noisy events by the class the sample really belongs to.
    pub noisy_by_original_class: Vec<u64>,
}

impl AbandonAudit {
    pub fn clean(&self) -> u64 {
        self.clean_by_class.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.noisy + self.clean()
    }

    /// Fraction of abandoned events that carried injected noise; 0 when
    /// nothing was abandoned.
    pub fn noisy_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.noisy as f64 / total as f64
        }
    }
}

pub fn audit_abandoned(history: &TrainHistory, audit: &NoiseAudit) -> Result<AbandonAudit> {
    audit_abandoned_since(history, audit, 0)
}

/// Tally only iterations with `t > since`.
pub fn audit_abandoned_since(
    history: &TrainHistory,
    audit: &NoiseAudit,
    since: usize,
) -> Result<AbandonAudit> {
    let c = audit.original_labels.iter().max().map_or(0, |m| m + 1);
    let mut out = AbandonAudit {
        noisy: 0,
        clean_by_class: vec![0; c],
        noisy_by_original_class: vec![0; c.max(1)],
    };
    for rec in history.iterations.iter().filter(|r| r.iteration > since) {
        for &idx in rec.abandoned.iter().flatten() {
            let flipped = *audit.flip_mask.get(idx).ok_or_else(|| {
                PtError::Contract(format!("abandoned index {idx} outside the noise audit"))
            })?;
            let original = audit.original_labels[idx];
            if flipped {
                out.noisy += 1;
                out.noisy_by_original_class[original] += 1;
            } else {
                out.clean_by_class[original] += 1;
            }
        }
    }
    Ok(out)
}
