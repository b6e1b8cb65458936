//! Time-varying scalars: selection ratio, consistency ramp-up, EMA
//! coefficient and learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{PtError, Result};
use crate::noise::NoiseKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Fraction `r` of labeled samples abandoned once selection has fully ramped.
    pub abandon_rate: f64,
    /// Iteration `T` at which the selection ratio stops shrinking.
    pub turning_iteration: usize,
    pub total_epochs: usize,
    pub base_lr: f64,
    pub lr_decay_epoch: usize,
    pub decayed_lr: f64,
    pub rampup_max: f64,
    pub ema_cap: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            abandon_rate: 0.05,
            turning_iteration: 300,
            total_epochs: 6,
            base_lr: 0.01,
            lr_decay_epoch: 3,
            decayed_lr: 0.001,
            rampup_max: 10.0,
            ema_cap: 0.999,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.abandon_rate) {
            return Err(PtError::Config(format!(
                "abandon_rate must be in [0,1), got {}",
                self.abandon_rate
            )));
        }
        if self.turning_iteration == 0 || self.total_epochs == 0 {
            return Err(PtError::Config(
                "turning_iteration and total_epochs must be >= 1".into(),
            ));
        }
        if !(self.base_lr > self.decayed_lr && self.decayed_lr > 0.0) {
            return Err(PtError::Config(format!(
                "need base_lr > decayed_lr > 0, got {} and {}",
                self.base_lr, self.decayed_lr
            )));
        }
        if !(self.rampup_max >= 0.0 && self.rampup_max.is_finite()) {
            return Err(PtError::Config("rampup_max must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.ema_cap) {
            return Err(PtError::Config("ema_cap must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// `R(t) = 1 - r * min(t / T, 1)`.
pub fn selection_ratio(t: usize, cfg: &ScheduleConfig) -> f64 {
    let progress = (t as f64 / cfg.turning_iteration as f64).min(1.0);
    1.0 - cfg.abandon_rate * progress
}

/// `rampup_max * exp(-5 * (1 - epoch / N)^2)`, with `epoch` clamped to `[0, N]`.
pub fn rampup_weight(epoch: f64, cfg: &ScheduleConfig) -> f64 {
    let n = cfg.total_epochs as f64;
    let e = epoch.clamp(0.0, n);
    let phase = 1.0 - e / n;
    cfg.rampup_max * (-5.0 * phase * phase).exp()
}

/// `min(1 - 1 / (1 + iter), cap)`.
pub fn ema_coefficient(iter: usize, cfg: &ScheduleConfig) -> f64 {
    (1.0 - 1.0 / (1.0 + iter as f64)).min(cfg.ema_cap)
}

/// Step decay from `base_lr` to `decayed_lr` at `lr_decay_epoch`.
pub fn learning_rate(epoch: usize, cfg: &ScheduleConfig) -> f64 {
    if epoch < cfg.lr_decay_epoch {
        cfg.base_lr
    } else {
        cfg.decayed_lr
    }
}

/// Abandon-rate presets keyed on the injected noise.
///
/// Clean data uses `clean_rate`; symmetric noise at rate `r'` uses
/// `r' + symmetric_offset`; asymmetric noise uses `asymmetric_low` at rates up
/// to `asymmetric_low_until` and `asymmetric_high` above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbandonPreset {
    pub clean_rate: f64,
    pub symmetric_offset: f64,
    pub asymmetric_low: f64,
    pub asymmetric_high: f64,
    pub asymmetric_low_until: f64,
}

impl Default for AbandonPreset {
    /// The RAF-DB settings.
    fn default() -> Self {
        AbandonPreset {
            clean_rate: 0.05,
            symmetric_offset: 0.1,
            asymmetric_low: 0.05,
            asymmetric_high: 0.1,
            asymmetric_low_until: 0.1,
        }
    }
}

impl AbandonPreset {
    /// The FERPlus settings.
    pub fn ferplus() -> Self {
        AbandonPreset {
            clean_rate: 0.05,
            symmetric_offset: 0.1,
            asymmetric_low: 0.1,
            asymmetric_high: 0.15,
            asymmetric_low_until: 0.3,
        }
    }

    pub fn rate_for(&self, noise: Option<(NoiseKind, f64)>) -> f64 {
        const TOL: f64 = 1e-9;
        match noise {
            None => self.clean_rate,
            Some((_, rate)) if rate <= 0.0 => self.clean_rate,
            Some((NoiseKind::Symmetric, rate)) => rate + self.symmetric_offset,
            Some((NoiseKind::Asymmetric, rate)) => {
                if rate <= self.asymmetric_low_until + TOL {
                    self.asymmetric_low
                } else {
                    self.asymmetric_high
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn selection_ratio_examples() {
        let cfg = ScheduleConfig::default();
        assert_eq!(selection_ratio(0, &cfg), 1.0);
        assert_abs_diff_eq!(selection_ratio(300, &cfg), 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(selection_ratio(150, &cfg), 0.975, epsilon = 1e-15);
        assert_abs_diff_eq!(selection_ratio(10_000, &cfg), 0.95, epsilon = 1e-15);
    }

    #[test]
    fn rampup_examples() {
        let cfg = ScheduleConfig::default();
        assert_eq!(rampup_weight(6.0, &cfg), 10.0);
        assert_abs_diff_eq!(rampup_weight(0.0, &cfg), 0.067379, epsilon = 1e-6);
        assert_abs_diff_eq!(rampup_weight(3.0, &cfg), 2.8650, epsilon = 1e-4);
        assert_eq!(rampup_weight(60.0, &cfg), 10.0);
    }

    #[test]
    fn ema_examples() {
        let cfg = ScheduleConfig::default();
        assert_eq!(ema_coefficient(0, &cfg), 0.0);
        assert_eq!(ema_coefficient(1, &cfg), 0.5);
        assert_eq!(ema_coefficient(10_000, &cfg), 0.999);
    }

    #[test]
    fn lr_examples() {
        let cfg = ScheduleConfig::default();
        assert_eq!(learning_rate(0, &cfg), 0.01);
        assert_eq!(learning_rate(3, &cfg), 0.001);
        assert_eq!(learning_rate(5, &cfg), 0.001);
    }

    #[test]
    fn presets() {
        let raf = AbandonPreset::default();
        assert_eq!(raf.rate_for(None), 0.05);
        assert_abs_diff_eq!(
            raf.rate_for(Some((NoiseKind::Symmetric, 0.3))),
            0.4,
            epsilon = 1e-15
        );
        assert_eq!(raf.rate_for(Some((NoiseKind::Asymmetric, 0.1))), 0.05);
        assert_eq!(raf.rate_for(Some((NoiseKind::Asymmetric, 0.2))), 0.1);
        let fer = AbandonPreset::ferplus();
        assert_eq!(fer.rate_for(Some((NoiseKind::Asymmetric, 0.3))), 0.1);
        assert_eq!(fer.rate_for(Some((NoiseKind::Asymmetric, 0.4))), 0.15);
    }

    #[test]
    fn validate_rejects_bad_lr_order() {
        let cfg = ScheduleConfig {
            decayed_lr: 0.1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
