//! Semi-supervised training of two EMA teacher-student pairs with
//! cross-guidance and progressive small-loss sample selection, robust to
//! noisy labels.
//!
//! The crate is organized bottom-up:
//!
//! - [`math`]: MLP forward/backward, losses, SGD with momentum
//! - [`schedules`]: selection ratio, ramp-up, EMA coefficient, learning rate
//! - [`ema`]: teacher weights as a moving average of the student
//! - [`selection`]: small-loss selection and confidence rescue
//! - [`noise`]: symmetric and asymmetric label-noise injection
//! - [`data`]: synthetic benchmark, augmentation, batching, dataset files
//! - [`trainer`]: the two-group loop, baselines, evaluation and audits
//! - [`confidence`]: confidence estimator for rescuing hard samples
//! - [`report`]: experiment configs, grids and result files

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod confidence;
pub mod data;
pub mod ema;
pub mod error;
pub mod math;
pub mod noise;
pub mod par;
pub mod report;
pub mod schedules;
pub mod selection;
pub mod trainer;

pub use error::{PtError, Result};
