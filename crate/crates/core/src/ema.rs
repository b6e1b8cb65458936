//! Teachers kept as exponential moving averages of their students.

use serde::{Deserialize, Serialize};

use crate::error::{PtError, Result};
use crate::math::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherState {
    pub weights: ParamSet,
    pub updates_applied: u64,
}

/// A teacher starts as an exact copy of its student.
pub fn init_teacher(student: &ParamSet) -> TeacherState {
    TeacherState {
        weights: student.clone(),
        updates_applied: 0,
    }
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`.
pub fn ema_update(teacher: &mut TeacherState, student: &ParamSet, alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(PtError::Contract(format!(
            "EMA alpha must be in [0,1), got {alpha}"
        )));
    }
    teacher
        .weights
        .lin_comb_assign(alpha, student, 1.0 - alpha)?;
    teacher.updates_applied += 1;
    Ok(())
}
