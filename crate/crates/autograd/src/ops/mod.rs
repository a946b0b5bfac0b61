mod elementwise;
mod matmul;
pub(crate) mod nn;
mod reduce;
mod shape;

use crate::error::{AutogradError, Result};

pub(crate) fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(AutogradError::Axis { op, axis, rank });
    }
    Ok(())
}
pub use nn::TARGET_SUM_TOLERANCE;
