//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Values live on a [`Tape`]; every primitive records enough state for an
//! exact vector-Jacobian product, and [`Tape::backward`] replays the tape in
//! reverse. [`finite_difference_check`] is the independent oracle used to
//! verify those gradients.

mod backward;
mod element;
mod error;
mod gradcheck;
mod ops;
mod rng;
mod tape;
mod tensor;

pub use element::{DType, Element};
pub use error::{AutogradError, Result};
pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use ops::TARGET_SUM_TOLERANCE;
pub use rng::DropoutKey;
pub use tape::{GradientMap, Tape, Var};
pub use tensor::Tensor;
