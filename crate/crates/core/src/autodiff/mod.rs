//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each op with the state its vector-Jacobian product needs;
//! [`Tape::backward`] replays the record in reverse. All network math (linear
//! maps, attention, normalization, convolution, resampling) is expressed as
//! methods on [`Var`].

mod conv;
mod elementwise;
pub mod gradcheck;
mod linalg;
mod norm;
mod shape_ops;
mod tape;

pub use conv::Window;
pub use norm::BatchMoments;
pub use shape_ops::flat_index;
pub use tape::{Gradients, Tape, Var};

pub(crate) use conv::interpolation_taps;
pub(crate) use elementwise::sigmoid;
