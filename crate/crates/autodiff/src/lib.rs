//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in reverse from a scalar loss. The operation set is the one the
//! channel surrogates and the equalizer need: matrix products, causal
//! convolution, softmax and fused causal attention, layer normalization,
//! pointwise nonlinearities and a few shape manipulations.

mod attention;
mod conv;
mod elementwise;
mod error;
mod fastmath;
mod gradcheck;
mod linalg;
mod norm;
mod reduce;
mod shape;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use gradcheck::{
    gradcheck, gradcheck_params, sample_coords, GradcheckEntry, GradcheckOptions, GradcheckReport,
};
pub use shape::pair_count;
pub use tape::{CustomVjp, Gradients, Tape, Var};
pub use tensor::Tensor;
