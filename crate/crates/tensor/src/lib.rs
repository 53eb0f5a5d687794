//! Dense NCHW tensors with reverse-mode differentiation.
//!
//! The op set is deliberately small: dilated convolution, directional
//! average pooling, max pooling, sigmoid-family gating, concat/split,
//! detach, and the reductions the detector losses need. Broadcasting is
//! limited to the H/W-singleton cases the attention gating requires.

pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use rng::{splitmix64, XorShiftRng};
pub use scalar::{sigmoid, Scalar};
pub use tape::{BnBatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;
