//! A compact reverse-mode differentiation tape over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D matrix. Volumetric feature maps are
//! stored as `channels × voxels` matrices and carry their spatial extent in
//! the op that produced them, so convolutions, pooling, graph message passing
//! and the losses all share the same value type.
//!
//! Parameters live outside the tape in a [`ParamStore`]. A forward pass binds
//! them onto a fresh [`Tape`], the backward pass produces [`Gradients`], and
//! those are folded into a [`GradStore`] that an [`optim`] optimizer consumes.

mod conv;
pub mod init;
pub mod optim;
mod params;
mod tape;

pub use conv::VolumeDims;
pub use params::{GradStore, ParamId, ParamStore};
pub use tape::{Gradients, Mat, Tape, Var};

/// Errors raised while (de)serialising or validating parameter sets.
#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("shape mismatch for `{name}`: expected {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
}
