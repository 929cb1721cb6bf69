//! Dense tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradients, compare, finite_diff_check, numeric_gradients, NumericGradients, ParamCheck};
pub use params::ParamSet;
pub use rng::{hash_str, mix_seed, RngState};
pub use tape::{masked_softmax_values, softmax_values, Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("masked_softmax: mask has no true entry")]
    EmptyMask,
    #[error("index {target} out of range for length {len}")]
    Target { target: usize, len: usize },
    #[error("conv1d_valid: input length {len} shorter than window {window}")]
    TooShort { len: usize, window: usize },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
}
