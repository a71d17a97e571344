//! Dense `f64` tensors with reverse-mode differentiation, a finite-difference
//! gradient checker, and a text checkpoint format for named parameters.

mod checkpoint;
mod gradcheck;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ParamSet, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{softmax_in_place, CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
