//! Dense tensors, a reverse-mode tape, and a finite-difference gradient oracle.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{
    compare_gradients, finite_diff_check, relative_error, value_and_grad, GradCheck, TensorCheck,
    DEFAULT_STEP, DENOMINATOR_FLOOR,
};
pub use graph::{Graph, Var};
pub use tensor::{gelu, sigmoid, Tensor};

/// Epsilon used by every layer norm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: empty tensor")]
    Empty { op: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Contract(String),
}
