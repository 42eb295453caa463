//! Dense f64 tensors, reverse-mode differentiation and AdamW.

mod gradcheck;
pub mod kernels;
mod params;
mod tape;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use gradcheck::{finite_diff_check, relative_error, CoordError, FdConfig, FdReport};
pub use params::{adam_step, AdamConfig, ParamId, Parameter, ParameterStore};
pub use tape::{Adjacency, Tape, Var, GAT_SLOPE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("ShapeMismatch: {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("IndexOutOfRange: {op}: index {index} >= {len}")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("DuplicateParameter: {0}")]
    DuplicateParameter(String),
    #[error("UnknownParameter: {0}")]
    UnknownParameter(String),
    #[error("CheckFailed: max relative error {max_rel_err:e} above {tolerance:e}; worst {worst:?}")]
    CheckFailed { max_rel_err: f64, tolerance: f64, worst: Vec<CoordError> },
}

/// Value tensor: shape plus contiguous row-major data. Gradients live on the
/// tape and in the parameter store rather than on the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }

    /// Shape viewed as a matrix: 1-D tensors are row vectors, higher ranks
    /// fold leading dimensions into rows.
    pub fn as_matrix(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [rest @ .., c] => (rest.iter().product(), *c),
        }
    }
}
