//! Dense f64 tensors with reverse-mode differentiation.
//!
//! [`Tensor`] is an immutable shape + flat row-major buffer (rank 1 or 2;
//! batching is expressed as loops over rank-2 tensors). Differentiable
//! computations are recorded on a [`Tape`]; [`Tape::backward`] walks the
//! recorded ops in reverse topological order and returns per-leaf gradients.
//! [`gradcheck::grad_check`] is the central-difference oracle used to
//! validate every gradient rule.

pub mod gradcheck;
pub mod kernels;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use tape::{Gradients, NodeId, Tape};

use std::sync::Arc;

use crate::error::{Error, Result};

/// Immutable dense tensor. Cloning is cheap (the buffer is shared).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Build a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "tensor_new",
                format!("all dims must be >= 1, got {shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor_new",
                format!(
                    "shape {shape:?} holds {numel} elements but data has {}",
                    data.len()
                ),
            ));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: Arc::new(vec![0.0; numel]),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: Arc::new(vec![v]),
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len().max(1)],
            data: Arc::new(if data.is_empty() { vec![0.0] } else { data }),
        }
    }

    /// Rank-2 tensor from a row count; `data.len()` must be `rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Rows of a rank-2 tensor (1 for rank-1).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of a rank-2 tensor (the length for rank-1).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Replace the buffer contents, reusing the allocation when unshared.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Tensor::new(self.shape.clone(), data)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}
