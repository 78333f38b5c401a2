//! Minimal reverse-mode autodiff over dense 1-D/2-D tensors.
//!
//! A [`Graph`] is a define-by-run tape: every operation appends a node holding
//! its output value and enough context to push gradients back to its inputs.
//! Graphs are rebuilt for every forward pass and are cheap to drop. A graph is
//! confined to one execution context at a time; distinct graphs may run on
//! different threads concurrently.

mod graph;
mod gradcheck;
pub mod kernels;

pub use gradcheck::{grad_check, grad_check_with};
pub use graph::{Graph, TensorId};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt;
use thiserror::Error;

/// Scalar element type for tensors; implemented for `f32` and `f64`.
///
/// Gradient-check oracles run at 64-bit; training defaults to 32-bit.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    /// Lossy conversion from `f64`; used for constants and config values.
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite widening")
    }
}

impl Element for f32 {
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Tensor extent; rank 1 or rank 2 only. Rank-1 tensors behave as a single
/// row for axis-wise operations.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn vector(n: usize) -> Self {
        assert!(n > 0, "zero-length shape");
        Shape(vec![n])
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-extent shape");
        Shape(vec![rows, cols])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row count; 1 for rank-1 tensors.
    pub fn rows(&self) -> usize {
        if self.0.len() == 2 {
            self.0[0]
        } else {
            1
        }
    }

    /// Column count; the full length for rank-1 tensors.
    pub fn cols(&self) -> usize {
        *self.0.last().expect("non-empty shape")
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("axis {axis} out of range for rank-{ndim} tensor")]
    InvalidAxis { axis: usize, ndim: usize },

    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),

    #[error("graph already consumed by backward; rebuild it for another pass")]
    StaleGraph,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("tensor id {0} does not belong to this graph")]
    UnknownTensor(usize),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

pub type TensorResult<T> = std::result::Result<T, TensorError>;
