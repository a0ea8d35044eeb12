//! Dense row-major tensors with tape-based reverse-mode differentiation.
//!
//! Design constraints the rest of the crate leans on:
//!
//! * storage is a flat `Arc<Vec<E>>` in row-major order; clones are cheap
//!   and never alias mutably,
//! * a tensor participates in at most one [`Tape`]; mixing tapes in one op
//!   is a contract error,
//! * every differentiable op records a backward closure on the tape at the
//!   moment it runs, so `backward` is a single reverse sweep,
//! * forward results are bit-identical across runs for fixed inputs: ops
//!   iterate in fixed order and nothing is parallel.

pub mod checkpoint;
pub mod counters;
pub mod element;
pub mod fdcheck;
mod ops;
mod tape;

pub use checkpoint::{
    load_params, read_header, save_params, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use element::Element;
pub use fdcheck::{finite_diff_check, FdConfig, FdReport};
pub use ops::{concat, cross_entropy_mean, embedding_lookup, sinusoidal_positions};
pub use tape::{Gradients, Tape};

// Internal hooks for custom ops defined outside this module (the tree
// kernels record their own backward closures).
pub(crate) use tape::{common_tape, output, parent_ids};

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Errors surfaced by tensor construction, ops, and the tape engine.
#[derive(Debug, Error)]
pub enum TensorError {
    /// Shape arguments disagree with the data or with each other.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An index or axis is out of range for the tensor's shape.
    #[error("{op}: {detail}")]
    OutOfRange { op: &'static str, detail: String },

    /// An op produced or received a non-finite value it cannot tolerate.
    #[error("{op}: non-finite value encountered: {detail}")]
    NonFinite { op: &'static str, detail: String },

    /// Operands belong to different tapes.
    #[error("{op}: operands belong to different tapes")]
    TapeMismatch { op: &'static str },

    /// `backward` was asked to differentiate a non-scalar.
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// `backward` was called on a tensor that is not on a tape.
    #[error("backward: loss tensor is not attached to a tape")]
    Untracked,

    /// Checkpoint container I/O or format failure.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Invalid hyperparameter to an op (dropout rate, axis, etc.).
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor over an [`Element`] type.
///
/// `shape == []` is a scalar with exactly one element. Data is shared; an
/// existing tensor's contents never change after construction.
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    tracked: Option<tape::TrackedRef<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            tracked: self.tracked.clone(),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<String> = self
            .data
            .iter()
            .take(8)
            .map(|v| format!("{v}"))
            .collect();
        let ellipsis = if self.data.len() > 8 { ", …" } else { "" };
        write!(
            f,
            "Tensor{:?}[{}{}]{}",
            self.shape,
            preview.join(", "),
            ellipsis,
            if self.tracked.is_some() { " (tracked)" } else { "" }
        )
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<E: Element> Tensor<E> {
    /// Builds a tensor from shape and row-major data.
    ///
    /// # Errors
    /// Shape-mismatch error when `data.len()` differs from the shape's
    /// element count.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} elements, got {}", shape, numel(shape), data.len()),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            tracked: None,
        })
    }

    /// Scalar (rank-0) tensor.
    pub fn scalar(v: E) -> Self {
        Tensor {
            shape: Vec::new(),
            data: Arc::new(vec![v]),
            tracked: None,
        }
    }

    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![E::ZERO; numel(shape)]),
            tracked: None,
        }
    }

    /// Tensor filled with one value.
    pub fn full(shape: &[usize], v: E) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(vec![v; numel(shape)]),
            tracked: None,
        }
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let n = numel(shape);
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            data.push(f(i));
        }
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            tracked: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Flat row-major view of the data.
    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Value of a scalar tensor.
    ///
    /// # Errors
    /// Shape-mismatch error when the tensor is not rank 0.
    pub fn item(&self) -> Result<E> {
        if !self.is_scalar() {
            return Err(TensorError::ShapeMismatch {
                op: "item",
                detail: format!("expected scalar, got shape {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    /// Element of a rank-2 tensor.
    ///
    /// Panics on out-of-range indices (debug aid, not an API error path).
    pub fn at2(&self, i: usize, j: usize) -> E {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Element of a rank-3 tensor.
    pub fn at3(&self, i: usize, j: usize, k: usize) -> E {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute element difference against another tensor of the
    /// same shape; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (a.to_f64() - b.to_f64()).abs();
            if d > worst {
                worst = d;
            }
        }
        Some(worst)
    }

    /// Converts elementwise into another element width.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::<F>::from_fn(&self.shape, |i| F::from_f64(self.data[i].to_f64()))
    }

    pub(crate) fn tracked(&self) -> Option<&tape::TrackedRef<E>> {
        self.tracked.as_ref()
    }

    pub(crate) fn with_tracking(mut self, t: Option<tape::TrackedRef<E>>) -> Self {
        self.tracked = t;
        self
    }

    /// Same data detached from any tape.
    pub fn detach(&self) -> Tensor<E> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            tracked: None,
        }
    }

    /// Tensor with elements drawn uniformly from `[lo, hi)`.
    pub fn rand_uniform<R: rand::Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Tensor::from_fn(shape, |_| E::from_f64(lo + (hi - lo) * rng.gen::<f64>()))
    }

    /// Tensor with elements drawn from a normal distribution via the
    /// Box–Muller transform (two uniforms per draw, deterministic for a
    /// fixed generator state).
    pub fn rand_normal<R: rand::Rng>(shape: &[usize], mean: f64, std: f64, rng: &mut R) -> Self {
        Tensor::from_fn(shape, |_| {
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            E::from_f64(mean + std * z)
        })
    }
}
