//! Gradient tape: records one backward closure per differentiable op.

use std::cell::RefCell;
use std::rc::Rc;

use super::{numel, Element, Result, Tensor, TensorError};

type BackFn<E> = Box<dyn Fn(&Tensor<E>) -> Vec<Option<Tensor<E>>>>;

struct NodeRec<E: Element> {
    /// Tape ids of the differentiable inputs, aligned with the vector the
    /// backward closure returns. `None` marks an untracked input slot.
    parents: Vec<Option<usize>>,
    /// Maps the node's output gradient to per-parent gradients; leaves
    /// (watched tensors) carry no closure.
    backward: Option<BackFn<E>>,
    shape: Vec<usize>,
}

struct TapeInner<E: Element> {
    nodes: Vec<NodeRec<E>>,
}

/// Recording context for reverse-mode differentiation.
///
/// A tape lives for one forward/backward pass: watch the parameters, run the
/// forward computation, call [`Tape::backward`] on the scalar loss, then drop
/// the tape. Tensors attach to at most one tape; ops that see operands from
/// two different tapes fail with a contract error.
pub struct Tape<E: Element> {
    inner: Rc<RefCell<TapeInner<E>>>,
}

impl<E: Element> Clone for Tape<E> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle stored inside a tracked tensor: which tape, which node.
pub(crate) struct TrackedRef<E: Element> {
    pub(crate) tape: Tape<E>,
    pub(crate) id: usize,
}

impl<E: Element> Clone for TrackedRef<E> {
    fn clone(&self) -> Self {
        TrackedRef {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    pub(crate) fn same_tape(&self, other: &Tape<E>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Number of recorded nodes (leaves plus ops).
    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// Registers `t` as a differentiable leaf and returns the tracked copy.
    ///
    /// The returned tensor shares `t`'s storage; gradients accumulate against
    /// it during [`Tape::backward`].
    pub fn watch(&self, t: &Tensor<E>) -> Tensor<E> {
        let id = {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(NodeRec {
                parents: Vec::new(),
                backward: None,
                shape: t.shape().to_vec(),
            });
            inner.nodes.len() - 1
        };
        t.detach().with_tracking(Some(TrackedRef {
            tape: self.clone(),
            id,
        }))
    }

    /// Records an op node. Called by the op implementations only.
    pub(crate) fn record(
        &self,
        parents: Vec<Option<usize>>,
        shape: &[usize],
        backward: BackFn<E>,
    ) -> TrackedRef<E> {
        let id = {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(NodeRec {
                parents,
                backward: Some(backward),
                shape: shape.to_vec(),
            });
            inner.nodes.len() - 1
        };
        TrackedRef {
            tape: self.clone(),
            id,
        }
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Returns gradients for every tracked tensor that influenced the loss;
    /// watched leaves that did not participate read back as zeros through
    /// [`Gradients::wrt_or_zeros`].
    ///
    /// # Errors
    /// * contract error when `loss` is untracked, on another tape, or not a
    ///   scalar,
    /// * numeric error when the loss value is non-finite.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<Gradients<E>> {
        let tracked = loss.tracked().ok_or(TensorError::Untracked)?;
        if !self.same_tape(&tracked.tape) {
            return Err(TensorError::TapeMismatch { op: "backward" });
        }
        if !loss.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss.shape().to_vec(),
            });
        }
        if !loss.item()?.is_finite() {
            return Err(TensorError::NonFinite {
                op: "backward",
                detail: "loss value".to_string(),
            });
        }

        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; inner.nodes.len()];
        grads[tracked.id] = Some(Tensor::scalar(E::ONE));

        // Node ids are in topological (recording) order, so one reverse scan
        // visits every node after all of its consumers.
        for id in (0..=tracked.id).rev() {
            let Some(grad_out) = grads[id].clone() else {
                continue;
            };
            let node = &inner.nodes[id];
            let Some(back) = node.backward.as_ref() else {
                continue;
            };
            debug_assert_eq!(grad_out.shape(), &node.shape[..]);
            let parent_grads = back(&grad_out);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (slot, pg) in node.parents.iter().zip(parent_grads) {
                let (Some(pid), Some(pg)) = (slot, pg) else {
                    continue;
                };
                debug_assert_eq!(pg.shape(), &inner.nodes[*pid].shape[..]);
                grads[*pid] = Some(match grads[*pid].take() {
                    None => pg,
                    Some(old) => accumulate(&old, &pg),
                });
            }
        }

        Ok(Gradients {
            tape: self.clone(),
            grads,
        })
    }
}

/// Elementwise sum of two gradients of identical shape (no tape recording).
fn accumulate<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = Vec::with_capacity(a.len());
    for (x, y) in a.data().iter().zip(b.data().iter()) {
        out.push(*x + *y);
    }
    Tensor {
        shape: a.shape().to_vec(),
        data: std::sync::Arc::new(out),
        tracked: None,
    }
}

/// Result of a backward sweep: per-node gradients addressed by tensor handle.
pub struct Gradients<E: Element> {
    tape: Tape<E>,
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> std::fmt::Debug for Gradients<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let populated = self.grads.iter().filter(|g| g.is_some()).count();
        write!(f, "Gradients({populated}/{} nodes)", self.grads.len())
    }
}

impl<E: Element> Gradients<E> {
    /// Gradient of the loss w.r.t. `t`, if `t` is tracked on this tape and
    /// received any gradient.
    pub fn wrt(&self, t: &Tensor<E>) -> Option<Tensor<E>> {
        let tr = t.tracked()?;
        if !self.tape.same_tape(&tr.tape) {
            return None;
        }
        self.grads.get(tr.id).and_then(|g| g.clone())
    }

    /// Like [`Gradients::wrt`], but an untouched (or untracked) tensor reads
    /// back as zeros of its own shape.
    pub fn wrt_or_zeros(&self, t: &Tensor<E>) -> Tensor<E> {
        self.wrt(t).unwrap_or_else(|| Tensor::zeros(t.shape()))
    }
}

/// Finds the common tape of a set of operands.
///
/// # Errors
/// Contract error when two operands sit on different tapes.
pub(crate) fn common_tape<E: Element>(
    op: &'static str,
    operands: &[&Tensor<E>],
) -> Result<Option<Tape<E>>> {
    let mut found: Option<Tape<E>> = None;
    for t in operands {
        if let Some(tr) = t.tracked() {
            match &found {
                None => found = Some(tr.tape.clone()),
                Some(f) if f.same_tape(&tr.tape) => {}
                Some(_) => return Err(TensorError::TapeMismatch { op }),
            }
        }
    }
    Ok(found)
}

/// Parent-slot vector for `record`, aligned with op operands.
pub(crate) fn parent_ids<E: Element>(operands: &[&Tensor<E>]) -> Vec<Option<usize>> {
    operands
        .iter()
        .map(|t| t.tracked().map(|tr| tr.id))
        .collect()
}

/// Shared check that `shape` and a data vector agree; used by op kernels
/// that build outputs directly.
pub(crate) fn output<E: Element>(shape: &[usize], data: Vec<E>) -> Tensor<E> {
    debug_assert_eq!(numel(shape), data.len());
    Tensor {
        shape: shape.to_vec(),
        data: std::sync::Arc::new(data),
        tracked: None,
    }
}
