//! Differentiable tensor primitives.
//!
//! Every op follows the same shape: validate operands, run a raw kernel that
//! bumps the scalar-op counters, and — when an operand is tracked — record a
//! backward closure on the common tape. Backward closures capture detached
//! data only (never tracked tensors), so tapes own no reference cycles.

use rand::Rng;

use super::counters::{add_cmps, add_exps, add_macs};
use super::tape::{common_tape, output, parent_ids};
use super::{numel, Element, Result, Tensor, TensorError};

/// Additive penalty for masked logits; exp underflows to exact zero under it.
const MASK_PENALTY: f64 = -1e30;

// ---------------------------------------------------------------------------
// raw kernels (shared by forward and backward paths; all bump the counters)
// ---------------------------------------------------------------------------

/// `a [p×q] · b [q×r] → [p×r]`.
fn mm<E: Element>(a: &[E], p: usize, q: usize, b: &[E], r: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; p * r];
    for i in 0..p {
        for k in 0..q {
            let aik = a[i * q + k];
            let brow = &b[k * r..(k + 1) * r];
            let orow = &mut out[i * r..(i + 1) * r];
            for j in 0..r {
                orow[j] += aik * brow[j];
            }
        }
    }
    add_macs((p * q * r) as u64);
    out
}

/// `a [p×k] · b [m×k]ᵀ → [p×m]`.
fn mm_nt<E: Element>(a: &[E], p: usize, k: usize, b: &[E], m: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; p * m];
    for i in 0..p {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = E::ZERO;
            for t in 0..k {
                acc += arow[t] * brow[t];
            }
            out[i * m + j] = acc;
        }
    }
    add_macs((p * k * m) as u64);
    out
}

/// `a [p×q]ᵀ · b [p×r] → [q×r]`.
fn mm_tn<E: Element>(a: &[E], p: usize, q: usize, b: &[E], r: usize) -> Vec<E> {
    let mut out = vec![E::ZERO; q * r];
    for i in 0..p {
        let arow = &a[i * q..(i + 1) * q];
        let brow = &b[i * r..(i + 1) * r];
        for t in 0..q {
            let ait = arow[t];
            let orow = &mut out[t * r..(t + 1) * r];
            for j in 0..r {
                orow[j] += ait * brow[j];
            }
        }
    }
    add_macs((p * q * r) as u64);
    out
}

fn ew_add<E: Element>(a: &[E], b: &[E]) -> Vec<E> {
    add_macs(a.len() as u64);
    a.iter().zip(b).map(|(x, y)| *x + *y).collect()
}

fn ew_sub<E: Element>(a: &[E], b: &[E]) -> Vec<E> {
    add_macs(a.len() as u64);
    a.iter().zip(b).map(|(x, y)| *x - *y).collect()
}

fn ew_mul<E: Element>(a: &[E], b: &[E]) -> Vec<E> {
    add_macs(a.len() as u64);
    a.iter().zip(b).map(|(x, y)| *x * *y).collect()
}

fn ew_scale<E: Element>(a: &[E], c: E) -> Vec<E> {
    add_macs(a.len() as u64);
    a.iter().map(|x| *x * c).collect()
}

fn same_shape<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

impl<E: Element> Tensor<E> {
    /// Elementwise sum of two tensors of identical shape.
    ///
    /// # Errors
    /// Shape mismatch, or operands on different tapes.
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("add", self, other)?;
        let tape = common_tape("add", &[self, other])?;
        let mut out = output(self.shape(), ew_add(self.data(), other.data()));
        if let Some(tape) = tape {
            let tr = tape.record(parent_ids(&[self, other]), self.shape(), {
                Box::new(move |g: &Tensor<E>| vec![Some(g.detach()), Some(g.detach())])
            });
            out = out.with_tracking(Some(tr));
        }
        Ok(out)
    }

    /// Elementwise difference of two tensors of identical shape.
    ///
    /// # Errors
    /// Shape mismatch, or operands on different tapes.
    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("sub", self, other)?;
        let tape = common_tape("sub", &[self, other])?;
        let mut out = output(self.shape(), ew_sub(self.data(), other.data()));
        if let Some(tape) = tape {
            let tr = tape.record(parent_ids(&[self, other]), self.shape(), {
                Box::new(move |g: &Tensor<E>| {
                    let neg = output(g.shape(), ew_scale(g.data(), -E::ONE));
                    vec![Some(g.detach()), Some(neg)]
                })
            });
            out = out.with_tracking(Some(tr));
        }
        Ok(out)
    }

    /// Elementwise (Hadamard) product of two tensors of identical shape.
    ///
    /// # Errors
    /// Shape mismatch, or operands on different tapes.
    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("mul", self, other)?;
        let tape = common_tape("mul", &[self, other])?;
        let mut out = output(self.shape(), ew_mul(self.data(), other.data()));
        if let Some(tape) = tape {
            let a = self.detach();
            let b = other.detach();
            let tr = tape.record(parent_ids(&[self, other]), self.shape(), {
                Box::new(move |g: &Tensor<E>| {
                    vec![
                        Some(output(g.shape(), ew_mul(g.data(), b.data()))),
                        Some(output(g.shape(), ew_mul(g.data(), a.data()))),
                    ]
                })
            });
            out = out.with_tracking(Some(tr));
        }
        Ok(out)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, c: E) -> Tensor<E> {
        let mut out = output(self.shape(), ew_scale(self.data(), c));
        if let Some(tr) = self.tracked() {
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), self.shape(), {
                Box::new(move |g: &Tensor<E>| vec![Some(output(g.shape(), ew_scale(g.data(), c)))])
            });
            out = out.with_tracking(Some(rec));
        }
        out
    }

    /// Adds a length-`q` bias vector to every row of a `[p×q]` matrix.
    ///
    /// # Errors
    /// Shape mismatch unless `self` is rank 2 and `bias` is rank 1 with the
    /// row width.
    pub fn add_bias(&self, bias: &Tensor<E>) -> Result<Tensor<E>> {
        if self.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != self.shape()[1] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                detail: format!("matrix {:?} vs bias {:?}", self.shape(), bias.shape()),
            });
        }
        let (p, q) = (self.shape()[0], self.shape()[1]);
        let tape = common_tape("add_bias", &[self, bias])?;
        let mut data = Vec::with_capacity(p * q);
        for i in 0..p {
            for j in 0..q {
                data.push(self.data()[i * q + j] + bias.data()[j]);
            }
        }
        add_macs((p * q) as u64);
        let mut out = output(self.shape(), data);
        if let Some(tape) = tape {
            let tr = tape.record(parent_ids(&[self, bias]), self.shape(), {
                Box::new(move |g: &Tensor<E>| {
                    let mut db = vec![E::ZERO; q];
                    for i in 0..p {
                        for j in 0..q {
                            db[j] += g.data()[i * q + j];
                        }
                    }
                    add_macs((p * q) as u64);
                    vec![Some(g.detach()), Some(output(&[q], db))]
                })
            });
            out = out.with_tracking(Some(tr));
        }
        Ok(out)
    }

    /// Elementwise `max(x, 0)`; the subgradient at zero is zero.
    pub fn relu(&self) -> Tensor<E> {
        add_cmps(self.len() as u64);
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|x| if *x > E::ZERO { *x } else { E::ZERO })
            .collect();
        let mut out = output(self.shape(), data);
        if let Some(tr) = self.tracked() {
            let x = self.detach();
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), self.shape(), {
                Box::new(move |g: &Tensor<E>| {
                    add_cmps(x.len() as u64);
                    add_macs(x.len() as u64);
                    let dx: Vec<E> = x
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(xi, gi)| if *xi > E::ZERO { *gi } else { E::ZERO })
                        .collect();
                    vec![Some(output(x.shape(), dx))]
                })
            });
            out = out.with_tracking(Some(rec));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

impl<E: Element> Tensor<E> {
    /// Transpose of a rank-2 tensor.
    ///
    /// # Errors
    /// Shape mismatch when the tensor is not rank 2.
    pub fn transpose(&self) -> Result<Tensor<E>> {
        if self.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "transpose",
                detail: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        let (p, q) = (self.shape()[0], self.shape()[1]);
        let mut data = vec![E::ZERO; p * q];
        for i in 0..p {
            for j in 0..q {
                data[j * p + i] = self.data()[i * q + j];
            }
        }
        let mut out = output(&[q, p], data);
        if let Some(tr) = self.tracked() {
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), &[q, p], {
                Box::new(move |g: &Tensor<E>| {
                    let mut dx = vec![E::ZERO; p * q];
                    for j in 0..q {
                        for i in 0..p {
                            dx[i * q + j] = g.data()[j * p + i];
                        }
                    }
                    vec![Some(output(&[p, q], dx))]
                })
            });
            out = out.with_tracking(Some(rec));
        }
        Ok(out)
    }

    /// Reinterprets the data under a new shape with the same element count.
    ///
    /// # Errors
    /// Shape mismatch when the element counts differ.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<E>> {
        if numel(new_shape) != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(), new_shape),
            });
        }
        let mut out = output(new_shape, self.data().to_vec());
        if let Some(tr) = self.tracked() {
            let old = self.shape().to_vec();
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), new_shape, {
                Box::new(move |g: &Tensor<E>| vec![Some(output(&old, g.data().to_vec()))])
            });
            out = out.with_tracking(Some(rec));
        }
        Ok(out)
    }

    /// Contiguous slice of length `len` starting at `start` along `axis`.
    ///
    /// # Errors
    /// Out-of-range error when the axis or the slice bounds are invalid.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::OutOfRange {
                op: "narrow",
                detail: format!("axis {axis} for rank {}", self.rank()),
            });
        }
        if start + len > self.shape()[axis] {
            return Err(TensorError::OutOfRange {
                op: "narrow",
                detail: format!(
                    "slice {start}..{} exceeds axis length {}",
                    start + len,
                    self.shape()[axis]
                ),
            });
        }
        let shape = self.shape().to_vec();
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let axis_len = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut out = output(&out_shape, data);
        if let Some(tr) = self.tracked() {
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), &out_shape, {
                let shape = shape.clone();
                Box::new(move |g: &Tensor<E>| {
                    let mut dx = vec![E::ZERO; numel(&shape)];
                    for o in 0..outer {
                        let dst = (o * axis_len + start) * inner;
                        let src = o * len * inner;
                        dx[dst..dst + len * inner]
                            .copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    vec![Some(output(&shape, dx))]
                })
            });
            out = out.with_tracking(Some(rec));
        }
        Ok(out)
    }
}

/// Concatenates tensors of equal rank along `axis`; all other axes must
/// agree.
///
/// # Errors
/// Shape mismatch on rank/axis disagreement, contract error when the parts
/// live on different tapes or the list is empty.
pub fn concat<E: Element>(axis: usize, parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    let Some(first) = parts.first() else {
        return Err(TensorError::InvalidArgument {
            op: "concat",
            detail: "empty part list".to_string(),
        });
    };
    if axis >= first.rank() {
        return Err(TensorError::OutOfRange {
            op: "concat",
            detail: format!("axis {axis} for rank {}", first.rank()),
        });
    }
    for t in parts {
        if t.rank() != first.rank() {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                detail: format!("rank {:?} vs {:?}", first.shape(), t.shape()),
            });
        }
        for a in 0..first.rank() {
            if a != axis && t.shape()[a] != first.shape()[a] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?} along axis {a}", first.shape(), t.shape()),
                });
            }
        }
    }
    let tape = common_tape("concat", parts)?;
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let outer: usize = first.shape()[..axis].iter().product();
    let lens: Vec<usize> = parts.iter().map(|t| t.shape()[axis]).collect();
    let total: usize = lens.iter().sum();
    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = total;

    let mut data = Vec::with_capacity(numel(&out_shape));
    for o in 0..outer {
        for (t, len) in parts.iter().zip(&lens) {
            let base = o * len * inner;
            data.extend_from_slice(&t.data()[base..base + len * inner]);
        }
    }
    let mut out = output(&out_shape, data);
    if let Some(tape) = tape {
        let part_shapes: Vec<Vec<usize>> = parts.iter().map(|t| t.shape().to_vec()).collect();
        let lens_cl = lens.clone();
        let tr = tape.record(parent_ids(parts), &out_shape, {
            Box::new(move |g: &Tensor<E>| {
                let mut grads: Vec<Option<Tensor<E>>> = Vec::with_capacity(part_shapes.len());
                let mut offset = 0usize;
                for (shape, len) in part_shapes.iter().zip(&lens_cl) {
                    let mut dx = vec![E::ZERO; numel(shape)];
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len * inner;
                        dx[dst..dst + len * inner]
                            .copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    grads.push(Some(output(shape, dx)));
                    offset += len;
                }
                grads
            })
        });
        out = out.with_tracking(Some(tr));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

impl<E: Element> Tensor<E> {
    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Tensor<E> {
        add_macs(self.len() as u64);
        let mut acc = E::ZERO;
        for v in self.data() {
            acc += *v;
        }
        let mut out = Tensor::scalar(acc);
        if let Some(tr) = self.tracked() {
            let shape = self.shape().to_vec();
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), &[], {
                Box::new(move |g: &Tensor<E>| {
                    let gv = g.data()[0];
                    vec![Some(Tensor::full(&shape, gv))]
                })
            });
            out = out.with_tracking(Some(rec));
        }
        out
    }

    /// Mean of all elements as a scalar tensor.
    ///
    /// # Errors
    /// Contract error on an empty tensor.
    pub fn mean_all(&self) -> Result<Tensor<E>> {
        if self.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: "mean_all",
                detail: "empty tensor".to_string(),
            });
        }
        let n = E::from_f64(self.len() as f64);
        Ok(self.sum_all().scale(E::ONE / n))
    }

    /// Column means of a `[p×q]` matrix, returned as a length-`q` vector.
    ///
    /// # Errors
    /// Shape mismatch unless rank 2 with at least one row.
    pub fn mean_rows(&self) -> Result<Tensor<E>> {
        if self.rank() != 2 || self.shape()[0] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "mean_rows",
                detail: format!("expected non-empty rank-2, got {:?}", self.shape()),
            });
        }
        let (p, q) = (self.shape()[0], self.shape()[1]);
        let inv = E::ONE / E::from_f64(p as f64);
        let mut data = vec![E::ZERO; q];
        for i in 0..p {
            for j in 0..q {
                data[j] += self.data()[i * q + j];
            }
        }
        for v in &mut data {
            *v *= inv;
        }
        add_macs((p * q + q) as u64);
        let mut out = output(&[q], data);
        if let Some(tr) = self.tracked() {
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), &[q], {
                Box::new(move |g: &Tensor<E>| {
                    let mut dx = Vec::with_capacity(p * q);
                    for _ in 0..p {
                        for j in 0..q {
                            dx.push(g.data()[j] * inv);
                        }
                    }
                    add_macs((p * q) as u64);
                    vec![Some(output(&[p, q], dx))]
                })
            });
            out = out.with_tracking(Some(rec));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

impl<E: Element> Tensor<E> {
    /// Matrix product of rank-2 tensors: `[p×q] · [q×r] → [p×r]`.
    ///
    /// # Errors
    /// Shape mismatch on rank or inner-dimension disagreement; contract
    /// error when operands live on different tapes.
    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.rank() != 2 || other.rank() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} · {:?}", self.shape(), other.shape()),
            });
        }
        let (p, q) = (self.shape()[0], self.shape()[1]);
        let r = other.shape()[1];
        let tape = common_tape("matmul", &[self, other])?;
        let mut out = output(&[p, r], mm(self.data(), p, q, other.data(), r));
        if let Some(tape) = tape {
            let a = self.detach();
            let b = other.detach();
            let tr = tape.record(parent_ids(&[self, other]), &[p, r], {
                Box::new(move |g: &Tensor<E>| {
                    let da = mm_nt(g.data(), p, r, b.data(), q);
                    let db = mm_tn(a.data(), p, q, g.data(), r);
                    vec![Some(output(&[p, q], da)), Some(output(&[q, r], db))]
                })
            });
            out = out.with_tracking(Some(tr));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// neural-network primitives
// ---------------------------------------------------------------------------

impl<E: Element> Tensor<E> {
    /// Layer normalisation over the last axis with learnable `gamma`/`beta`.
    ///
    /// Each length-`q` slice is centred, scaled by `1/sqrt(var + eps)`
    /// (biased variance), then affinely transformed.
    ///
    /// # Errors
    /// Shape mismatch when `gamma`/`beta` are not rank-1 of the last-axis
    /// width, or when `self` is rank 0.
    pub fn layer_norm(&self, gamma: &Tensor<E>, beta: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
        if self.rank() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: "scalar input".to_string(),
            });
        }
        let q = *self.shape().last().expect("rank >= 1");
        if gamma.shape() != [q] || beta.shape() != [q] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                detail: format!(
                    "gamma {:?} / beta {:?} for last axis {q}",
                    gamma.shape(),
                    beta.shape()
                ),
            });
        }
        if q == 0 {
            return Err(TensorError::InvalidArgument {
                op: "layer_norm",
                detail: "zero-width last axis".to_string(),
            });
        }
        let tape = common_tape("layer_norm", &[self, gamma, beta])?;
        let rows = self.len() / q;
        let inv_q = E::ONE / E::from_f64(q as f64);
        let epse = E::from_f64(eps);

        let mut data = vec![E::ZERO; self.len()];
        let mut xhat = vec![E::ZERO; self.len()];
        let mut inv_sigma = vec![E::ZERO; rows];
        for i in 0..rows {
            let x = &self.data()[i * q..(i + 1) * q];
            let mut mu = E::ZERO;
            for v in x {
                mu += *v;
            }
            mu *= inv_q;
            let mut var = E::ZERO;
            for v in x {
                let c = *v - mu;
                var += c * c;
            }
            var *= inv_q;
            let inv_s = E::ONE / (var + epse).sqrt();
            inv_sigma[i] = inv_s;
            for j in 0..q {
                let h = (x[j] - mu) * inv_s;
                xhat[i * q + j] = h;
                data[i * q + j] = gamma.data()[j] * h + beta.data()[j];
            }
        }
        add_macs((rows * 7 * q) as u64);
        add_exps(rows as u64);

        let mut out = output(self.shape(), data);
        if let Some(tape) = tape {
            let shape = self.shape().to_vec();
            let gam = gamma.detach();
            let tr = tape.record(parent_ids(&[self, gamma, beta]), self.shape(), {
                Box::new(move |g: &Tensor<E>| {
                    let mut dx = vec![E::ZERO; rows * q];
                    let mut dgamma = vec![E::ZERO; q];
                    let mut dbeta = vec![E::ZERO; q];
                    for i in 0..rows {
                        let grow = &g.data()[i * q..(i + 1) * q];
                        let hrow = &xhat[i * q..(i + 1) * q];
                        // dxhat = g * gamma; dx folds the mean/variance paths.
                        let mut mean_dh = E::ZERO;
                        let mut mean_dh_h = E::ZERO;
                        for j in 0..q {
                            let dh = grow[j] * gam.data()[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                            dgamma[j] += grow[j] * hrow[j];
                            dbeta[j] += grow[j];
                        }
                        mean_dh *= inv_q;
                        mean_dh_h *= inv_q;
                        for j in 0..q {
                            let dh = grow[j] * gam.data()[j];
                            dx[i * q + j] = inv_sigma[i] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    add_macs((rows * 12 * q) as u64);
                    vec![
                        Some(output(&shape, dx)),
                        Some(output(&[q], dgamma)),
                        Some(output(&[q], dbeta)),
                    ]
                })
            });
            out = out.with_tracking(Some(tr));
        }
        Ok(out)
    }

    /// Row-wise softmax over a `[p×q]` matrix with an optional visibility
    /// mask (`true` = attend). Masked logits receive an additive `-1e30`
    /// before the stable softmax and are forced to exact zero afterwards.
    ///
    /// # Errors
    /// * shape mismatch unless rank 2 and the mask (when given) has `p·q`
    ///   entries,
    /// * numeric error on NaN input or when a row is fully masked.
    pub fn masked_softmax_rows(&self, mask: Option<&[bool]>) -> Result<Tensor<E>> {
        if self.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "masked_softmax_rows",
                detail: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        let (p, q) = (self.shape()[0], self.shape()[1]);
        if let Some(m) = mask {
            if m.len() != p * q {
                return Err(TensorError::ShapeMismatch {
                    op: "masked_softmax_rows",
                    detail: format!("mask length {} for shape [{p}, {q}]", m.len()),
                });
            }
        }
        if q == 0 && p > 0 {
            return Err(TensorError::NonFinite {
                op: "masked_softmax_rows",
                detail: "row of width zero has no visible entries".to_string(),
            });
        }
        for (i, v) in self.data().iter().enumerate() {
            if v.to_f64().is_nan() {
                return Err(TensorError::NonFinite {
                    op: "masked_softmax_rows",
                    detail: format!("NaN logit at flat index {i}"),
                });
            }
        }
        let visible = |i: usize, j: usize| mask.map_or(true, |m| m[i * q + j]);
        let penalty = E::from_f64(MASK_PENALTY);

        let mut data = vec![E::ZERO; p * q];
        for i in 0..p {
            if mask.is_some() && (0..q).all(|j| !visible(i, j)) {
                return Err(TensorError::NonFinite {
                    op: "masked_softmax_rows",
                    detail: format!("row {i} is fully masked"),
                });
            }
            let x = &self.data()[i * q..(i + 1) * q];
            let mut max = E::from_f64(f64::NEG_INFINITY);
            for j in 0..q {
                let z = if visible(i, j) { x[j] } else { x[j] + penalty };
                max = max.max_with(z);
            }
            let mut sum = E::ZERO;
            for j in 0..q {
                let z = if visible(i, j) { x[j] } else { x[j] + penalty };
                let e = (z - max).exp();
                data[i * q + j] = e;
                sum += e;
            }
            let inv = E::ONE / sum;
            for j in 0..q {
                // Hard zero for masked cells: structural, not merely tiny.
                data[i * q + j] = if visible(i, j) {
                    data[i * q + j] * inv
                } else {
                    E::ZERO
                };
            }
        }
        add_cmps((p * q) as u64);
        add_exps((p * q) as u64);
        add_macs((3 * p * q) as u64);

        let mut out = output(&[p, q], data.clone());
        if let Some(tr) = self.tracked() {
            let y = data;
            let tape = tr.tape.clone();
            let rec = tape.record(parent_ids(&[self]), &[p, q], {
                Box::new(move |g: &Tensor<E>| {
                    let mut dx = vec![E::ZERO; p * q];
                    for i in 0..p {
                        let yrow = &y[i * q..(i + 1) * q];
                        let grow = &g.data()[i * q..(i + 1) * q];
                        let mut dot = E::ZERO;
                        for j in 0..q {
                            dot += yrow[j] * grow[j];
                        }
                        for j in 0..q {
                            dx[i * q + j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    add_macs((3 * p * q) as u64);
                    vec![Some(output(&[p, q], dx))]
                })
            });
            out = out.with_tracking(Some(rec));
        }
        Ok(out)
    }

    /// Inverted dropout: keeps each element with probability `1 - rate` and
    /// scales survivors by `1/(1 - rate)`. `rate == 0` is the identity.
    ///
    /// # Errors
    /// Contract error unless `0 ≤ rate < 1`.
    pub fn dropout<R: Rng>(&self, rate: f64, rng: &mut R) -> Result<Tensor<E>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument {
                op: "dropout",
                detail: format!("rate {rate} outside [0, 1)"),
            });
        }
        if rate == 0.0 {
            return Ok(self.clone());
        }
        let keep_scale = E::from_f64(1.0 / (1.0 - rate));
        let mut mask: Vec<E> = Vec::with_capacity(self.len());
        for _ in 0..self.len() {
            let u: f64 = rng.gen();
            mask.push(if u >= rate { keep_scale } else { E::ZERO });
        }
        add_cmps(self.len() as u64);
        let mut out = output(self.shape(), ew_mul(self.data(), &mask));
        if let Some(tr) = self.tracked() {
            let tape = tr.tape.clone();
            let shape = self.shape().to_vec();
            let rec = tape.record(parent_ids(&[self]), &shape, {
                Box::new(move |g: &Tensor<E>| vec![Some(output(g.shape(), ew_mul(g.data(), &mask)))])
            });
            out = out.with_tracking(Some(rec));
        }
        Ok(out)
    }
}

/// Gathers rows of an embedding `table [V×d]` at `ids`, giving `[len×d]`.
/// The backward pass scatter-adds row gradients into the table.
///
/// # Errors
/// Shape mismatch unless the table is rank 2; out-of-range error for any id
/// `≥ V`.
pub fn embedding_lookup<E: Element>(table: &Tensor<E>, ids: &[usize]) -> Result<Tensor<E>> {
    if table.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "embedding_lookup",
            detail: format!("table must be rank 2, got {:?}", table.shape()),
        });
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    for (pos, id) in ids.iter().enumerate() {
        if *id >= v {
            return Err(TensorError::OutOfRange {
                op: "embedding_lookup",
                detail: format!("id {id} at position {pos} for table of {v} rows"),
            });
        }
    }
    let mut data = Vec::with_capacity(ids.len() * d);
    for id in ids {
        data.extend_from_slice(&table.data()[id * d..(id + 1) * d]);
    }
    let out_shape = [ids.len(), d];
    let mut out = output(&out_shape, data);
    if let Some(tr) = table.tracked() {
        let ids_cl = ids.to_vec();
        let tape = tr.tape.clone();
        let rec = tape.record(parent_ids(&[table]), &out_shape, {
            Box::new(move |g: &Tensor<E>| {
                let mut dt = vec![E::ZERO; v * d];
                for (row, id) in ids_cl.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g.data()[row * d + j];
                    }
                }
                add_macs((ids_cl.len() * d) as u64);
                vec![Some(output(&[v, d], dt))]
            })
        });
        out = out.with_tracking(Some(rec));
    }
    Ok(out)
}

/// Mean softmax cross-entropy of `logits [p×C]` against integer `targets`.
///
/// # Errors
/// * shape mismatch unless rank 2 with one target per row and `p ≥ 1`,
/// * out-of-range error for a target id `≥ C`,
/// * numeric error on non-finite logits.
pub fn cross_entropy_mean<E: Element>(logits: &Tensor<E>, targets: &[usize]) -> Result<Tensor<E>> {
    if logits.rank() != 2 || logits.shape()[0] != targets.len() || targets.is_empty() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy_mean",
            detail: format!(
                "logits {:?} vs {} targets (need one non-empty row per target)",
                logits.shape(),
                targets.len()
            ),
        });
    }
    let (p, c) = (logits.shape()[0], logits.shape()[1]);
    for (i, t) in targets.iter().enumerate() {
        if *t >= c {
            return Err(TensorError::OutOfRange {
                op: "cross_entropy_mean",
                detail: format!("target {t} at row {i} for {c} classes"),
            });
        }
    }
    if !logits.all_finite() {
        return Err(TensorError::NonFinite {
            op: "cross_entropy_mean",
            detail: "logits".to_string(),
        });
    }

    let inv_p = 1.0 / p as f64;
    let mut probs = vec![E::ZERO; p * c];
    let mut loss = 0.0f64;
    for i in 0..p {
        let row = &logits.data()[i * c..(i + 1) * c];
        let mut max = row[0];
        for v in row {
            max = max.max_with(*v);
        }
        let mut sum = E::ZERO;
        for j in 0..c {
            let e = (row[j] - max).exp();
            probs[i * c + j] = e;
            sum += e;
        }
        let inv = E::ONE / sum;
        for j in 0..c {
            probs[i * c + j] *= inv;
        }
        // log-softmax of the target via the already-computed pieces.
        let log_z = sum.ln().to_f64() + max.to_f64();
        loss += (log_z - logits.data()[i * c + targets[i]].to_f64()) * inv_p;
    }
    add_cmps((p * c) as u64);
    add_exps((p * c + p) as u64);
    add_macs((3 * p * c) as u64);

    let mut out = Tensor::scalar(E::from_f64(loss));
    if let Some(tr) = logits.tracked() {
        let tgts = targets.to_vec();
        let tape = tr.tape.clone();
        let rec = tape.record(parent_ids(&[logits]), &[], {
            Box::new(move |g: &Tensor<E>| {
                let gs = g.data()[0] * E::from_f64(inv_p);
                let mut dl = vec![E::ZERO; p * c];
                for i in 0..p {
                    for j in 0..c {
                        let indicator = if tgts[i] == j { E::ONE } else { E::ZERO };
                        dl[i * c + j] = (probs[i * c + j] - indicator) * gs;
                    }
                }
                add_macs((2 * p * c) as u64);
                vec![Some(output(&[p, c], dl))]
            })
        });
        out = out.with_tracking(Some(rec));
    }
    Ok(out)
}

/// Fixed sinusoidal position table `[len×d]` (untracked constant): even
/// channels are sines, odd channels cosines, with the usual geometric
/// wavelength progression from 2π to 10000·2π.
///
/// # Errors
/// Contract error when `d` is odd.
pub fn sinusoidal_positions<E: Element>(len: usize, d: usize) -> Result<Tensor<E>> {
    if d % 2 != 0 {
        return Err(TensorError::InvalidArgument {
            op: "sinusoidal_positions",
            detail: format!("width {d} must be even"),
        });
    }
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            data.push(E::from_f64(v));
        }
    }
    add_exps((len * d) as u64);
    Tensor::from_vec(&[len, d], data)
}
