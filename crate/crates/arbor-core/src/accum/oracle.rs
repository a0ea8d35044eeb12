//! Brute-force oracles for the accumulation kernels.
//!
//! Everything here is re-derived from the raw membership sets of a
//! [`TreeEncoding`] by literal set enumeration — no spans, no ancestor
//! chains, no shared code with the kernels — so agreement between the two
//! paths is meaningful evidence. Oracles are plain functions over untracked
//! data and quadratic-ish in cost; they exist for tests and the
//! `oracle-check` command, not for training.

use crate::tensor::{Element, Tensor};
use crate::treebank::{Elem, TreeEncoding};

/// Leaf indices of node `i`'s membership set, by direct enumeration.
fn set_leaves(enc: &TreeEncoding, i: usize) -> Vec<usize> {
    enc.rules[i]
        .iter()
        .filter_map(|e| match e {
            Elem::Leaf(j) => Some(*j),
            Elem::Node(_) => None,
        })
        .collect()
}

/// The branch set of `(i, j)`: nodes `t` in node `i`'s membership set whose
/// own set contains leaf `j` (node `i` itself qualifies). Ascending index.
fn branch_set(enc: &TreeEncoding, i: usize, j: usize) -> Vec<usize> {
    enc.rules[i]
        .iter()
        .filter_map(|e| match e {
            Elem::Node(t) if enc.rules[*t].contains(&Elem::Leaf(j)) => Some(*t),
            _ => None,
        })
        .collect()
}

/// Step-1 oracle: dense `[(m+1), n, d]` interpolation from the sets.
pub fn interpolate<E: Element>(
    enc: &TreeEncoding,
    leaves_v: &Tensor<E>,
    nodes_v: &Tensor<E>,
) -> Tensor<E> {
    let (n, m) = (enc.n_leaves(), enc.n_nodes());
    let d = leaves_v.shape()[1];
    let mut data = vec![E::ZERO; (m + 1) * n * d];
    for j in 0..n {
        for c in 0..d {
            data[j * d + c] = leaves_v.data()[j * d + c];
        }
    }
    for i in 0..m {
        for j in 0..n {
            if enc.rules[i].contains(&Elem::Leaf(j)) {
                for c in 0..d {
                    data[((i + 1) * n + j) * d + c] = nodes_v.data()[i * d + c];
                }
            }
        }
    }
    Tensor::from_vec(&[m + 1, n, d], data).expect("shape by construction")
}

/// Step-2 oracle: dense hierarchical embeddings. The vertical index of an
/// occupied cell `(i, j)` is the size of its branch set; the horizontal
/// index is how many of node `i`'s leaves lie at or before `j`. Both clip
/// to the table height.
pub fn hier_embeddings<E: Element>(
    enc: &TreeEncoding,
    e_v: &Tensor<E>,
    e_h: &Tensor<E>,
) -> Tensor<E> {
    let (n, m) = (enc.n_leaves(), enc.n_nodes());
    let rows_t = e_v.shape()[0];
    let h = e_v.shape()[1];
    let d = 2 * h;
    let mut data = vec![E::ZERO; (m + 1) * n * d];
    for i in 0..m {
        for j in 0..n {
            if !enc.rules[i].contains(&Elem::Leaf(j)) {
                continue;
            }
            let vertical = branch_set(enc, i, j).len().min(rows_t - 1);
            let horizontal = set_leaves(enc, i)
                .iter()
                .filter(|l| **l <= j)
                .count()
                .min(rows_t - 1);
            let base = ((i + 1) * n + j) * d;
            for c in 0..h {
                data[base + c] = e_v.data()[vertical * h + c];
                data[base + h + c] = e_h.data()[horizontal * h + c];
            }
        }
    }
    Tensor::from_vec(&[m + 1, n, d], data).expect("shape by construction")
}

/// Step-3 oracle: for every occupied `(i, j)`, averages the leaf value and
/// the values of the branch-set nodes, each read from the dense tensor.
pub fn upward_cumavg<E: Element>(enc: &TreeEncoding, dense: &Tensor<E>) -> Tensor<E> {
    let (n, m) = (dense.shape()[1], enc.n_nodes());
    let d = dense.shape()[2];
    let mut data = vec![E::ZERO; m * n * d];
    for i in 0..m {
        for j in 0..n {
            if !enc.rules[i].contains(&Elem::Leaf(j)) {
                continue;
            }
            let branch = branch_set(enc, i, j);
            let count = E::from_f64((branch.len() + 1) as f64);
            for c in 0..d {
                let mut acc = dense.at3(0, j, c);
                for t in &branch {
                    acc += dense.at3(t + 1, j, c);
                }
                data[(i * n + j) * d + c] = acc / count;
            }
        }
    }
    Tensor::from_vec(&[m, n, d], data).expect("shape by construction")
}

/// Step-4 oracle: per-node weighted average over its leaf members.
pub fn weighted_aggregate<E: Element>(
    enc: &TreeEncoding,
    s_hat: &Tensor<E>,
    w: &Tensor<E>,
) -> Tensor<E> {
    let m = enc.n_nodes();
    let d = s_hat.shape()[2];
    let mut data = vec![E::ZERO; m * d];
    for i in 0..m {
        let members = set_leaves(enc, i);
        let inv = E::ONE / E::from_f64(members.len() as f64);
        for j in members {
            for c in 0..d {
                data[i * d + c] += w.data()[j] * s_hat.at3(i, j, c);
            }
        }
        for c in 0..d {
            data[i * d + c] *= inv;
        }
    }
    Tensor::from_vec(&[m, d], data).expect("shape by construction")
}

/// Full-pipeline oracle mirroring [`crate::accum::accumulate`].
pub fn accumulate<E: Element>(
    enc: &TreeEncoding,
    leaves_v: &Tensor<E>,
    nodes_v: &Tensor<E>,
    hier: Option<(&Tensor<E>, &Tensor<E>)>,
    w: &Tensor<E>,
) -> Tensor<E> {
    let mut dense = interpolate(enc, leaves_v, nodes_v);
    if let Some((e_v, e_h)) = hier {
        let e = hier_embeddings(enc, e_v, e_h);
        let sum: Vec<E> = dense
            .data()
            .iter()
            .zip(e.data())
            .map(|(a, b)| *a + *b)
            .collect();
        dense = Tensor::from_vec(dense.shape(), sum).expect("same shape");
    }
    let s_hat = upward_cumavg(enc, &dense);
    weighted_aggregate(enc, &s_hat, w)
}
