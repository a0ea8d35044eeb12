//! Hierarchical accumulation kernels.
//!
//! Given per-leaf values `L_v [n×d]` and per-node values `N_v [m×d]`, the
//! pipeline produces accumulated node representations `N̄ [m×d]`:
//!
//! 1. **Interpolation** places values on a dense `(m+1)×n×d` tensor: row 0
//!    holds the leaves, row `i+1` spreads node `i`'s value over the leaf
//!    columns of its span; everything else is a structural zero.
//! 2. **Hierarchical embeddings** (optional) add a per-cell offset
//!    `[vertical-depth embedding ; horizontal-position embedding]` taken
//!    from two learnable tables, touching only occupied cells.
//! 3. **Upward cumulative averaging** walks each leaf column bottom-up and
//!    replaces node cells with the running average of the leaf value and
//!    the node values on the branch so far; the leaf row is consumed.
//! 4. **Weighted aggregation** folds each node row into a single vector
//!    with per-leaf weights and a `1/span` normaliser.
//!
//! Each kernel runs in O(occupied cells × d) scalar ops — for a balanced
//! binary tree that is Θ(n·log n·d) — and records its exact backward pass
//! on the gradient tape. The [`oracle`] module re-derives every step from
//! raw membership sets for cross-checking; it shares no code with the
//! kernels here.

pub mod oracle;

use crate::tensor::{common_tape, output, parent_ids, Element, Result, Tensor, TensorError};
use crate::treebank::{Elem, TreeEncoding, TreeError};

/// Precomputed structure queries for one tree: ancestor chains per leaf and
/// leaf spans per node. Everything the kernels need, derived once from the
/// membership sets.
#[derive(Debug, Clone)]
pub struct BranchSets {
    n_leaves: usize,
    n_nodes: usize,
    /// Per leaf: node indices on the path to the root, parent first.
    chains: Vec<Vec<usize>>,
    /// Per node: inclusive leaf span `(lo, hi)`.
    spans: Vec<(usize, usize)>,
}

impl BranchSets {
    /// Derives chains and spans from an encoding.
    ///
    /// This performs light structural checks (bounds, self-membership,
    /// span contiguity, single root, acyclic parent chains, span/chain
    /// agreement); full invariant checking lives in
    /// [`crate::treebank::validate`].
    ///
    /// # Errors
    /// Invalid-tree error describing the first violated check.
    pub fn from_encoding(enc: &TreeEncoding) -> std::result::Result<Self, TreeError> {
        let n = enc.n_leaves();
        let m = enc.n_nodes();
        if m == 0 {
            return Ok(BranchSets {
                n_leaves: n,
                n_nodes: 0,
                chains: vec![Vec::new(); n],
                spans: Vec::new(),
            });
        }

        let mut spans = Vec::with_capacity(m);
        for i in 0..m {
            if !enc.rules[i].contains(&Elem::Node(i)) {
                return Err(TreeError::Invalid(format!(
                    "node {i} is missing from its own membership set"
                )));
            }
            let leaves = enc.leaf_members(i);
            let (Some(&lo), Some(&hi)) = (leaves.first(), leaves.last()) else {
                return Err(TreeError::Invalid(format!("node {i} covers no leaves")));
            };
            if hi >= n {
                return Err(TreeError::Invalid(format!(
                    "node {i} references leaf {hi} out of range"
                )));
            }
            if leaves.len() != hi - lo + 1 {
                return Err(TreeError::Invalid(format!(
                    "node {i} covers a non-contiguous leaf span"
                )));
            }
            spans.push((lo, hi));
        }

        // Parent = smallest container. Containers of an element are totally
        // ordered by inclusion in a valid tree, so the one with the fewest
        // members is the immediate parent; this holds for any node
        // enumeration order, not just post-order.
        let node_parent: Vec<Option<usize>> = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|k| *k != i && enc.rules[*k].contains(&Elem::Node(i)))
                    .min_by_key(|k| enc.rules[*k].len())
            })
            .collect();
        let roots = node_parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(TreeError::Invalid(format!(
                "expected exactly one root node, found {roots}"
            )));
        }

        let mut chains = Vec::with_capacity(n);
        for j in 0..n {
            let Some(first) = (0..m)
                .filter(|i| enc.rules[*i].contains(&Elem::Leaf(j)))
                .min_by_key(|i| enc.rules[*i].len())
            else {
                return Err(TreeError::Invalid(format!("leaf {j} belongs to no node")));
            };
            let mut chain = vec![first];
            let mut cur = first;
            while let Some(p) = node_parent[cur] {
                if chain.len() > m {
                    return Err(TreeError::Invalid(format!(
                        "parent chain from leaf {j} exceeds the node count (cycle)"
                    )));
                }
                chain.push(p);
                cur = p;
            }
            chains.push(chain);
        }

        // Spans and chains must describe the same occupied cells.
        let span_cells: usize = spans.iter().map(|(lo, hi)| hi - lo + 1).sum();
        let chain_cells: usize = chains.iter().map(Vec::len).sum();
        if span_cells != chain_cells {
            return Err(TreeError::Invalid(format!(
                "span cells ({span_cells}) and ancestor-chain cells ({chain_cells}) disagree"
            )));
        }

        Ok(BranchSets {
            n_leaves: n,
            n_nodes: m,
            chains,
            spans,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Node ancestor chain of leaf `j`, parent first.
    pub fn chain(&self, j: usize) -> &[usize] {
        &self.chains[j]
    }

    /// Inclusive leaf span of node `i`.
    pub fn span(&self, i: usize) -> (usize, usize) {
        self.spans[i]
    }

    pub fn span_len(&self, i: usize) -> usize {
        let (lo, hi) = self.spans[i];
        hi - lo + 1
    }

    /// Number of occupied node cells (row 0 of the interpolation excluded).
    pub fn occupied_cells(&self) -> usize {
        self.chains.iter().map(Vec::len).sum()
    }
}

/// Dense interpolation tensor plus its structural-occupancy mask.
///
/// `values` has shape `[(m+1), n, d]`: row 0 carries the leaves, row `i+1`
/// node `i`. `occupancy` is row-major `[(m+1) × n]`; a `false` cell is an
/// exact zero in `values` and stays zero through every kernel.
pub struct Interpolated<E: Element> {
    pub values: Tensor<E>,
    pub occupancy: Vec<bool>,
}

fn check_2d<E: Element>(op: &'static str, t: &Tensor<E>, rows: usize, what: &str) -> Result<usize> {
    if t.rank() != 2 || t.shape()[0] != rows {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{what} expected [{rows}, d], got {:?}", t.shape()),
        });
    }
    Ok(t.shape()[1])
}

/// Spreads leaf and node values onto the dense accumulation tensor (step 1).
///
/// Placement only — no arithmetic: `out[0,j] = leaves_v[j]` and
/// `out[i+1,j] = nodes_v[i]` for every leaf `j` in node `i`'s span.
///
/// # Errors
/// Shape mismatch when the value matrices disagree with `branch` or each
/// other.
pub fn interpolate<E: Element>(
    leaves_v: &Tensor<E>,
    nodes_v: &Tensor<E>,
    branch: &BranchSets,
) -> Result<Interpolated<E>> {
    let (n, m) = (branch.n_leaves(), branch.n_nodes());
    let d = check_2d("interpolate", leaves_v, n, "leaf values")?;
    let dn = check_2d("interpolate", nodes_v, m, "node values")?;
    if d != dn {
        return Err(TensorError::ShapeMismatch {
            op: "interpolate",
            detail: format!("leaf width {d} vs node width {dn}"),
        });
    }
    let tape = common_tape("interpolate", &[leaves_v, nodes_v])?;

    let rows = m + 1;
    let mut data = vec![E::ZERO; rows * n * d];
    let mut occupancy = vec![false; rows * n];
    for j in 0..n {
        occupancy[j] = true;
        data[j * d..(j + 1) * d].copy_from_slice(&leaves_v.data()[j * d..(j + 1) * d]);
    }
    for i in 0..m {
        let (lo, hi) = branch.span(i);
        let nrow = &nodes_v.data()[i * d..(i + 1) * d];
        for j in lo..=hi {
            occupancy[(i + 1) * n + j] = true;
            let base = ((i + 1) * n + j) * d;
            data[base..base + d].copy_from_slice(nrow);
        }
    }

    let shape = [rows, n, d];
    let mut values = output(&shape, data);
    if let Some(tape) = tape {
        let spans = branch.spans.clone();
        let tr = tape.record(parent_ids(&[leaves_v, nodes_v]), &shape, {
            Box::new(move |g: &Tensor<E>| {
                let mut dl = vec![E::ZERO; n * d];
                dl.copy_from_slice(&g.data()[..n * d]);
                let mut dn = vec![E::ZERO; m * d];
                for (i, (lo, hi)) in spans.iter().enumerate() {
                    for j in *lo..=*hi {
                        let base = ((i + 1) * n + j) * d;
                        for c in 0..d {
                            dn[i * d + c] += g.data()[base + c];
                        }
                    }
                }
                crate::tensor::counters::add_macs((spans
                    .iter()
                    .map(|(lo, hi)| hi - lo + 1)
                    .sum::<usize>()
                    * d) as u64);
                vec![Some(output(&[n, d], dl)), Some(output(&[m, d], dn))]
            })
        });
        values = values.with_tracking(Some(tr));
    }
    Ok(Interpolated { values, occupancy })
}

fn check_tables<E: Element>(
    op: &'static str,
    e_v: &Tensor<E>,
    e_h: &Tensor<E>,
) -> Result<(usize, usize)> {
    if e_v.rank() != 2 || e_h.rank() != 2 || e_v.shape() != e_h.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!(
                "embedding tables must be rank 2 with equal shapes, got {:?} and {:?}",
                e_v.shape(),
                e_h.shape()
            ),
        });
    }
    let rows = e_v.shape()[0];
    if rows < 2 {
        return Err(TensorError::InvalidArgument {
            op,
            detail: format!("embedding tables need at least 2 rows, got {rows}"),
        });
    }
    Ok((rows, e_v.shape()[1]))
}

/// Table row for a 1-based structural count, clipping deep structures to
/// the last row.
#[inline]
fn clip_index(count: usize, rows: usize) -> usize {
    count.min(rows - 1)
}

/// Builds the dense hierarchical-embedding tensor `[(m+1), n, 2h]` (step 2,
/// standalone form). Cell `(i+1, j)` of an occupied pair gets
/// `[e_v[depth] ; e_h[position]]`, where `depth` counts the nodes on the
/// branch from leaf `j` up to node `i` and `position` is the leaf's 1-based
/// offset inside the node's span; both clip to the table height. Row 0 and
/// unoccupied cells stay zero.
///
/// # Errors
/// Shape mismatch for malformed tables.
pub fn build_hier_embeddings<E: Element>(
    branch: &BranchSets,
    e_v: &Tensor<E>,
    e_h: &Tensor<E>,
) -> Result<Tensor<E>> {
    let (rows_t, h) = check_tables("build_hier_embeddings", e_v, e_h)?;
    let (n, m) = (branch.n_leaves(), branch.n_nodes());
    let rows = m + 1;
    let d = 2 * h;
    let mut data = vec![E::ZERO; rows * n * d];
    for j in 0..n {
        for (p, i) in branch.chain(j).iter().enumerate() {
            let vi = clip_index(p + 1, rows_t);
            let hi_idx = clip_index(j - branch.span(*i).0 + 1, rows_t);
            let base = ((i + 1) * n + j) * d;
            data[base..base + h].copy_from_slice(&e_v.data()[vi * h..(vi + 1) * h]);
            data[base + h..base + d].copy_from_slice(&e_h.data()[hi_idx * h..(hi_idx + 1) * h]);
        }
    }
    let shape = [rows, n, d];
    let tape = common_tape("build_hier_embeddings", &[e_v, e_h])?;
    let mut out = output(&shape, data);
    if let Some(tape) = tape {
        let chains = branch.chains.clone();
        let spans = branch.spans.clone();
        let tr = tape.record(parent_ids(&[e_v, e_h]), &shape, {
            Box::new(move |g: &Tensor<E>| {
                let mut dv = vec![E::ZERO; rows_t * h];
                let mut dh = vec![E::ZERO; rows_t * h];
                for (j, chain) in chains.iter().enumerate() {
                    for (p, i) in chain.iter().enumerate() {
                        let vi = clip_index(p + 1, rows_t);
                        let hi_idx = clip_index(j - spans[*i].0 + 1, rows_t);
                        let base = ((i + 1) * n + j) * d;
                        for c in 0..h {
                            dv[vi * h + c] += g.data()[base + c];
                            dh[hi_idx * h + c] += g.data()[base + h + c];
                        }
                    }
                }
                crate::tensor::counters::add_macs(
                    (chains.iter().map(Vec::len).sum::<usize>() * d) as u64,
                );
                vec![
                    Some(output(&[rows_t, h], dv)),
                    Some(output(&[rows_t, h], dh)),
                ]
            })
        });
        out = out.with_tracking(Some(tr));
    }
    Ok(out)
}

/// Adds hierarchical embeddings to an interpolation in one fused pass over
/// the occupied cells (the composition [`accumulate`] uses). Equivalent to
/// `interp.values + build_hier_embeddings(...)` but skips the structural
/// zeros, keeping the kernel cost proportional to the occupied cells.
///
/// # Errors
/// Shape mismatch when tables or the interpolation disagree with `branch`.
pub fn add_hier_embeddings<E: Element>(
    interp: &Interpolated<E>,
    branch: &BranchSets,
    e_v: &Tensor<E>,
    e_h: &Tensor<E>,
) -> Result<Interpolated<E>> {
    let (rows_t, h) = check_tables("add_hier_embeddings", e_v, e_h)?;
    let (n, m) = (branch.n_leaves(), branch.n_nodes());
    let rows = m + 1;
    let d = 2 * h;
    if interp.values.shape() != [rows, n, d] {
        return Err(TensorError::ShapeMismatch {
            op: "add_hier_embeddings",
            detail: format!(
                "interpolation {:?} vs expected [{rows}, {n}, {d}]",
                interp.values.shape()
            ),
        });
    }
    let tape = common_tape("add_hier_embeddings", &[&interp.values, e_v, e_h])?;

    let mut data = interp.values.data().to_vec();
    for j in 0..n {
        for (p, i) in branch.chain(j).iter().enumerate() {
            let vi = clip_index(p + 1, rows_t);
            let hi_idx = clip_index(j - branch.span(*i).0 + 1, rows_t);
            let base = ((i + 1) * n + j) * d;
            for c in 0..h {
                data[base + c] += e_v.data()[vi * h + c];
                data[base + h + c] += e_h.data()[hi_idx * h + c];
            }
        }
    }
    crate::tensor::counters::add_macs((branch.occupied_cells() * d) as u64);

    let shape = [rows, n, d];
    let mut values = output(&shape, data);
    if let Some(tape) = tape {
        let chains = branch.chains.clone();
        let spans = branch.spans.clone();
        let tr = tape.record(parent_ids(&[&interp.values, e_v, e_h]), &shape, {
            Box::new(move |g: &Tensor<E>| {
                let mut dv = vec![E::ZERO; rows_t * h];
                let mut dh = vec![E::ZERO; rows_t * h];
                for (j, chain) in chains.iter().enumerate() {
                    for (p, i) in chain.iter().enumerate() {
                        let vi = clip_index(p + 1, rows_t);
                        let hi_idx = clip_index(j - spans[*i].0 + 1, rows_t);
                        let base = ((i + 1) * n + j) * d;
                        for c in 0..h {
                            dv[vi * h + c] += g.data()[base + c];
                            dh[hi_idx * h + c] += g.data()[base + h + c];
                        }
                    }
                }
                crate::tensor::counters::add_macs(
                    (chains.iter().map(Vec::len).sum::<usize>() * d) as u64,
                );
                vec![
                    Some(g.detach()),
                    Some(output(&[rows_t, h], dv)),
                    Some(output(&[rows_t, h], dh)),
                ]
            })
        });
        values = values.with_tracking(Some(tr));
    }
    Ok(Interpolated {
        values,
        occupancy: interp.occupancy.clone(),
    })
}

/// Upward cumulative averaging (step 3): walking each leaf column from its
/// parent to the root, node cell `(i, j)` becomes the average of the leaf
/// value and the node values on the branch up to and including `i`. The
/// leaf row is consumed; output shape is `[m, n, d]` with structural zeros
/// untouched (exactly zero, not approximately).
///
/// # Errors
/// Shape mismatch when `interp` disagrees with `branch`.
pub fn upward_cumavg<E: Element>(
    interp: &Interpolated<E>,
    branch: &BranchSets,
) -> Result<Tensor<E>> {
    let (n, m) = (branch.n_leaves(), branch.n_nodes());
    if interp.values.rank() != 3
        || interp.values.shape()[0] != m + 1
        || interp.values.shape()[1] != n
    {
        return Err(TensorError::ShapeMismatch {
            op: "upward_cumavg",
            detail: format!(
                "interpolation {:?} vs expected [{}, {n}, d]",
                interp.values.shape(),
                m + 1
            ),
        });
    }
    let d = interp.values.shape()[2];

    let src = interp.values.data();
    let mut data = vec![E::ZERO; m * n * d];
    let mut running = vec![E::ZERO; d];
    for j in 0..n {
        running.copy_from_slice(&src[j * d..(j + 1) * d]);
        for (p, i) in branch.chain(j).iter().enumerate() {
            let node_base = ((i + 1) * n + j) * d;
            let out_base = (i * n + j) * d;
            let inv = E::ONE / E::from_f64((p + 2) as f64);
            for c in 0..d {
                running[c] += src[node_base + c];
                data[out_base + c] = running[c] * inv;
            }
        }
    }
    crate::tensor::counters::add_macs((2 * branch.occupied_cells() * d) as u64);

    let shape = [m, n, d];
    let mut out = output(&shape, data);
    if let Some(tr0) = interp.values.tracked() {
        let tape = tr0.tape.clone();
        let chains = branch.chains.clone();
        let tr = tape.record(parent_ids(&[&interp.values]), &shape, {
            Box::new(move |g: &Tensor<E>| {
                let mut dx = vec![E::ZERO; (m + 1) * n * d];
                let mut suffix = vec![E::ZERO; d];
                for (j, chain) in chains.iter().enumerate() {
                    suffix.iter_mut().for_each(|v| *v = E::ZERO);
                    // Walk the chain top-down: cell p's weighted gradient
                    // feeds every source at or below p.
                    for (p, i) in chain.iter().enumerate().rev() {
                        let inv = E::ONE / E::from_f64((p + 2) as f64);
                        let g_base = (i * n + j) * d;
                        for c in 0..d {
                            suffix[c] += g.data()[g_base + c] * inv;
                        }
                        let src_base = ((i + 1) * n + j) * d;
                        for c in 0..d {
                            dx[src_base + c] = suffix[c];
                        }
                    }
                    // Leaf row receives the full suffix sum.
                    for c in 0..d {
                        dx[j * d + c] = suffix[c];
                    }
                }
                crate::tensor::counters::add_macs(
                    (2 * chains.iter().map(Vec::len).sum::<usize>() * d) as u64,
                );
                vec![Some(output(&[m + 1, n, d], dx))]
            })
        });
        out = out.with_tracking(Some(tr));
    }
    Ok(out)
}

/// Weighted aggregation (step 4): node `i`'s row of the averaged tensor is
/// folded into one vector, `out[i] = (1/|span(i)|) · Σ_{j∈span(i)} w[j] ·
/// s_hat[i, j]`.
///
/// # Errors
/// Shape mismatch when `s_hat` or `w` disagree with `branch`.
pub fn weighted_aggregate<E: Element>(
    s_hat: &Tensor<E>,
    w: &Tensor<E>,
    branch: &BranchSets,
) -> Result<Tensor<E>> {
    let (n, m) = (branch.n_leaves(), branch.n_nodes());
    if s_hat.rank() != 3 || s_hat.shape()[0] != m || s_hat.shape()[1] != n {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_aggregate",
            detail: format!("averaged tensor {:?} vs expected [{m}, {n}, d]", s_hat.shape()),
        });
    }
    if w.shape() != [n] {
        return Err(TensorError::ShapeMismatch {
            op: "weighted_aggregate",
            detail: format!("weights {:?} vs expected [{n}]", w.shape()),
        });
    }
    let d = s_hat.shape()[2];
    let tape = common_tape("weighted_aggregate", &[s_hat, w])?;

    let mut data = vec![E::ZERO; m * d];
    for i in 0..m {
        let (lo, hi) = branch.span(i);
        let inv = E::ONE / E::from_f64((hi - lo + 1) as f64);
        for j in lo..=hi {
            let wj = w.data()[j];
            let base = (i * n + j) * d;
            for c in 0..d {
                data[i * d + c] += wj * s_hat.data()[base + c];
            }
        }
        for c in 0..d {
            data[i * d + c] *= inv;
        }
    }
    crate::tensor::counters::add_macs((2 * branch.occupied_cells() * d + m * d) as u64);

    let shape = [m, d];
    let mut out = output(&shape, data);
    if let Some(tape) = tape {
        let spans = branch.spans.clone();
        let sh = s_hat.detach();
        let wt = w.detach();
        let tr = tape.record(parent_ids(&[s_hat, w]), &shape, {
            Box::new(move |g: &Tensor<E>| {
                let mut ds = vec![E::ZERO; m * n * d];
                let mut dw = vec![E::ZERO; n];
                for (i, (lo, hi)) in spans.iter().enumerate() {
                    let inv = E::ONE / E::from_f64((hi - lo + 1) as f64);
                    for j in *lo..=*hi {
                        let base = (i * n + j) * d;
                        let scale = wt.data()[j] * inv;
                        let mut dot = E::ZERO;
                        for c in 0..d {
                            ds[base + c] = g.data()[i * d + c] * scale;
                            dot += g.data()[i * d + c] * sh.data()[base + c];
                        }
                        dw[j] += dot * inv;
                    }
                }
                crate::tensor::counters::add_macs(
                    (spans
                        .iter()
                        .map(|(lo, hi)| hi - lo + 1)
                        .sum::<usize>()
                        * 4
                        * d) as u64,
                );
                vec![Some(output(&[m, n, d], ds)), Some(output(&[n], dw))]
            })
        });
        out = out.with_tracking(Some(tr));
    }
    Ok(out)
}

/// Full accumulation: interpolation, optional hierarchical embeddings,
/// upward cumulative averaging, weighted aggregation. Returns the
/// accumulated node values `[m×d]`.
///
/// # Errors
/// Propagates shape mismatches from the composed kernels.
pub fn accumulate<E: Element>(
    leaves_v: &Tensor<E>,
    nodes_v: &Tensor<E>,
    branch: &BranchSets,
    hier: Option<(&Tensor<E>, &Tensor<E>)>,
    w: &Tensor<E>,
) -> Result<Tensor<E>> {
    let mut interp = interpolate(leaves_v, nodes_v, branch)?;
    if let Some((e_v, e_h)) = hier {
        interp = add_hier_embeddings(&interp, branch, e_v, e_h)?;
    }
    let s_hat = upward_cumavg(&interp, branch)?;
    weighted_aggregate(&s_hat, w, branch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{encode_tree, parse_bracketed};

    fn branch_of(src: &str) -> (TreeEncoding, BranchSets) {
        let enc = encode_tree(&parse_bracketed(src).unwrap()).unwrap();
        let b = BranchSets::from_encoding(&enc).unwrap();
        (enc, b)
    }

    #[test]
    fn branch_sets_expose_chains_and_spans() {
        // Post-order nodes: h = 0 (over d, e), g = 1 (root).
        let (_, b) = branch_of("(g c (h d e))");
        assert_eq!(b.n_leaves(), 3);
        assert_eq!(b.n_nodes(), 2);
        assert_eq!(b.chain(0), &[1]); // c -> g
        assert_eq!(b.chain(1), &[0, 1]); // d -> h -> g
        assert_eq!(b.chain(2), &[0, 1]);
        assert_eq!(b.span(0), (1, 2)); // h covers d, e
        assert_eq!(b.span(1), (0, 2)); // g covers everything
        assert_eq!(b.occupied_cells(), 5);
    }

    #[test]
    fn interpolate_places_values_on_spans() {
        let (_, b) = branch_of("(g c (h d e))");
        let lv = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let nv = Tensor::from_vec(&[2, 1], vec![5.0, 4.0]).unwrap(); // h=5, g=4
        let interp = interpolate(&lv, &nv, &b).unwrap();
        assert_eq!(interp.values.shape(), &[3, 3, 1]);
        // Row 0: leaves.
        assert_eq!(interp.values.at3(0, 0, 0), 1.0);
        assert_eq!(interp.values.at3(0, 2, 0), 3.0);
        // Row 1 (node h): zero, 5, 5.
        assert_eq!(interp.values.at3(1, 0, 0), 0.0);
        assert!(!interp.occupancy[1 * 3]);
        assert_eq!(interp.values.at3(1, 1, 0), 5.0);
        assert_eq!(interp.values.at3(1, 2, 0), 5.0);
        // Row 2 (node g): 4, 4, 4.
        for j in 0..3 {
            assert_eq!(interp.values.at3(2, j, 0), 4.0);
        }
    }

    #[test]
    fn upward_cumavg_matches_hand_computation() {
        let (_, b) = branch_of("(g c (h d e))");
        let lv = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let nv = Tensor::from_vec(&[2, 1], vec![5.0, 4.0]).unwrap();
        let interp = interpolate(&lv, &nv, &b).unwrap();
        let s_hat = upward_cumavg(&interp, &b).unwrap();
        // Node h row: (0, (2+5)/2, (3+5)/2).
        assert_eq!(s_hat.at3(0, 0, 0), 0.0);
        assert!((s_hat.at3(0, 1, 0) - 3.5).abs() < 1e-15);
        assert!((s_hat.at3(0, 2, 0) - 4.0).abs() < 1e-15);
        // Node g row: ((1+4)/2, (2+5+4)/3, (3+5+4)/3).
        assert!((s_hat.at3(1, 0, 0) - 2.5).abs() < 1e-15);
        assert!((s_hat.at3(1, 1, 0) - 11.0 / 3.0).abs() < 1e-15);
        assert!((s_hat.at3(1, 2, 0) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_aggregate_matches_hand_computation() {
        let (_, b) = branch_of("(g c (h d e))");
        let lv = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let nv = Tensor::from_vec(&[2, 1], vec![5.0, 4.0]).unwrap();
        let interp = interpolate(&lv, &nv, &b).unwrap();
        let s_hat = upward_cumavg(&interp, &b).unwrap();
        let w = Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]).unwrap();
        let out = weighted_aggregate(&s_hat, &w, &b).unwrap();
        // h: (3.5 + 4.0)/2 ; g: (2.5 + 11/3 + 4)/3.
        assert!((out.at2(0, 0) - 3.75).abs() < 1e-15);
        assert!((out.at2(1, 0) - 61.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn structural_zeros_survive_every_kernel_exactly() {
        let (_, b) = branch_of("(A (B x y) (C z w) v)");
        let lv = Tensor::full(&[5, 2], 3.25);
        let nv = Tensor::full(&[3, 2], -1.5);
        let ev = Tensor::full(&[4, 1], 0.7);
        let eh = Tensor::full(&[4, 1], -0.2);
        let interp = interpolate(&lv, &nv, &b).unwrap();
        let with_e = add_hier_embeddings(&interp, &b, &ev, &eh).unwrap();
        let s_hat = upward_cumavg(&with_e, &b).unwrap();
        let (m, n, d) = (3, 5, 2);
        for i in 0..m {
            let (lo, hi) = b.span(i);
            for j in 0..n {
                for c in 0..d {
                    let v = s_hat.at3(i, j, c);
                    if j < lo || j > hi {
                        assert_eq!(v, 0.0, "cell ({i},{j},{c}) must be a structural zero");
                    } else {
                        assert_ne!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn hier_embedding_indices_follow_depth_and_position() {
        let (_, b) = branch_of("(g c (h d e))");
        // Identity-revealing tables: row k of e_v holds 10k, of e_h holds k.
        let ev = Tensor::from_vec(&[4, 1], vec![0.0, 10.0, 20.0, 30.0]).unwrap();
        let eh = Tensor::from_vec(&[4, 1], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let e = build_hier_embeddings(&b, &ev, &eh).unwrap();
        assert_eq!(e.shape(), &[3, 3, 2]);
        // Row 0 (leaves): all zero.
        for j in 0..3 {
            assert_eq!(e.at3(0, j, 0), 0.0);
            assert_eq!(e.at3(0, j, 1), 0.0);
        }
        // Node h (row 1): leaves d, e at depth 1, positions 1, 2.
        assert_eq!((e.at3(1, 1, 0), e.at3(1, 1, 1)), (10.0, 1.0));
        assert_eq!((e.at3(1, 2, 0), e.at3(1, 2, 1)), (10.0, 2.0));
        // Node g (row 2): c at depth 1 pos 1; d at depth 2 pos 2; e depth 2 pos 3.
        assert_eq!((e.at3(2, 0, 0), e.at3(2, 0, 1)), (10.0, 1.0));
        assert_eq!((e.at3(2, 1, 0), e.at3(2, 1, 1)), (20.0, 2.0));
        assert_eq!((e.at3(2, 2, 0), e.at3(2, 2, 1)), (20.0, 3.0));
        // Unoccupied cell stays zero.
        assert_eq!(e.at3(1, 0, 0), 0.0);
    }

    #[test]
    fn fused_embedding_add_matches_dense_add() {
        let (_, b) = branch_of("(A (B x y) (C z w) v)");
        let lv = Tensor::from_fn(&[5, 4], |i| (i as f64) * 0.13 - 1.0);
        let nv = Tensor::from_fn(&[3, 4], |i| (i as f64) * -0.07 + 0.4);
        let ev = Tensor::from_fn(&[6, 2], |i| (i as f64) * 0.31);
        let eh = Tensor::from_fn(&[6, 2], |i| (i as f64) * -0.11);
        let interp = interpolate(&lv, &nv, &b).unwrap();
        let fused = add_hier_embeddings(&interp, &b, &ev, &eh).unwrap();
        let dense = build_hier_embeddings(&b, &ev, &eh).unwrap();
        let direct = interp.values.add(&dense).unwrap();
        assert_eq!(fused.values.max_abs_diff(&direct), Some(0.0));
    }

    #[test]
    fn deep_structures_clip_to_the_table_height() {
        // Chain depth 5 with 3-row tables: indices clip to row 2.
        let mut src = String::from("x");
        for _ in 0..5 {
            src = format!("(N {src})");
        }
        let (_, b) = branch_of(&src);
        let ev = Tensor::from_vec(&[3, 1], vec![0.0, 1.0, 2.0]).unwrap();
        let eh = Tensor::from_vec(&[3, 1], vec![0.0, 5.0, 6.0]).unwrap();
        let e = build_hier_embeddings(&b, &ev, &eh).unwrap();
        // Deepest ancestor (root, chain position 5) clips to row 2.
        let m = b.n_nodes();
        assert_eq!(e.at3(m, 0, 0), 2.0);
        assert_eq!(e.at3(1, 0, 0), 1.0); // parent of the leaf keeps depth 1
        assert_eq!(e.at3(m, 0, 1), 5.0); // positions all clip/stay at 1
    }

    #[test]
    fn kernels_reject_mismatched_shapes() {
        let (_, b) = branch_of("(g c (h d e))");
        let bad_lv = Tensor::<f64>::zeros(&[2, 4]);
        let nv = Tensor::zeros(&[2, 4]);
        assert!(interpolate(&bad_lv, &nv, &b).is_err());
        let lv = Tensor::<f64>::zeros(&[3, 4]);
        let bad_nv = Tensor::zeros(&[1, 4]);
        assert!(interpolate(&lv, &bad_nv, &b).is_err());
        let s_hat = Tensor::<f64>::zeros(&[2, 3, 4]);
        let bad_w = Tensor::zeros(&[2]);
        assert!(weighted_aggregate(&s_hat, &bad_w, &b).is_err());
    }

    #[test]
    fn zero_node_tree_passes_through_degenerately() {
        let enc = TreeEncoding {
            leaves: vec!["a".into(), "b".into()],
            labels: vec![],
            rules: vec![],
        };
        let b = BranchSets::from_encoding(&enc).unwrap();
        let lv = Tensor::full(&[2, 3], 1.0);
        let nv = Tensor::zeros(&[0, 3]);
        let w = Tensor::full(&[2], 1.0);
        let out = accumulate(&lv, &nv, &b, None, &w).unwrap();
        assert_eq!(out.shape(), &[0, 3]);
    }

    #[test]
    fn branch_sets_reject_structural_violations() {
        let (mut enc, _) = branch_of("(A (B x) (C y))");
        enc.rules[0].insert(crate::treebank::Elem::Leaf(1)); // B grabs leaf y
        assert!(BranchSets::from_encoding(&enc).is_err());
    }
}
