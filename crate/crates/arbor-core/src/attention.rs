//! Attention layers over constituency trees.
//!
//! The encoder self-attention here treats a parse tree as two key/value
//! populations: the leaves (tokens) and the nodes (phrases). Affinities
//! whose keys are nodes are themselves run through the accumulation
//! pipeline row by row, node values are accumulated once at full width,
//! and a subtree mask restricts node queries to their own subtree while
//! leaf queries attend the leaf sequence only. Decoder cross-attention
//! reuses the accumulated node values but applies no mask — its queries
//! are not elements of the source tree. A standard scaled-dot attention
//! and the shared layer function `phi` (residual + layer norm + FFN)
//! round out the set so baseline and tree models use the same plumbing.

use rand_chacha::ChaCha8Rng;

use crate::accum::{self, BranchSets};
use crate::tensor::{concat, Element, Result, Tensor, TensorError};
use crate::treebank::{Elem, TreeEncoding, TreeError};

/// Epsilon inside every layer normalisation.
pub const LN_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// parameter bundles
// ---------------------------------------------------------------------------

/// Projection parameters of one attention block.
///
/// All four projections are square `[d × d]` with bias vectors `[d]`. `u`
/// is the trainable vector producing the leaf weights `w = L·u` for the
/// accumulation stages; it is present in tree-based blocks only. Cloning
/// is cheap (tensors share storage) and keeps whatever tape tracking the
/// source tensors carry.
#[derive(Clone)]
pub struct AttentionParams<E: Element> {
    pub w_q: Tensor<E>,
    pub b_q: Tensor<E>,
    pub w_k: Tensor<E>,
    pub b_k: Tensor<E>,
    pub w_v: Tensor<E>,
    pub b_v: Tensor<E>,
    pub w_o: Tensor<E>,
    pub b_o: Tensor<E>,
    pub u: Option<Tensor<E>>,
    pub heads: usize,
}

impl<E: Element> AttentionParams<E> {
    /// Validates the square/bias shapes, `heads | d`, and `u` length.
    ///
    /// # Errors
    /// Shape mismatch naming the offending matrix.
    pub fn validated(self) -> Result<Self> {
        let d = self.w_q.shape().first().copied().unwrap_or(0);
        for (name, w, b) in [
            ("query", &self.w_q, &self.b_q),
            ("key", &self.w_k, &self.b_k),
            ("value", &self.w_v, &self.b_v),
            ("output", &self.w_o, &self.b_o),
        ] {
            if w.shape() != [d, d] || b.shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "attention_params",
                    detail: format!(
                        "{name} projection {:?} / bias {:?} for width {d}",
                        w.shape(),
                        b.shape()
                    ),
                });
            }
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(TensorError::InvalidArgument {
                op: "attention_params",
                detail: format!("head count {} must divide width {d}", self.heads),
            });
        }
        if let Some(u) = &self.u {
            if u.shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "attention_params",
                    detail: format!("u vector {:?} for width {d}", u.shape()),
                });
            }
        }
        Ok(self)
    }

    /// Model width `d`.
    pub fn width(&self) -> usize {
        self.w_q.shape()[0]
    }

    /// Per-head width `d / heads`.
    pub fn head_width(&self) -> usize {
        self.width() / self.heads
    }

    fn require_u(&self) -> Result<&Tensor<E>> {
        self.u.as_ref().ok_or_else(|| TensorError::InvalidArgument {
            op: "attention",
            detail: "tree-based attention needs the u vector".to_string(),
        })
    }
}

/// Parameters of the layer function [`transformer_layer_phi`]: a
/// two-layer FFN (`[d × d_ffn]`, `[d_ffn × d]`) and two layer-norm
/// gain/shift pairs.
#[derive(Clone)]
pub struct PhiParams<E: Element> {
    pub w1: Tensor<E>,
    pub b1: Tensor<E>,
    pub w2: Tensor<E>,
    pub b2: Tensor<E>,
    pub ln1_gamma: Tensor<E>,
    pub ln1_beta: Tensor<E>,
    pub ln2_gamma: Tensor<E>,
    pub ln2_beta: Tensor<E>,
}

impl<E: Element> PhiParams<E> {
    /// Validates FFN and layer-norm shapes against each other.
    ///
    /// # Errors
    /// Shape mismatch naming the offending tensor.
    pub fn validated(self) -> Result<Self> {
        if self.w1.rank() != 2 || self.w2.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "phi_params",
                detail: "FFN weights must be matrices".to_string(),
            });
        }
        let (d, d_ffn) = (self.w1.shape()[0], self.w1.shape()[1]);
        if self.w2.shape() != [d_ffn, d]
            || self.b1.shape() != [d_ffn]
            || self.b2.shape() != [d]
        {
            return Err(TensorError::ShapeMismatch {
                op: "phi_params",
                detail: format!(
                    "FFN {:?}/{:?} with biases {:?}/{:?}",
                    self.w1.shape(),
                    self.w2.shape(),
                    self.b1.shape(),
                    self.b2.shape()
                ),
            });
        }
        for ln in [&self.ln1_gamma, &self.ln1_beta, &self.ln2_gamma, &self.ln2_beta] {
            if ln.shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "phi_params",
                    detail: format!("layer-norm parameter {:?} for width {d}", ln.shape()),
                });
            }
        }
        Ok(self)
    }
}

/// Training-time dropout context; pass `None` to every attention function
/// for deterministic evaluation.
pub struct DropoutCtx<'r> {
    /// Rate applied to post-softmax attention weights.
    pub attn_rate: f64,
    /// Rate applied to residual branches inside `phi`.
    pub resid_rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

/// Captures post-softmax attention weights (detached, pre-dropout), one
/// `[queries × (m+n)]` matrix per head, for tests and mass statistics.
#[derive(Default)]
pub struct AttnRecorder<E: Element> {
    pub node_rows: Vec<Tensor<E>>,
    pub leaf_rows: Vec<Tensor<E>>,
    pub cross_rows: Vec<Tensor<E>>,
}

// ---------------------------------------------------------------------------
// subtree mask
// ---------------------------------------------------------------------------

/// Boolean attention mask over `(queries = nodes then leaves) × (keys =
/// nodes then leaves)`: a node query may attend exactly the members of its
/// own subtree (itself included); a leaf query may attend every leaf and
/// no node.
pub struct SubtreeMask {
    m: usize,
    n: usize,
    allow: Vec<bool>,
}

impl SubtreeMask {
    /// Node count `m`.
    pub fn n_nodes(&self) -> usize {
        self.m
    }

    /// Leaf count `n`.
    pub fn n_leaves(&self) -> usize {
        self.n
    }

    /// Key count `m + n`.
    pub fn keys(&self) -> usize {
        self.m + self.n
    }

    /// Whether query row `q` may attend key column `k` (both in
    /// nodes-then-leaves order).
    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.keys() + k]
    }

    /// The `m × (m+n)` node-query rows as one row-major slice.
    pub fn node_rows(&self) -> &[bool] {
        &self.allow[..self.m * self.keys()]
    }

    /// The `n × (m+n)` leaf-query rows as one row-major slice.
    pub fn leaf_rows(&self) -> &[bool] {
        &self.allow[self.m * self.keys()..]
    }
}

/// Builds the subtree mask for an encoding (no validity checking beyond
/// membership lookups; run validation separately on untrusted input).
pub fn build_subtree_mask(enc: &TreeEncoding) -> SubtreeMask {
    let (n, m) = (enc.n_leaves(), enc.n_nodes());
    let keys = m + n;
    let mut allow = vec![false; keys * keys];
    for i in 0..m {
        let row = &mut allow[i * keys..(i + 1) * keys];
        for t in 0..m {
            row[t] = enc.rules[i].contains(&Elem::Node(t));
        }
        for j in 0..n {
            row[m + j] = enc.rules[i].contains(&Elem::Leaf(j));
        }
    }
    for j in 0..n {
        allow[(m + j) * keys + m..(m + j + 1) * keys].fill(true);
    }
    SubtreeMask { m, n, allow }
}

/// Precomputed per-tree structures consumed by the attention layers:
/// branch/span tables for the accumulation kernels and the subtree mask.
pub struct TreeContext {
    pub branch: BranchSets,
    pub mask: SubtreeMask,
}

impl TreeContext {
    /// Derives both structures from an encoding.
    ///
    /// # Errors
    /// Invalid-tree error from branch derivation.
    pub fn new(enc: &TreeEncoding) -> std::result::Result<Self, TreeError> {
        Ok(TreeContext {
            branch: BranchSets::from_encoding(enc)?,
            mask: build_subtree_mask(enc),
        })
    }
}

// ---------------------------------------------------------------------------
// shared building blocks
// ---------------------------------------------------------------------------

/// Per-head scaled query-key affinities: head `l` of the result is
/// `(q_in W_Q + b_Q)_l (k_in W_K + b_K)_l^T / sqrt(d/h)` on head-sliced
/// projections. Shape `[h × a × b]`.
///
/// # Errors
/// Dimension mismatch between inputs and parameters.
pub fn affinity<E: Element>(
    q_in: &Tensor<E>,
    k_in: &Tensor<E>,
    params: &AttentionParams<E>,
) -> Result<Tensor<E>> {
    let qp = q_in.matmul(&params.w_q)?.add_bias(&params.b_q)?;
    let kp = k_in.matmul(&params.w_k)?.add_bias(&params.b_k)?;
    let (a, b) = (qp.shape()[0], kp.shape()[0]);
    let heads = affinity_heads(&qp, &kp, params.heads)?;
    let refs: Vec<&Tensor<E>> = heads.iter().collect();
    concat(0, &refs)?.reshape(&[params.heads, a, b])
}

/// Head-sliced affinities from already-projected queries/keys.
fn affinity_heads<E: Element>(
    qp: &Tensor<E>,
    kp: &Tensor<E>,
    heads: usize,
) -> Result<Vec<Tensor<E>>> {
    let d = qp.shape()[1];
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::InvalidArgument {
            op: "affinity",
            detail: format!("head count {heads} must divide width {d}"),
        });
    }
    let dh = d / heads;
    let scale = E::from_f64(1.0 / (dh as f64).sqrt());
    (0..heads)
        .map(|l| {
            let qh = qp.narrow(1, l * dh, dh)?;
            let kh = kp.narrow(1, l * dh, dh)?;
            Ok(qh.matmul(&kh.transpose()?)?.scale(scale))
        })
        .collect()
}

/// Channel-block width for batched affinity accumulation. The kernels
/// materialise a dense `(m+1) × n × channels` working tensor, so running
/// all queries as one channel batch costs cubic memory on large trees;
/// blocking bounds the working set while producing identical values.
const AFFINITY_CHANNEL_BLOCK: usize = 32;

/// Runs the accumulation pipeline over affinity rows: for each query
/// (row), its leaf-key affinities act as the leaf values and its node-key
/// affinities as the node values, giving tree-encoded node-key affinities
/// of the same shape as `node_aff`. Queries batch as channels, which is
/// exact because every accumulation stage is channel-wise independent.
/// No hierarchical embeddings take part (the per-query channel width is 1).
///
/// # Errors
/// Shape mismatch between the two affinity blocks or with `branch`.
pub fn accumulate_affinity_rows<E: Element>(
    leaf_aff: &Tensor<E>,
    node_aff: &Tensor<E>,
    branch: &BranchSets,
    w: &Tensor<E>,
) -> Result<Tensor<E>> {
    let lv = leaf_aff.transpose()?;
    let nv = node_aff.transpose()?;
    let q = lv.shape()[1];
    if q <= AFFINITY_CHANNEL_BLOCK {
        return accum::accumulate(&lv, &nv, branch, None, w)?.transpose();
    }
    let mut parts = Vec::with_capacity(q.div_ceil(AFFINITY_CHANNEL_BLOCK));
    let mut start = 0;
    while start < q {
        let len = AFFINITY_CHANNEL_BLOCK.min(q - start);
        let lb = lv.narrow(1, start, len)?;
        let nb = nv.narrow(1, start, len)?;
        parts.push(accum::accumulate(&lb, &nb, branch, None, w)?);
        start += len;
    }
    let refs: Vec<&Tensor<E>> = parts.iter().collect();
    concat(1, &refs)?.transpose()
}

/// The serial tail of a layer: `LN(FFN(LN(O+Q)) + LN(O+Q))`, where `O` is
/// a sublayer output, `Q` its residual input, and FFN two affine maps
/// around a ReLU. Residual dropout (when a context is given) hits `O` and
/// the FFN branch.
///
/// # Errors
/// Dimension mismatch.
pub fn transformer_layer_phi<E: Element>(
    o: &Tensor<E>,
    q_residual: &Tensor<E>,
    phi: &PhiParams<E>,
    mut drop: Option<&mut DropoutCtx>,
) -> Result<Tensor<E>> {
    let mut o = o.clone();
    if let Some(ctx) = drop.as_deref_mut() {
        o = o.dropout(ctx.resid_rate, ctx.rng)?;
    }
    let x = o
        .add(q_residual)?
        .layer_norm(&phi.ln1_gamma, &phi.ln1_beta, LN_EPS)?;
    let mut f = x
        .matmul(&phi.w1)?
        .add_bias(&phi.b1)?
        .relu()
        .matmul(&phi.w2)?
        .add_bias(&phi.b2)?;
    if let Some(ctx) = drop.as_deref_mut() {
        f = f.dropout(ctx.resid_rate, ctx.rng)?;
    }
    f.add(&x)?.layer_norm(&phi.ln2_gamma, &phi.ln2_beta, LN_EPS)
}

/// Baseline multi-head scaled-dot attention, `softmax(QK^T/sqrt(d/h)) V`
/// per head with heads re-concatenated; the output projection is left to
/// the caller. `causal` restricts position `i` to keys `j <= i`.
///
/// # Errors
/// Dimension mismatch.
pub fn standard_attention<E: Element>(
    q_in: &Tensor<E>,
    k_in: &Tensor<E>,
    v_in: &Tensor<E>,
    params: &AttentionParams<E>,
    causal: bool,
    mut drop: Option<&mut DropoutCtx>,
) -> Result<Tensor<E>> {
    let qp = q_in.matmul(&params.w_q)?.add_bias(&params.b_q)?;
    let kp = k_in.matmul(&params.w_k)?.add_bias(&params.b_k)?;
    let vp = v_in.matmul(&params.w_v)?.add_bias(&params.b_v)?;
    let (t, s) = (qp.shape()[0], kp.shape()[0]);
    let mask: Option<Vec<bool>> = causal.then(|| {
        let mut allow = vec![false; t * s];
        for i in 0..t {
            for j in 0..s.min(i + 1) {
                allow[i * s + j] = true;
            }
        }
        allow
    });

    let dh = params.head_width();
    let mut outs = Vec::with_capacity(params.heads);
    for (l, aff) in affinity_heads(&qp, &kp, params.heads)?.into_iter().enumerate() {
        let mut weights = aff.masked_softmax_rows(mask.as_deref())?;
        if let Some(ctx) = drop.as_deref_mut() {
            weights = weights.dropout(ctx.attn_rate, ctx.rng)?;
        }
        outs.push(weights.matmul(&vp.narrow(1, l * dh, dh)?)?);
    }
    let refs: Vec<&Tensor<E>> = outs.iter().collect();
    concat(1, &refs)
}

// ---------------------------------------------------------------------------
// tree-based encoder self-attention
// ---------------------------------------------------------------------------

/// Ablation switches for [`encoder_tree_self_attention`].
#[derive(Clone, Copy)]
pub struct EncoderOpts {
    /// Apply the subtree mask (`false` reproduces the mask-off ablation).
    pub use_subtree_mask: bool,
    /// Skip computing the leaf-query-to-node-key affinities that the mask
    /// eliminates anyway. Output-equivalent to the faithful path; only
    /// honored while the mask is on.
    pub skip_masked_affinity: bool,
}

impl Default for EncoderOpts {
    fn default() -> Self {
        EncoderOpts {
            use_subtree_mask: true,
            skip_masked_affinity: false,
        }
    }
}

/// One tree-based encoder self-attention layer.
///
/// Computes the four affinity blocks between leaf/node queries and keys,
/// accumulates the node-key affinities per query row, accumulates node
/// values (optionally with hierarchical embeddings `hier = (E_v, E_h)`)
/// into full-width keys `[accumulated nodes; projected leaves]`, applies
/// the subtree mask, and finishes both streams through the shared `phi`:
/// the returned pair is `(leaves_out, nodes_out)`.
///
/// # Errors
/// Dimension mismatch between inputs, parameters, and the tree context.
#[allow(clippy::too_many_arguments)]
pub fn encoder_tree_self_attention<E: Element>(
    leaves: &Tensor<E>,
    nodes: &Tensor<E>,
    ctx: &TreeContext,
    params: &AttentionParams<E>,
    phi: &PhiParams<E>,
    hier: Option<(&Tensor<E>, &Tensor<E>)>,
    opts: EncoderOpts,
    mut drop: Option<&mut DropoutCtx>,
    mut rec: Option<&mut AttnRecorder<E>>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let (n, m) = (ctx.branch.n_leaves(), ctx.branch.n_nodes());
    check_rows("encoder_tree_self_attention", leaves, n, "leaves")?;
    check_rows("encoder_tree_self_attention", nodes, m, "nodes")?;
    let u = params.require_u()?;
    let d = params.width();
    let w = leaves.matmul(&u.reshape(&[d, 1])?)?.reshape(&[n])?;

    let lq = leaves.matmul(&params.w_q)?.add_bias(&params.b_q)?;
    let nq = nodes.matmul(&params.w_q)?.add_bias(&params.b_q)?;
    let lk = leaves.matmul(&params.w_k)?.add_bias(&params.b_k)?;
    let nk = nodes.matmul(&params.w_k)?.add_bias(&params.b_k)?;
    let lv = leaves.matmul(&params.w_v)?.add_bias(&params.b_v)?;
    let nv = nodes.matmul(&params.w_v)?.add_bias(&params.b_v)?;

    // Node values tree-encoded once at full width; leaf values projected
    // only. Heads slice these afterwards.
    let n_bar = accum::accumulate(&lv, &nv, &ctx.branch, hier, &w)?;
    let l_bar = lv;

    let skip_ln = opts.skip_masked_affinity && opts.use_subtree_mask;
    let node_mask = opts.use_subtree_mask.then(|| ctx.mask.node_rows());
    let leaf_mask = opts.use_subtree_mask.then(|| ctx.mask.leaf_rows());

    let dh = params.head_width();
    let mut att_n_heads = Vec::with_capacity(params.heads);
    let mut att_l_heads = Vec::with_capacity(params.heads);
    for l in 0..params.heads {
        let nq_h = nq.narrow(1, l * dh, dh)?;
        let lq_h = lq.narrow(1, l * dh, dh)?;
        let nk_h = nk.narrow(1, l * dh, dh)?.transpose()?;
        let lk_h = lk.narrow(1, l * dh, dh)?.transpose()?;
        let scale = E::from_f64(1.0 / (dh as f64).sqrt());

        let a_nn = nq_h.matmul(&nk_h)?.scale(scale);
        let a_nl = nq_h.matmul(&lk_h)?.scale(scale);
        let a_ll = lq_h.matmul(&lk_h)?.scale(scale);

        // Node-key affinities are themselves tree-encoded, one
        // accumulation channel per query row.
        let acc_nn = accumulate_affinity_rows(&a_nl, &a_nn, &ctx.branch, &w)?;
        let acc_ln = if skip_ln {
            // The subtree mask zeroes every leaf-to-node weight, so any
            // finite placeholder yields identical output.
            Tensor::zeros(&[n, m])
        } else {
            let a_ln = lq_h.matmul(&nk_h)?.scale(scale);
            accumulate_affinity_rows(&a_ll, &a_ln, &ctx.branch, &w)?
        };

        let logits_n = concat(1, &[&acc_nn, &a_nl])?;
        let logits_l = concat(1, &[&acc_ln, &a_ll])?;
        let mut weights_n = logits_n.masked_softmax_rows(node_mask)?;
        let mut weights_l = logits_l.masked_softmax_rows(leaf_mask)?;
        if let Some(r) = rec.as_deref_mut() {
            r.node_rows.push(weights_n.detach());
            r.leaf_rows.push(weights_l.detach());
        }
        if let Some(ctx) = drop.as_deref_mut() {
            weights_n = weights_n.dropout(ctx.attn_rate, ctx.rng)?;
            weights_l = weights_l.dropout(ctx.attn_rate, ctx.rng)?;
        }

        let vals_h = concat(
            0,
            &[&n_bar.narrow(1, l * dh, dh)?, &l_bar.narrow(1, l * dh, dh)?],
        )?;
        att_n_heads.push(weights_n.matmul(&vals_h)?);
        att_l_heads.push(weights_l.matmul(&vals_h)?);
    }

    let att_n_refs: Vec<&Tensor<E>> = att_n_heads.iter().collect();
    let att_l_refs: Vec<&Tensor<E>> = att_l_heads.iter().collect();
    let o_n = concat(1, &att_n_refs)?
        .matmul(&params.w_o)?
        .add_bias(&params.b_o)?;
    let o_l = concat(1, &att_l_refs)?
        .matmul(&params.w_o)?
        .add_bias(&params.b_o)?;

    // The layer function is shared between the two streams.
    let nodes_out = transformer_layer_phi(&o_n, nodes, phi, drop.as_deref_mut())?;
    let leaves_out = transformer_layer_phi(&o_l, leaves, phi, drop)?;
    Ok((leaves_out, nodes_out))
}

// ---------------------------------------------------------------------------
// tree-based decoder cross-attention
// ---------------------------------------------------------------------------

/// Tree-based cross-attention: target-side queries attend the source
/// tree's `[accumulated nodes; projected leaves]` keys and values with no
/// mask (the queries are from another domain and are not tree elements).
/// Returns the head-concatenated attention output `[t × d]`; the output
/// projection and `phi` are left to the caller.
///
/// # Errors
/// Dimension mismatch between inputs, parameters, and the tree context.
pub fn decoder_cross_attention<E: Element>(
    queries: &Tensor<E>,
    leaves: &Tensor<E>,
    nodes: &Tensor<E>,
    ctx: &TreeContext,
    params: &AttentionParams<E>,
    hier: Option<(&Tensor<E>, &Tensor<E>)>,
    mut drop: Option<&mut DropoutCtx>,
    mut rec: Option<&mut AttnRecorder<E>>,
) -> Result<Tensor<E>> {
    let (n, m) = (ctx.branch.n_leaves(), ctx.branch.n_nodes());
    check_rows("decoder_cross_attention", leaves, n, "leaves")?;
    check_rows("decoder_cross_attention", nodes, m, "nodes")?;
    let u = params.require_u()?;
    let d = params.width();
    let w = leaves.matmul(&u.reshape(&[d, 1])?)?.reshape(&[n])?;

    let qp = queries.matmul(&params.w_q)?.add_bias(&params.b_q)?;
    let nk = nodes.matmul(&params.w_k)?.add_bias(&params.b_k)?;
    let lk = leaves.matmul(&params.w_k)?.add_bias(&params.b_k)?;
    let lv = leaves.matmul(&params.w_v)?.add_bias(&params.b_v)?;
    let nv = nodes.matmul(&params.w_v)?.add_bias(&params.b_v)?;
    let n_bar = accum::accumulate(&lv, &nv, &ctx.branch, hier, &w)?;
    let l_bar = lv;

    let dh = params.head_width();
    let scale = E::from_f64(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(params.heads);
    for l in 0..params.heads {
        let qh = qp.narrow(1, l * dh, dh)?;
        let a_qn = qh.matmul(&nk.narrow(1, l * dh, dh)?.transpose()?)?.scale(scale);
        let a_ql = qh.matmul(&lk.narrow(1, l * dh, dh)?.transpose()?)?.scale(scale);
        let mut weights = concat(1, &[&a_qn, &a_ql])?.masked_softmax_rows(None)?;
        if let Some(r) = rec.as_deref_mut() {
            r.cross_rows.push(weights.detach());
        }
        if let Some(ctx) = drop.as_deref_mut() {
            weights = weights.dropout(ctx.attn_rate, ctx.rng)?;
        }
        let vals_h = concat(
            0,
            &[&n_bar.narrow(1, l * dh, dh)?, &l_bar.narrow(1, l * dh, dh)?],
        )?;
        outs.push(weights.matmul(&vals_h)?);
    }
    let refs: Vec<&Tensor<E>> = outs.iter().collect();
    concat(1, &refs)
}

fn check_rows<E: Element>(
    op: &'static str,
    t: &Tensor<E>,
    rows: usize,
    what: &str,
) -> Result<()> {
    if t.rank() != 2 || t.shape()[0] != rows {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("{what} expected [{rows}, d], got {:?}", t.shape()),
        });
    }
    Ok(())
}
