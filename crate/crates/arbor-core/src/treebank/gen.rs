//! Seeded random tree generation for property tests and benchmarks.

use rand::Rng;

use super::{ParseTree, Result, TreeError};

/// Bounds for [`random_tree`].
#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Leaf count is drawn uniformly from `1..=max_leaves`.
    pub max_leaves: usize,
    /// Maximum children per node (≥ 2 branching; unary nodes are inserted
    /// separately).
    pub max_arity: usize,
    /// Probability of wrapping a subtree in an extra unary node when the
    /// depth budget allows.
    pub unary_prob: f64,
    /// Hard cap on tree depth.
    pub max_depth: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_leaves: 12,
            max_arity: 5,
            unary_prob: 0.15,
            max_depth: 24,
        }
    }
}

const LABELS: &[&str] = &["S", "NP", "VP", "PP", "ADJP", "SBAR", "X", "FRAG"];

/// Generates a random constituency tree within the configured bounds. The
/// result always has at least one node (a single leaf gets a preterminal).
pub fn random_tree<R: Rng>(rng: &mut R, cfg: &GenConfig) -> ParseTree {
    let n = rng.gen_range(1..=cfg.max_leaves.max(1));
    let mut next_token = 0usize;
    let t = gen_span(rng, cfg, n, cfg.max_depth, &mut next_token);
    // Guarantee an internal root.
    match t {
        ParseTree::Leaf { .. } => ParseTree::node(LABELS[0], vec![t]),
        node => node,
    }
}

fn gen_span<R: Rng>(
    rng: &mut R,
    cfg: &GenConfig,
    n: usize,
    depth_left: usize,
    next_token: &mut usize,
) -> ParseTree {
    let label = LABELS[rng.gen_range(0..LABELS.len())];
    let core = if n == 1 {
        let tok = format!("w{}", *next_token);
        *next_token += 1;
        let leaf = ParseTree::leaf(tok);
        if depth_left >= 1 && rng.gen_bool(0.5) {
            ParseTree::node(label, vec![leaf])
        } else {
            leaf
        }
    } else {
        let max_a = cfg.max_arity.min(n).max(2);
        let arity = rng.gen_range(2..=max_a);
        // Random composition of n into `arity` positive parts.
        let mut cuts: Vec<usize> = Vec::with_capacity(arity - 1);
        while cuts.len() < arity - 1 {
            let c = rng.gen_range(1..n);
            if !cuts.contains(&c) {
                cuts.push(c);
            }
        }
        cuts.sort_unstable();
        let mut parts = Vec::with_capacity(arity);
        let mut prev = 0;
        for c in cuts {
            parts.push(c - prev);
            prev = c;
        }
        parts.push(n - prev);
        let children = parts
            .into_iter()
            .map(|k| gen_span(rng, cfg, k, depth_left.saturating_sub(1), next_token))
            .collect();
        ParseTree::node(label, children)
    };
    if !core.is_leaf() && depth_left >= 2 && rng.gen_bool(cfg.unary_prob) {
        let outer = LABELS[rng.gen_range(0..LABELS.len())];
        ParseTree::node(outer, vec![core])
    } else {
        core
    }
}

/// Perfectly balanced binary tree over `n` leaves (`n` a power of two
/// ≥ 2), used by the scaling benchmarks: `n − 1` internal nodes labelled
/// `B`, tokens `w0..w{n-1}`, no preterminals.
///
/// # Errors
/// Data error unless `n` is a power of two ≥ 2.
pub fn balanced_binary_tree(n: usize) -> Result<ParseTree> {
    if n < 2 || !n.is_power_of_two() {
        return Err(TreeError::Data(format!(
            "balanced tree needs a power-of-two leaf count ≥ 2, got {n}"
        )));
    }
    fn build(lo: usize, len: usize) -> ParseTree {
        if len == 1 {
            ParseTree::leaf(format!("w{lo}"))
        } else {
            ParseTree::node("B", vec![build(lo, len / 2), build(lo + len / 2, len / 2)])
        }
    }
    Ok(build(0, n))
}

#[cfg(test)]
mod tests {
    use super::super::{decode_tree, encode_tree, validate};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_trees_are_valid_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = GenConfig::default();
        for _ in 0..100 {
            let t = random_tree(&mut rng, &cfg);
            assert!(t.num_leaves() >= 1 && t.num_leaves() <= cfg.max_leaves);
            assert!(!t.is_leaf());
            let enc = encode_tree(&t).unwrap();
            assert!(validate(&enc).is_empty(), "{}", t.render());
            assert_eq!(decode_tree(&enc).unwrap(), t);
        }
    }

    #[test]
    fn generation_is_deterministic_for_a_seed() {
        let cfg = GenConfig::default();
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            assert_eq!(random_tree(&mut a, &cfg), random_tree(&mut b, &cfg));
        }
    }

    #[test]
    fn balanced_tree_shape() {
        let t = balanced_binary_tree(8).unwrap();
        assert_eq!(t.num_leaves(), 8);
        assert_eq!(t.num_nodes(), 7);
        assert_eq!(t.depth(), 3);
        assert!(balanced_binary_tree(6).is_err());
        assert!(balanced_binary_tree(0).is_err());
        assert!(balanced_binary_tree(1).is_err());
    }
}
