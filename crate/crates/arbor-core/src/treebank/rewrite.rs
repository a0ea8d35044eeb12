//! Structural rewrites applied between parsing and encoding.

use super::{ParseTree, Result, TreeError};

/// Marker suffix for nodes introduced by subword splitting; normalisation
/// never strips them.
pub const BPE_LABEL_SUFFIX: &str = "-BPE";

/// Pipeline flags for [`normalize_tree`].
///
/// Natural-language presets switch both flags on; the synthetic tasks keep
/// them off because their operator nodes are meaningful unary/preterminal
/// structure, not annotation noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormalizeOptions {
    /// Replace a node that has exactly one child which is an internal node
    /// by that node's children (keeping the outer label), repeatedly.
    pub collapse_unary: bool,
    /// Replace a child that is a single-leaf node (a part-of-speech style
    /// preterminal) by its leaf, unless its label carries the subword
    /// marker. The root itself is never replaced by a bare leaf.
    pub drop_preterminals: bool,
}

impl NormalizeOptions {
    pub fn all() -> Self {
        NormalizeOptions {
            collapse_unary: true,
            drop_preterminals: true,
        }
    }

    pub fn none() -> Self {
        NormalizeOptions {
            collapse_unary: false,
            drop_preterminals: false,
        }
    }
}

fn is_preterminal(t: &ParseTree) -> bool {
    match t {
        ParseTree::Node { label, children } => {
            children.len() == 1
                && children[0].is_leaf()
                && !label.ends_with(BPE_LABEL_SUFFIX)
        }
        ParseTree::Leaf { .. } => false,
    }
}

/// Applies the normalisation rewrites bottom-up. With both flags off this
/// is a deep copy.
pub fn normalize_tree(t: &ParseTree, opts: &NormalizeOptions) -> ParseTree {
    match t {
        ParseTree::Leaf { .. } => t.clone(),
        ParseTree::Node { label, children } => {
            let mut kids: Vec<ParseTree> =
                children.iter().map(|c| normalize_tree(c, opts)).collect();
            if opts.collapse_unary {
                // Adopt grandchildren through single-internal-child links;
                // the outermost label wins.
                while kids.len() == 1 && !kids[0].is_leaf() && !is_preterminal(&kids[0]) {
                    let ParseTree::Node { children: gc, .. } = kids.remove(0) else {
                        unreachable!("checked non-leaf")
                    };
                    kids = gc;
                }
            }
            if opts.drop_preterminals {
                kids = kids
                    .into_iter()
                    .map(|c| {
                        if is_preterminal(&c) {
                            let ParseTree::Node { mut children, .. } = c else {
                                unreachable!("checked preterminal")
                            };
                            children.remove(0)
                        } else {
                            c
                        }
                    })
                    .collect();
            }
            ParseTree::node(label.clone(), kids)
        }
    }
}

/// Splits every leaf token with `splitter` and grafts multi-piece results
/// back into the tree: each piece becomes a node labelled
/// `"{parent label}-BPE"` over a single subword leaf, spliced in place of
/// the original leaf. Under a part-of-speech preterminal this turns
/// `(V studying)` into `(V (V-BPE study@@) (V-BPE ing))`; single-piece
/// tokens are kept verbatim.
///
/// # Errors
/// Data error when the splitter returns no pieces for some token.
pub fn apply_bpe_split(
    t: &ParseTree,
    splitter: &dyn Fn(&str) -> Vec<String>,
) -> Result<ParseTree> {
    match t {
        ParseTree::Leaf { .. } => Err(TreeError::Invalid(
            "cannot split a bare leaf outside a tree".to_string(),
        )),
        ParseTree::Node { label, children } => {
            let mut kids = Vec::with_capacity(children.len());
            for c in children {
                match c {
                    ParseTree::Node { .. } => kids.push(apply_bpe_split(c, splitter)?),
                    ParseTree::Leaf { token } => {
                        let pieces = splitter(token);
                        match pieces.len() {
                            0 => {
                                return Err(TreeError::Data(format!(
                                    "subword splitter returned no pieces for token {token:?}"
                                )))
                            }
                            1 => kids.push(ParseTree::leaf(pieces.into_iter().next().unwrap())),
                            _ => {
                                let sub = format!("{label}{BPE_LABEL_SUFFIX}");
                                for p in pieces {
                                    kids.push(ParseTree::node(
                                        sub.clone(),
                                        vec![ParseTree::leaf(p)],
                                    ));
                                }
                            }
                        }
                    }
                }
            }
            Ok(ParseTree::node(label.clone(), kids))
        }
    }
}

/// Root label used when joining a forest into one document tree.
pub const FOREST_ROOT_LABEL: &str = "DOC";

/// Joins sentence trees under a fresh document root so a multi-sentence
/// input becomes a single tree.
///
/// # Errors
/// Data error on an empty forest.
pub fn join_forest(trees: &[ParseTree]) -> Result<ParseTree> {
    if trees.is_empty() {
        return Err(TreeError::Data("cannot join an empty forest".to_string()));
    }
    Ok(ParseTree::node(FOREST_ROOT_LABEL, trees.to_vec()))
}
