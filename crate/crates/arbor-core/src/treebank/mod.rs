//! Bracketed parse trees and their flat set-of-members encoding.
//!
//! A tree enters the system as text like `(S (NP (PRP He)) (VP (VBZ is)))`,
//! becomes a [`ParseTree`], and is flattened by [`encode_tree`] into a
//! [`TreeEncoding`]: surface leaves in order, node labels in post-order, and
//! one membership set per node listing every leaf and node in its subtree
//! (including itself). All structure queries downstream — parents, spans,
//! branches — are defined purely on those sets, and [`validate`] checks the
//! invariants that make them coherent (single root, unique parents,
//! contiguous spans, self-membership).

mod bpe;
mod corpus;
mod encode;
mod gen;
mod parse;
mod rewrite;

pub use bpe::{join_pieces, BpeCodes};
pub use corpus::{read_labeled, read_trees, write_labeled, write_trees, LabeledTrees};
pub use encode::{decode_tree, encode_tree, parent_of, validate, Diagnostic, Diagnostics, TreeEncoding};
pub use gen::{balanced_binary_tree, random_tree, GenConfig};
pub use parse::parse_bracketed;
pub use rewrite::{apply_bpe_split, join_forest, normalize_tree, NormalizeOptions, FOREST_ROOT_LABEL};

use std::collections::BTreeSet;

use thiserror::Error;

/// Errors from parsing, validation, and corpus handling.
#[derive(Debug, Error)]
pub enum TreeError {
    /// Bracketed-text syntax error with a byte offset into the input.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// A tree or encoding violates structural invariants.
    #[error("invalid tree: {0}")]
    Invalid(String),

    /// An encoding failed validation; the diagnostics list every violation.
    #[error("invalid tree encoding:\n{0}")]
    Violations(Diagnostics),

    /// Malformed corpus or auxiliary data (labels, splits, code files).
    #[error("data error: {0}")]
    Data(String),

    /// File-system failure, annotated with the path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TreeError>;

/// Member of a tree encoding: a surface leaf or an internal node, each
/// addressed by its index. Ordering (leaves before nodes, then by index) is
/// only used to keep set iteration deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Elem {
    Leaf(usize),
    Node(usize),
}

/// Membership set of one node's subtree.
pub type ElemSet = BTreeSet<Elem>;

/// Constituency tree: internal nodes carry labels, leaves carry tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseTree {
    Leaf { token: String },
    Node { label: String, children: Vec<ParseTree> },
}

impl ParseTree {
    pub fn leaf(token: impl Into<String>) -> Self {
        ParseTree::Leaf { token: token.into() }
    }

    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        ParseTree::Node {
            label: label.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, ParseTree::Leaf { .. })
    }

    /// Surface tokens, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ParseTree::Leaf { token } => out.push(token),
            ParseTree::Node { children, .. } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    pub fn num_leaves(&self) -> usize {
        match self {
            ParseTree::Leaf { .. } => 1,
            ParseTree::Node { children, .. } => children.iter().map(ParseTree::num_leaves).sum(),
        }
    }

    /// Number of internal nodes.
    pub fn num_nodes(&self) -> usize {
        match self {
            ParseTree::Leaf { .. } => 0,
            ParseTree::Node { children, .. } => {
                1 + children.iter().map(ParseTree::num_nodes).sum::<usize>()
            }
        }
    }

    /// Longest path from the root to a leaf, counted in edges.
    pub fn depth(&self) -> usize {
        match self {
            ParseTree::Leaf { .. } => 0,
            ParseTree::Node { children, .. } => {
                1 + children.iter().map(ParseTree::depth).max().unwrap_or(0)
            }
        }
    }

    /// Canonical single-line bracketed text; [`parse_bracketed`] inverts it.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        match self {
            ParseTree::Leaf { token } => out.push_str(&parse::escape_symbol(token)),
            ParseTree::Node { label, children } => {
                out.push('(');
                out.push_str(&parse::escape_symbol(label));
                for c in children {
                    out.push(' ');
                    c.render_into(out);
                }
                out.push(')');
            }
        }
    }
}
