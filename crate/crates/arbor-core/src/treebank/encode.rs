//! Flat tree encoding: leaves, post-order node labels, membership sets.

use std::collections::BTreeSet;
use std::fmt;

use super::{Elem, ElemSet, ParseTree, Result, TreeError};

/// Flattened constituency tree.
///
/// `rules[i]` is the membership set of node `i`: every leaf and node in its
/// subtree, including node `i` itself. Node indices follow post-order, so a
/// child always has a smaller index than its parent and the root is last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeEncoding {
    /// Surface tokens, left to right.
    pub leaves: Vec<String>,
    /// Node labels in post-order.
    pub labels: Vec<String>,
    /// Per-node membership sets, aligned with `labels`.
    pub rules: Vec<ElemSet>,
}

impl TreeEncoding {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Leaf indices contained in node `i`'s membership set, ascending.
    pub fn leaf_members(&self, i: usize) -> Vec<usize> {
        self.rules[i]
            .iter()
            .filter_map(|e| match e {
                Elem::Leaf(j) => Some(*j),
                Elem::Node(_) => None,
            })
            .collect()
    }

    /// Node indices (other than `i` itself) in node `i`'s membership set.
    pub fn node_members(&self, i: usize) -> Vec<usize> {
        self.rules[i]
            .iter()
            .filter_map(|e| match e {
                Elem::Node(k) if *k != i => Some(*k),
                _ => None,
            })
            .collect()
    }

    /// Inclusive leaf span `(lo, hi)` of node `i`.
    ///
    /// # Errors
    /// Invalid-tree error when the node covers no leaves.
    pub fn node_span(&self, i: usize) -> Result<(usize, usize)> {
        let leaves = self.leaf_members(i);
        match (leaves.first(), leaves.last()) {
            (Some(lo), Some(hi)) => Ok((*lo, *hi)),
            _ => Err(TreeError::Invalid(format!("node {i} covers no leaves"))),
        }
    }

    /// Index of the root node.
    ///
    /// # Errors
    /// Invalid-tree error unless exactly one node is maximal (member of no
    /// other node's set) and it covers every element.
    pub fn root(&self) -> Result<usize> {
        let mut maximal = Vec::new();
        for i in 0..self.n_nodes() {
            let covered = (0..self.n_nodes())
                .any(|k| k != i && self.rules[k].contains(&Elem::Node(i)));
            if !covered {
                maximal.push(i);
            }
        }
        match maximal.as_slice() {
            [r] => {
                let want = self.n_leaves() + self.n_nodes();
                if self.rules[*r].len() != want {
                    return Err(TreeError::Invalid(format!(
                        "root candidate {r} covers {} of {want} elements",
                        self.rules[*r].len()
                    )));
                }
                Ok(*r)
            }
            [] => Err(TreeError::Invalid("no root node".to_string())),
            many => Err(TreeError::Invalid(format!(
                "multiple root candidates: {many:?}"
            ))),
        }
    }
}

/// Flattens a parse tree into its encoding.
///
/// # Errors
/// Invalid-tree error when `t` is a bare leaf (an encoding needs at least
/// one node).
pub fn encode_tree(t: &ParseTree) -> Result<TreeEncoding> {
    if t.is_leaf() {
        return Err(TreeError::Invalid(
            "cannot encode a bare leaf: a tree needs at least one node".to_string(),
        ));
    }
    let mut enc = TreeEncoding {
        leaves: Vec::new(),
        labels: Vec::new(),
        rules: Vec::new(),
    };
    walk(t, &mut enc);
    Ok(enc)
}

/// Post-order walk; returns the element created for this subtree.
fn walk(t: &ParseTree, enc: &mut TreeEncoding) -> Elem {
    match t {
        ParseTree::Leaf { token } => {
            enc.leaves.push(token.clone());
            Elem::Leaf(enc.leaves.len() - 1)
        }
        ParseTree::Node { label, children } => {
            let mut members = ElemSet::new();
            for c in children {
                let e = walk(c, enc);
                match e {
                    Elem::Leaf(_) => {
                        members.insert(e);
                    }
                    Elem::Node(k) => {
                        members.extend(enc.rules[k].iter().copied());
                    }
                }
            }
            enc.labels.push(label.clone());
            let idx = enc.labels.len() - 1;
            members.insert(Elem::Node(idx));
            enc.rules.push(members);
            Elem::Node(idx)
        }
    }
}

/// Resolves the parent of an element from the membership sets alone: among
/// the nodes containing `x`, the parent is the one whose set contains no
/// other container of `x`.
///
/// Returns `Ok(None)` for the root.
///
/// # Errors
/// Invalid-tree error when a leaf has no container, or when the candidate
/// count differs from one.
pub fn parent_of(enc: &TreeEncoding, x: Elem) -> Result<Option<usize>> {
    let containers: BTreeSet<usize> = (0..enc.n_nodes())
        .filter(|i| Elem::Node(*i) != x && enc.rules[*i].contains(&x))
        .collect();
    if containers.is_empty() {
        return match x {
            Elem::Node(_) => Ok(None),
            Elem::Leaf(j) => Err(TreeError::Invalid(format!(
                "leaf {j} belongs to no node"
            ))),
        };
    }
    let candidates: Vec<usize> = containers
        .iter()
        .copied()
        .filter(|y| {
            containers
                .iter()
                .all(|z| z == y || !enc.rules[*y].contains(&Elem::Node(*z)))
        })
        .collect();
    match candidates.as_slice() {
        [p] => Ok(Some(*p)),
        [] => Err(TreeError::Invalid(format!(
            "no parent candidate for {x:?} (containers {containers:?} form a cycle)"
        ))),
        many => Err(TreeError::Invalid(format!(
            "ambiguous parent for {x:?}: candidates {many:?}"
        ))),
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Offending node index, when the violation is anchored to a node.
    pub node: Option<usize>,
    /// Offending leaf index, when anchored to a leaf.
    pub leaf: Option<usize>,
    pub message: String,
}

/// Validation outcome: empty iff every invariant holds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub items: Vec<Diagnostic>,
}

impl Diagnostics {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    fn push(&mut self, node: Option<usize>, leaf: Option<usize>, message: String) {
        self.items.push(Diagnostic { node, leaf, message });
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.items.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {}", d.message)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of an encoding and reports all
/// violations (it does not stop at the first).
///
/// Checked: index bounds, node self-membership, contiguous leaf spans, a
/// single all-covering root, subtree nesting without cycles, and a unique
/// parent for every non-root element.
pub fn validate(enc: &TreeEncoding) -> Diagnostics {
    let mut diags = Diagnostics::default();
    let n = enc.n_leaves();
    let m = enc.n_nodes();

    if n == 0 {
        diags.push(None, None, "encoding has no leaves".to_string());
    }
    if m == 0 {
        diags.push(None, None, "encoding has no nodes".to_string());
        return diags;
    }

    // Bounds and self-membership.
    let mut bounds_ok = true;
    for i in 0..m {
        for e in &enc.rules[i] {
            let ok = match e {
                Elem::Leaf(j) => *j < n,
                Elem::Node(k) => *k < m,
            };
            if !ok {
                bounds_ok = false;
                diags.push(Some(i), None, format!("node {i} references {e:?} out of range"));
            }
        }
        if !enc.rules[i].contains(&Elem::Node(i)) {
            diags.push(
                Some(i),
                None,
                format!("node {i} is missing from its own membership set"),
            );
        }
    }
    if !bounds_ok {
        return diags; // later checks would index out of range
    }

    // Contiguous spans.
    for i in 0..m {
        let leaves = enc.leaf_members(i);
        match (leaves.first(), leaves.last()) {
            (Some(lo), Some(hi)) => {
                if leaves.len() != hi - lo + 1 {
                    diags.push(
                        Some(i),
                        None,
                        format!(
                            "node {i} covers a non-contiguous leaf span: {leaves:?}"
                        ),
                    );
                }
            }
            _ => diags.push(Some(i), None, format!("node {i} covers no leaves")),
        }
    }

    // Single root covering everything.
    match enc.root() {
        Ok(_) => {}
        Err(TreeError::Invalid(msg)) => diags.push(None, None, msg),
        Err(other) => diags.push(None, None, other.to_string()),
    }

    // Nesting and acyclicity on node membership.
    for i in 0..m {
        for k in enc.node_members(i) {
            if enc.rules[k].contains(&Elem::Node(i)) {
                if i < k {
                    diags.push(
                        Some(i),
                        None,
                        format!("nodes {i} and {k} contain each other (cycle)"),
                    );
                }
            } else if !enc.rules[k].is_subset(&enc.rules[i]) {
                diags.push(
                    Some(i),
                    None,
                    format!("node {k} is a member of node {i} but not a subset of it"),
                );
            }
        }
    }

    // Unique parents for every non-root element.
    for j in 0..n {
        if let Err(e) = parent_of(enc, Elem::Leaf(j)) {
            diags.push(None, Some(j), e.to_string());
        }
    }
    for i in 0..m {
        match parent_of(enc, Elem::Node(i)) {
            Ok(_) => {}
            Err(e) => diags.push(Some(i), None, e.to_string()),
        }
    }

    diags
}

/// Rebuilds the parse tree from an encoding; exact inverse of
/// [`encode_tree`] on valid input.
///
/// # Errors
/// [`TreeError::Violations`] carrying the full diagnostics when the encoding
/// is invalid.
pub fn decode_tree(enc: &TreeEncoding) -> Result<ParseTree> {
    let diags = validate(enc);
    if !diags.is_empty() {
        return Err(TreeError::Violations(diags));
    }
    let root = enc.root()?;

    // Children of each node, gathered via parent resolution.
    let mut children: Vec<Vec<Elem>> = vec![Vec::new(); enc.n_nodes()];
    for j in 0..enc.n_leaves() {
        let p = parent_of(enc, Elem::Leaf(j))?.expect("validated leaf has a parent");
        children[p].push(Elem::Leaf(j));
    }
    for i in 0..enc.n_nodes() {
        if let Some(p) = parent_of(enc, Elem::Node(i))? {
            children[p].push(Elem::Node(i));
        }
    }
    // Sibling order is recoverable from the leaf order: sort by leftmost
    // covered leaf.
    let start = |e: &Elem| -> usize {
        match e {
            Elem::Leaf(j) => *j,
            Elem::Node(i) => enc.leaf_members(*i)[0],
        }
    };
    for list in &mut children {
        list.sort_by_key(start);
    }

    fn build(enc: &TreeEncoding, children: &[Vec<Elem>], e: Elem) -> ParseTree {
        match e {
            Elem::Leaf(j) => ParseTree::leaf(enc.leaves[j].clone()),
            Elem::Node(i) => ParseTree::node(
                enc.labels[i].clone(),
                children[i]
                    .iter()
                    .map(|c| build(enc, children, *c))
                    .collect(),
            ),
        }
    }
    Ok(build(enc, &children, Elem::Node(root)))
}
