//! Token trees and their flattened tree-attention representation.

use crate::error::{Error, Result};

/// A token id in `[0, vocab_size)` of the active vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(pub u32);

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a tree node came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Draft,
    Retrieval,
    /// Present in both the draft tree and the retrieval tree.
    Fused,
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub token: Token,
    /// `None` for the root.
    pub parent: Option<usize>,
    pub depth: usize,
    /// Draft-model conditional probability of this token given its ancestor
    /// path. Absent on pure-retrieval nodes.
    pub draft_prob: Option<f64>,
    pub provenance: Provenance,
}

/// A tree of candidate tokens rooted at the last committed token y0.
///
/// Node 0 is always the root and parents always precede their children in the
/// node ordering. Child order is insertion order and is significant: the
/// verifier tests children in this order.
#[derive(Debug, Clone)]
pub struct TokenTree {
    nodes: Vec<TreeNode>,
    children: Vec<Vec<usize>>,
}

impl TokenTree {
    pub fn new(root_token: Token, provenance: Provenance) -> Self {
        Self {
            nodes: vec![TreeNode {
                token: root_token,
                parent: None,
                depth: 0,
                draft_prob: None,
                provenance,
            }],
            children: vec![Vec::new()],
        }
    }

    /// Appends a child under `parent` and returns its index.
    pub fn add_child(
        &mut self,
        parent: usize,
        token: Token,
        draft_prob: Option<f64>,
        provenance: Provenance,
    ) -> usize {
        let idx = self.nodes.len();
        let depth = self.nodes[parent].depth + 1;
        self.nodes.push(TreeNode {
            token,
            parent: Some(parent),
            depth,
            draft_prob,
            provenance,
        });
        self.children.push(Vec::new());
        self.children[parent].push(idx);
        idx
    }

    /// Rebuilds a tree from raw nodes without checking invariants; intended
    /// for tests and for `validate_tree` inputs.
    pub fn from_parts(nodes: Vec<TreeNode>) -> Self {
        let mut children = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                if p < nodes.len() && p != i {
                    children[p].push(i);
                }
            }
        }
        Self { nodes, children }
    }

    pub fn root_token(&self) -> Token {
        self.nodes[0].token
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, idx: usize) -> &TreeNode {
        &self.nodes[idx]
    }

    pub(crate) fn node_mut(&mut self, idx: usize) -> &mut TreeNode {
        &mut self.nodes[idx]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    /// Tokens on the root path ending at `idx`, root included.
    pub fn path_tokens(&self, idx: usize) -> Vec<Token> {
        let mut path = Vec::new();
        let mut cur = Some(idx);
        while let Some(i) = cur {
            path.push(self.nodes[i].token);
            cur = self.nodes[i].parent;
        }
        path.reverse();
        path
    }

    /// All root-to-leaf token paths, excluding the root token.
    pub fn leaf_paths(&self) -> Vec<Vec<Token>> {
        let mut out = Vec::new();
        for (i, ch) in self.children.iter().enumerate() {
            if ch.is_empty() && i != 0 {
                let mut p = self.path_tokens(i);
                p.remove(0);
                out.push(p);
            }
        }
        out
    }
}

/// The level-order flattening consumed by tree-attention forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTree {
    pub tokens: Vec<Token>,
    /// `positions[i] = base_position + depth(i)`.
    pub positions: Vec<usize>,
    /// `mask[i][j]` is true iff flat node `j` is an ancestor of `i` or `j == i`.
    pub mask: Vec<Vec<bool>>,
    /// Flat index -> original tree node index.
    pub node_order: Vec<usize>,
}

impl FlatTree {
    /// Flat index of a tree node.
    pub fn flat_index_of(&self, tree_idx: usize) -> usize {
        self.node_order
            .iter()
            .position(|&n| n == tree_idx)
            .expect("node present in flattening")
    }
}

/// Flattens a tree into level order. Ties within a level are broken by the
/// parent's flat index, then by token id ascending, so the flattening is
/// deterministic regardless of child insertion order.
pub fn flatten_level_order(tree: &TokenTree, base_position: usize) -> Result<FlatTree> {
    let violations = validate_structure(tree);
    if !violations.is_empty() {
        return Err(Error::MalformedTree(violations.join("; ")));
    }

    let n = tree.len();
    let mut flat_of: Vec<usize> = vec![usize::MAX; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    order.push(0);
    flat_of[0] = 0;

    let mut level: Vec<usize> = vec![0];
    while !level.is_empty() {
        let mut next: Vec<usize> = level
            .iter()
            .flat_map(|&p| tree.children(p).iter().copied())
            .collect();
        next.sort_by_key(|&c| (flat_of[tree.node(c).parent.unwrap()], tree.node(c).token));
        for &c in &next {
            flat_of[c] = order.len();
            order.push(c);
        }
        level = next;
    }

    let tokens: Vec<Token> = order.iter().map(|&i| tree.node(i).token).collect();
    let positions: Vec<usize> = order
        .iter()
        .map(|&i| base_position + tree.node(i).depth)
        .collect();

    let mut mask = vec![vec![false; n]; n];
    for (fi, &ti) in order.iter().enumerate() {
        let mut cur = Some(ti);
        while let Some(i) = cur {
            mask[fi][flat_of[i]] = true;
            cur = tree.node(i).parent;
        }
    }

    Ok(FlatTree { tokens, positions, mask, node_order: order })
}

/// Checks the structural invariants: single root, acyclic, all reachable,
/// consistent depths, parent-before-child ordering, and sibling-token
/// distinctness. Violations are data, not errors.
pub fn validate_tree(tree: &TokenTree) -> Vec<String> {
    let mut v = validate_structure(tree);
    // sibling distinctness (enforced after fusion)
    for (p, ch) in tree.children.iter().enumerate() {
        let mut seen = std::collections::HashSet::new();
        for &c in ch {
            if !seen.insert(tree.node(c).token) {
                v.push(format!("duplicate sibling token {} under node {p}", tree.node(c).token));
            }
        }
    }
    v
}

fn validate_structure(tree: &TokenTree) -> Vec<String> {
    let mut v = Vec::new();
    let n = tree.len();
    for (i, node) in tree.nodes.iter().enumerate() {
        match node.parent {
            None if i != 0 => v.push(format!("node {i} has no parent but is not the root")),
            Some(p) if p == i => v.push(format!("cycle at node {i}")),
            Some(p) if p >= n => v.push(format!("node {i} parent {p} out of range")),
            Some(p) if p < n && p != i => {
                if tree.nodes[p].depth + 1 != node.depth {
                    v.push(format!("node {i} depth {} != parent depth + 1", node.depth));
                }
                if p > i {
                    v.push(format!("node {i} precedes its parent {p}"));
                }
            }
            _ => {}
        }
    }
    if tree.nodes[0].parent.is_some() {
        v.push("node 0 is not a root".into());
    }
    // reachability from the root (also catches multi-node cycles)
    let mut reached = vec![false; n];
    let mut stack = vec![0usize];
    reached[0] = true;
    while let Some(i) = stack.pop() {
        for &c in tree.children(i) {
            if !reached[c] {
                reached[c] = true;
                stack.push(c);
            }
        }
    }
    for (i, r) in reached.iter().enumerate() {
        if !r {
            v.push(format!("node {i} unreachable from root"));
        }
    }
    v
}
