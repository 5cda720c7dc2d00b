//! Merging the draft tree and the retrieval tree into one verified tree.

use crate::draft::DraftResult;
use crate::error::{Error, Result};
use crate::tree::{flatten_level_order, FlatTree, Provenance, Token, TokenTree};

/// The tree handed to verification. Draft-origin nodes keep their draft
/// conditional probability in `draft_prob`, unchanged by fusion.
#[derive(Debug, Clone)]
pub struct FusedTree {
    pub tree: TokenTree,
}

impl FusedTree {
    pub fn node_count(&self) -> usize {
        self.tree.len()
    }
}

/// Longest-prefix-match merge: all root-to-leaf paths of both trees land in
/// one trie rooted at y0. A node present in both sources becomes `Fused` and
/// keeps the draft probability; draft-origin children come first in child
/// order, then retrieval-only children.
pub fn fuse_trees(draft: &DraftResult, retrieval: &TokenTree) -> Result<FusedTree> {
    if draft.tree.root_token() != retrieval.root_token() {
        return Err(Error::RootMismatch {
            draft: draft.tree.root_token().0,
            retrieval: retrieval.root_token().0,
        });
    }
    let mut tree = TokenTree::new(draft.tree.root_token(), Provenance::Fused);

    // draft paths first, preserving draft child order
    insert_subtree(&draft.tree, 0, &mut tree, 0, Source::Draft);
    insert_subtree(retrieval, 0, &mut tree, 0, Source::Retrieval);
    Ok(FusedTree { tree })
}

#[derive(Clone, Copy)]
enum Source {
    Draft,
    Retrieval,
}

fn insert_subtree(
    src: &TokenTree,
    src_node: usize,
    dst: &mut TokenTree,
    dst_node: usize,
    source: Source,
) {
    for &c in src.children(src_node) {
        let tok = src.node(c).token;
        let existing = dst.children(dst_node).iter().copied().find(|&d| dst.node(d).token == tok);
        let target = match existing {
            Some(d) => {
                match source {
                    // same path from both sources: mark fused, keep draft q
                    Source::Retrieval if dst.node(d).provenance == Provenance::Draft => {
                        mark_fused(dst, d);
                    }
                    _ => {}
                }
                d
            }
            None => {
                let (prov, q) = match source {
                    Source::Draft => (Provenance::Draft, src.node(c).draft_prob),
                    Source::Retrieval => (Provenance::Retrieval, None),
                };
                dst.add_child(dst_node, tok, q, prov)
            }
        };
        insert_subtree(src, c, dst, target, source);
    }
}

fn mark_fused(tree: &mut TokenTree, idx: usize) {
    tree.node_mut(idx).provenance = Provenance::Fused;
}

/// Stacks both trees under the shared root without merging shared prefixes.
/// This is the no-fusion ablation arm: duplicate sibling tokens are allowed
/// and every node keeps its source's fields.
pub fn concat_trees(draft: &DraftResult, retrieval: &TokenTree) -> Result<FusedTree> {
    if draft.tree.root_token() != retrieval.root_token() {
        return Err(Error::RootMismatch {
            draft: draft.tree.root_token().0,
            retrieval: retrieval.root_token().0,
        });
    }
    let mut tree = TokenTree::new(draft.tree.root_token(), Provenance::Draft);
    copy_subtree(&draft.tree, 0, &mut tree, 0);
    copy_subtree(retrieval, 0, &mut tree, 0);
    Ok(FusedTree { tree })
}

fn copy_subtree(src: &TokenTree, src_node: usize, dst: &mut TokenTree, dst_node: usize) {
    for &c in src.children(src_node) {
        let n = src.node(c);
        let d = dst.add_child(dst_node, n.token, n.draft_prob, n.provenance);
        copy_subtree(src, c, dst, d);
    }
}

/// Flattens the post-merge topology; mask and positions reflect the fused
/// tree, never the pre-merge inputs.
pub fn flatten_fused(fused: &FusedTree, base_position: usize) -> Result<FlatTree> {
    flatten_level_order(&fused.tree, base_position)
}

/// Root-to-leaf token paths (root excluded), as a set.
pub fn path_set(tree: &TokenTree) -> std::collections::HashSet<Vec<Token>> {
    tree.leaf_paths().into_iter().collect()
}
