//! Retrieval tree construction, the high-frequency prefix filter, and
//! pruning by the draft model's first-layer distribution.

use crate::datastore::CandidateSet;
use crate::dist::Distribution;
use crate::draft::top_k_tokens;
use crate::tree::{Provenance, Token, TokenTree};

#[derive(Debug, Clone, Copy)]
pub struct PruneConfig {
    pub top_k: usize,
    pub enabled: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { top_k: 8, enabled: true }
    }
}

/// Trie insertion of each candidate as a root-to-leaf path; shared prefixes
/// merge. An empty candidate set yields the single-node tree.
pub fn build_retrieval_tree(candidates: &CandidateSet, y0: Token) -> TokenTree {
    let mut tree = TokenTree::new(y0, Provenance::Retrieval);
    for cand in &candidates.candidates {
        let mut node = 0usize;
        for &tok in cand {
            node = match tree.children(node).iter().copied().find(|&c| tree.node(c).token == tok) {
                Some(c) => c,
                None => tree.add_child(node, tok, None, Provenance::Retrieval),
            };
        }
    }
    tree
}

/// Number of trie nodes (root excluded) the candidate set would occupy.
fn trie_size(candidates: &[&Vec<Token>]) -> usize {
    let mut prefixes = std::collections::HashSet::new();
    for cand in candidates {
        for end in 1..=cand.len() {
            prefixes.insert(&cand[..end]);
        }
    }
    prefixes.len()
}

/// Greedy budgeted admission by descending frequency: candidates are ranked
/// by (frequency, match_len, insertion order) and admitted while the trie of
/// admitted candidates fits `node_budget` non-root nodes. The admitted subset
/// keeps its original relative order.
pub fn prefix_frequency_filter(candidates: &CandidateSet, node_budget: usize) -> CandidateSet {
    assert!(node_budget >= 1, "node_budget must be >= 1");
    let mut rank: Vec<usize> = (0..candidates.len()).collect();
    rank.sort_by(|&a, &b| {
        candidates.frequency[b]
            .cmp(&candidates.frequency[a])
            .then(candidates.match_len[b].cmp(&candidates.match_len[a]))
            .then(a.cmp(&b))
    });
    let mut admitted: Vec<usize> = Vec::new();
    for i in rank {
        let mut trial: Vec<&Vec<Token>> = admitted.iter().map(|&j| &candidates.candidates[j]).collect();
        trial.push(&candidates.candidates[i]);
        if trie_size(&trial) <= node_budget {
            admitted.push(i);
        }
    }
    admitted.sort();
    let mut out = CandidateSet::default();
    for i in admitted {
        out.candidates.push(candidates.candidates[i].clone());
        out.match_len.push(candidates.match_len[i]);
        out.frequency.push(candidates.frequency[i]);
    }
    out
}

/// Drops every depth-1 subtree whose first token is outside the top-k of P1.
/// The root is always retained; disabled means identity.
pub fn prune_by_first_token(tree: &TokenTree, p1: &Distribution, cfg: &PruneConfig) -> TokenTree {
    if !cfg.enabled {
        return tree.clone();
    }
    let k = cfg.top_k.min(p1.vocab_size());
    let keep: std::collections::HashSet<Token> =
        top_k_tokens(p1, k).expect("top_k within vocab").into_iter().collect();
    let mut out = TokenTree::new(tree.root_token(), tree.node(0).provenance);
    let mut map = std::collections::HashMap::new();
    map.insert(0usize, 0usize);
    // nodes are parent-before-child, so one forward sweep suffices
    for i in 1..tree.len() {
        let n = tree.node(i);
        let parent = n.parent.unwrap();
        if n.depth == 1 && !keep.contains(&n.token) {
            continue;
        }
        let Some(&new_parent) = map.get(&parent) else { continue };
        let ni = out.add_child(new_parent, n.token, n.draft_prob, n.provenance);
        map.insert(i, ni);
    }
    out
}
