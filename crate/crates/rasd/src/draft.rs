//! Draft-tree generation: beam expansion plus global reranking by cumulative
//! probability, the dynamic drafting scheme popularized by EAGLE2.

use crate::dist::Distribution;
use crate::error::Result;
use crate::model::{GenerationState, ModelSpec};
use crate::tree::{Provenance, Token, TokenTree};

#[derive(Debug, Clone, Copy)]
pub struct DraftConfig {
    /// Maximum draft depth m.
    pub max_depth: usize,
    /// Children proposed per expanded node.
    pub branch_k: usize,
    /// Nodes kept per layer during expansion.
    pub layer_beam: usize,
    /// Final budget of non-root nodes after reranking.
    pub total_nodes: usize,
}

impl Default for DraftConfig {
    fn default() -> Self {
        Self { max_depth: 6, branch_k: 8, layer_beam: 8, total_nodes: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct DraftResult {
    /// Tree rooted at y0, provenance `Draft`, `draft_prob` set on every
    /// non-root node.
    pub tree: TokenTree,
    /// P1: the draft conditional right after y0, used for retrieval pruning.
    pub first_distribution: Distribution,
    /// Per tree node: product of `draft_prob` along the root path (root = 1).
    pub cumulative: Vec<f64>,
    /// Layers expanded, i.e. batched draft forward passes consumed.
    pub forward_passes: usize,
}

/// The `k` most probable tokens of a distribution, descending, ties by id.
pub fn top_k_tokens(dist: &Distribution, k: usize) -> Result<Vec<Token>> {
    dist.top_k(k)
}

struct Cand {
    token: Token,
    parent: Option<usize>, // arena index
    depth: usize,
    prob: f64,
    cum: f64,
}

/// Expands a draft tree under the beam, then reranks all proposed nodes
/// globally by cumulative probability and keeps the top `total_nodes`,
/// closed under ancestors.
pub fn generate_draft_tree(
    draft_model: &ModelSpec,
    state: &GenerationState,
    y0: Token,
    cfg: &DraftConfig,
) -> DraftResult {
    let mut ctx = state.context.clone();
    ctx.push(y0);
    let first_distribution = draft_model.next_distribution(&ctx);

    // Phase 1: layer-wise beam expansion. Every proposed node stays in the
    // arena; only the beam is expanded further.
    let mut arena: Vec<Cand> = Vec::new();
    let mut kept: Vec<Option<usize>> = vec![None]; // None = the root
    let mut forward_passes = 0usize;
    for depth in 0..cfg.max_depth {
        if kept.is_empty() {
            break;
        }
        forward_passes += 1;
        let mut layer: Vec<usize> = Vec::new();
        for &node in &kept {
            let (path_ctx, parent_cum) = match node {
                None => (ctx.clone(), 1.0),
                Some(i) => {
                    let mut c = ctx.clone();
                    let mut rev = Vec::new();
                    let mut cur = Some(i);
                    while let Some(j) = cur {
                        rev.push(arena[j].token);
                        cur = arena[j].parent;
                    }
                    rev.reverse();
                    c.extend(rev);
                    (c, arena[i].cum)
                }
            };
            let dist = if node.is_none() {
                first_distribution.clone()
            } else {
                draft_model.next_distribution(&path_ctx)
            };
            let k = cfg.branch_k.min(draft_model.vocab_size);
            for tok in dist.top_k(k).expect("branch_k within vocab") {
                let prob = dist.prob(tok);
                arena.push(Cand {
                    token: tok,
                    parent: node,
                    depth: depth + 1,
                    prob,
                    cum: parent_cum * prob,
                });
                layer.push(arena.len() - 1);
            }
        }
        layer.sort_by(|&a, &b| {
            arena[b]
                .cum
                .partial_cmp(&arena[a].cum)
                .unwrap()
                .then(arena[a].token.cmp(&arena[b].token))
                .then(a.cmp(&b))
        });
        layer.truncate(cfg.layer_beam);
        kept = layer.into_iter().map(Some).collect();
    }

    // Phase 2: global rerank. Cumulative desc, depth asc, token id asc.
    // A parent's cumulative is never below its child's and depth breaks the
    // exact ties, so the sorted prefix is ancestor-closed by construction.
    let mut order: Vec<usize> = (0..arena.len()).collect();
    order.sort_by(|&a, &b| {
        arena[b]
            .cum
            .partial_cmp(&arena[a].cum)
            .unwrap()
            .then(arena[a].depth.cmp(&arena[b].depth))
            .then(arena[a].token.cmp(&arena[b].token))
            .then(a.cmp(&b))
    });
    order.truncate(cfg.total_nodes);

    let selected: std::collections::HashSet<usize> = order.iter().copied().collect();
    let mut tree = TokenTree::new(y0, Provenance::Draft);
    let mut cumulative = vec![1.0f64];
    let mut tree_idx: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for &i in &order {
        let parent_tree = match arena[i].parent {
            None => 0,
            Some(p) => {
                debug_assert!(selected.contains(&p), "rerank prefix must be ancestor-closed");
                tree_idx[&p]
            }
        };
        let ti = tree.add_child(parent_tree, arena[i].token, Some(arena[i].prob), Provenance::Draft);
        cumulative.push(arena[i].cum);
        tree_idx.insert(i, ti);
    }

    DraftResult { tree, first_distribution, cumulative, forward_passes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::train_markov;

    fn toks(v: &[u32]) -> Vec<Token> {
        v.iter().map(|&t| Token(t)).collect()
    }

    #[test]
    fn one_layer_expansion_takes_top_branch_k() {
        // order-0 model with unigram counts biased 0 > 1 > 2
        let m = train_markov(&[toks(&[0, 0, 0, 0, 0, 0, 1, 1, 1, 2])], 0, 3, 0.01).unwrap();
        let state = GenerationState::new(toks(&[0]));
        let cfg = DraftConfig { max_depth: 1, branch_k: 2, layer_beam: 2, total_nodes: 2 };
        let res = generate_draft_tree(&m, &state, Token(0), &cfg);
        assert_eq!(res.tree.len(), 3);
        let kids: Vec<Token> = res.tree.children(0).iter().map(|&c| res.tree.node(c).token).collect();
        assert_eq!(kids, toks(&[0, 1]));
        let q0 = res.tree.node(res.tree.children(0)[0]).draft_prob.unwrap();
        let q1 = res.tree.node(res.tree.children(0)[1]).draft_prob.unwrap();
        assert!(q0 > q1);
        assert_eq!(res.forward_passes, 1);
    }

    #[test]
    fn budget_one_keeps_single_best_child() {
        let m = train_markov(&[toks(&[1, 1, 1, 1, 0])], 0, 2, 0.01).unwrap();
        let state = GenerationState::new(toks(&[1]));
        let cfg = DraftConfig { max_depth: 1, branch_k: 1, layer_beam: 1, total_nodes: 1 };
        let res = generate_draft_tree(&m, &state, Token(1), &cfg);
        assert_eq!(res.tree.len(), 2);
        assert_eq!(res.tree.node(1).token, Token(1));
    }

    #[test]
    fn point_mass_model_yields_greedy_chain() {
        // corpus 0->1->2->0 cycle trained at order 1 with tiny alpha is
        // nearly point mass; chain cumulative stays close to 1
        let m = train_markov(&[toks(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0])], 1, 3, 1e-9).unwrap();
        let state = GenerationState::new(toks(&[2]));
        let cfg = DraftConfig { max_depth: 3, branch_k: 1, layer_beam: 1, total_nodes: 3 };
        let res = generate_draft_tree(&m, &state, Token(0), &cfg);
        let paths = res.tree.leaf_paths();
        assert_eq!(paths, vec![toks(&[1, 2, 0])]);
        for c in &res.cumulative[1..] {
            assert!(*c > 0.999, "cumulative {c}");
        }
    }

    #[test]
    fn tree_stays_within_budget_and_probs_check_out() {
        let m = train_markov(&[toks(&[0, 1, 0, 2, 1, 1, 0, 2, 0, 1])], 1, 3, 0.5).unwrap();
        let state = GenerationState::new(toks(&[0, 1]));
        let cfg = DraftConfig { max_depth: 3, branch_k: 3, layer_beam: 4, total_nodes: 7 };
        let res = generate_draft_tree(&m, &state, Token(0), &cfg);
        assert!(res.tree.len() - 1 <= cfg.total_nodes);
        assert!(crate::tree::validate_tree(&res.tree).is_empty());
        // re-evaluate each node's draft_prob against the model
        for i in 1..res.tree.len() {
            let mut path = state.context.clone();
            path.extend(res.tree.path_tokens(i));
            let tok = path.pop().unwrap();
            let expect = m.next_distribution(&path).prob(tok);
            assert_eq!(res.tree.node(i).draft_prob.unwrap(), expect);
            // cumulative = parent cumulative * prob
            let parent = res.tree.node(i).parent.unwrap();
            let want = res.cumulative[parent] * expect;
            assert!((res.cumulative[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_rerank_under_growing_budget() {
        let m = train_markov(&[toks(&[0, 1, 0, 2, 1, 1, 0, 2, 0, 1, 2, 2])], 1, 3, 0.5).unwrap();
        let state = GenerationState::new(toks(&[0, 1]));
        let small = DraftConfig { max_depth: 3, branch_k: 3, layer_beam: 4, total_nodes: 5 };
        let large = DraftConfig { total_nodes: 9, ..small };
        let a = generate_draft_tree(&m, &state, Token(0), &small);
        let b = generate_draft_tree(&m, &state, Token(0), &large);
        let paths_a: std::collections::HashSet<Vec<Token>> =
            (1..a.tree.len()).map(|i| a.tree.path_tokens(i)).collect();
        let paths_b: std::collections::HashSet<Vec<Token>> =
            (1..b.tree.len()).map(|i| b.tree.path_tokens(i)).collect();
        assert!(paths_a.is_subset(&paths_b));
    }
}
