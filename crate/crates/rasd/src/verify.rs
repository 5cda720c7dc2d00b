//! Lossless verification of a fused tree against target distributions.
//!
//! Greedy mode walks the argmax chain. Stochastic mode applies the
//! multi-candidate accept/reject scheme with residual updates, testing
//! children in tree child order with a point-mass proposal at each child's
//! token.
//!
//! Point mass is the only proposal distribution compatible with exactness
//! here: the tree's tokens are chosen deterministically (top-k expansion and
//! retrieval lookups), not sampled, and for a deterministic proposal of token
//! x the accept probability must not exceed r(x) or x is over-emitted. With
//! q = δ_x the acceptance is exactly r(x) and the residual renormalizes the
//! remaining mass, so the emitted token is distributed exactly as r for every
//! fixed tree — no averaging over draft randomness required.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::dist::{residual_distribution, Distribution};
use crate::error::{Error, Result};
use crate::fusion::FusedTree;
use crate::tree::{FlatTree, Token};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    /// Accepted draft tokens in order; a root-descendant path starting at a
    /// depth-1 child. May be empty.
    pub accepted_path: Vec<Token>,
    /// The bonus token: resampled on rejection, or drawn from the
    /// distribution after the last accepted node.
    pub final_token: Token,
    pub accepted_count: usize,
}

impl VerifyOutcome {
    /// All tokens emitted this step: `accepted_count + 1`.
    pub fn emitted(&self) -> Vec<Token> {
        let mut v = self.accepted_path.clone();
        v.push(self.final_token);
        v
    }
}

/// Reorders flat-indexed per-node distributions into tree-node indexing.
pub fn dists_by_tree_node(node_dists: &[Distribution], flat: &FlatTree) -> Vec<Distribution> {
    let mut out: Vec<Option<Distribution>> = vec![None; node_dists.len()];
    for (fi, &ti) in flat.node_order.iter().enumerate() {
        out[ti] = Some(node_dists[fi].clone());
    }
    out.into_iter().map(|d| d.expect("every node flattened")).collect()
}

/// Greedy verification: accept children matching the running argmax chain.
///
/// Walks a *set* of current nodes so trees with duplicate sibling tokens
/// (the no-fusion ablation arm) follow the same accepted sequence as their
/// merged counterpart.
pub fn verify_greedy(
    node_dists: &[Distribution],
    flat: &FlatTree,
    fused: &FusedTree,
) -> VerifyOutcome {
    let dists = dists_by_tree_node(node_dists, flat);
    let mut current: Vec<usize> = vec![0];
    let mut accepted_path = Vec::new();
    loop {
        // all current nodes share one token path, hence one distribution
        let t_star = dists[current[0]].argmax();
        let next: Vec<usize> = current
            .iter()
            .flat_map(|&n| fused.tree.children(n).iter().copied())
            .filter(|&c| fused.tree.node(c).token == t_star)
            .collect();
        if next.is_empty() {
            let accepted_count = accepted_path.len();
            return VerifyOutcome { accepted_path, final_token: t_star, accepted_count };
        }
        accepted_path.push(t_star);
        current = next;
    }
}

/// Stochastic recursive verification. At each node with residual target
/// distribution r, child token x is accepted with probability r(x); on
/// rejection x's mass is removed and r renormalized before the next sibling;
/// if every child is rejected the final token is sampled from what remains.
/// One rng draw per acceptance test and one for the final sample.
pub fn verify_stochastic(
    node_dists: &[Distribution],
    flat: &FlatTree,
    fused: &FusedTree,
    rng: &mut ChaCha12Rng,
) -> Result<VerifyOutcome> {
    let dists = dists_by_tree_node(node_dists, flat);
    let vocab = dists[0].vocab_size();
    let mut accepted_path = Vec::new();
    let mut node = 0usize;
    loop {
        let mut r = dists[node].clone();
        let mut descended = false;
        for &c in fused.tree.children(node) {
            let tok = fused.tree.node(c).token;
            let accept_p = r.prob(tok);
            let u: f64 = rng.random();
            if u < accept_p {
                accepted_path.push(tok);
                node = c;
                descended = true;
                break;
            }
            // rejection is only reachable when accept_p < 1, so the
            // residual cannot be the zero vector unless something upstream
            // produced an invalid distribution
            let q = Distribution::point_mass(tok, vocab);
            r = residual_distribution(&r, &q).map_err(|e| match e {
                Error::ZeroResidual => Error::InvariantBreach(
                    "zero residual after a rejection with accept_p < 1".into(),
                ),
                other => other,
            })?;
        }
        if !descended {
            let u: f64 = rng.random();
            let final_token = r.sample_with(u);
            let accepted_count = accepted_path.len();
            return Ok(VerifyOutcome { accepted_path, final_token, accepted_count });
        }
    }
}

const ENUM_MAX_VOCAB: usize = 8;
const ENUM_MAX_NODES: usize = 12;
pub const ENUM_MAX_HORIZON: usize = 3;

/// Exhaustively enumerates every accept/reject branch of one stochastic
/// verification step, returning each possible emitted sequence with its
/// probability. Test oracle; bounded for tractability.
pub fn enumerate_step(
    node_dists: &[Distribution],
    flat: &FlatTree,
    fused: &FusedTree,
) -> Result<Vec<(Vec<Token>, f64)>> {
    let vocab = node_dists[0].vocab_size();
    if vocab > ENUM_MAX_VOCAB {
        return Err(Error::TooLarge(format!("vocab {vocab} > {ENUM_MAX_VOCAB}")));
    }
    if fused.tree.len() > ENUM_MAX_NODES {
        return Err(Error::TooLarge(format!("{} nodes > {ENUM_MAX_NODES}", fused.tree.len())));
    }
    let dists = dists_by_tree_node(node_dists, flat);
    let mut out = Vec::new();
    enum_rec(&dists, fused, 0, &Vec::new(), 1.0, &mut out)?;
    Ok(out)
}

fn enum_rec(
    dists: &[Distribution],
    fused: &FusedTree,
    node: usize,
    prefix: &[Token],
    prob: f64,
    out: &mut Vec<(Vec<Token>, f64)>,
) -> Result<()> {
    let vocab = dists[0].vocab_size();
    let mut r = dists[node].clone();
    let mut reach = prob;
    for &c in fused.tree.children(node) {
        if reach <= 0.0 {
            return Ok(());
        }
        let tok = fused.tree.node(c).token;
        let accept_p = r.prob(tok);
        if accept_p > 0.0 {
            let mut next = prefix.to_vec();
            next.push(tok);
            enum_rec(dists, fused, c, &next, reach * accept_p, out)?;
        }
        if accept_p >= 1.0 {
            return Ok(()); // rejection branch has zero mass
        }
        reach *= 1.0 - accept_p;
        r = residual_distribution(&r, &Distribution::point_mass(tok, vocab))?;
    }
    if reach > 0.0 {
        for t in 0..vocab {
            let tok = Token(t as u32);
            let p = r.prob(tok);
            if p > 0.0 {
                let mut seq = prefix.to_vec();
                seq.push(tok);
                out.push((seq, reach * p));
            }
        }
    }
    Ok(())
}

/// Distribution over the first `horizon` emitted tokens: the step outcomes
/// of `enumerate_step`, extended by the target model's exact conditionals
/// where a step emits fewer than `horizon` tokens. Later steps with a
/// root-only tree sample the target conditional directly, so this extension
/// is their exact enumeration.
pub fn enumerate_outcome_distribution(
    target: &crate::model::ModelSpec,
    context: &[Token],
    node_dists: &[Distribution],
    flat: &FlatTree,
    fused: &FusedTree,
    horizon: usize,
) -> Result<std::collections::HashMap<Vec<Token>, f64>> {
    if horizon > ENUM_MAX_HORIZON {
        return Err(Error::TooLarge(format!("horizon {horizon} > {ENUM_MAX_HORIZON}")));
    }
    let step = enumerate_step(node_dists, flat, fused)?;
    let mut joint: std::collections::HashMap<Vec<Token>, f64> = std::collections::HashMap::new();
    // step emissions follow y0, so the conditioning context includes y0
    let mut base_ctx = context.to_vec();
    base_ctx.push(fused.tree.root_token());
    for (seq, p) in step {
        extend_chain(target, &base_ctx, &seq, p, horizon, &mut joint);
    }
    Ok(joint)
}

fn extend_chain(
    target: &crate::model::ModelSpec,
    base_ctx: &[Token],
    seq: &[Token],
    p: f64,
    horizon: usize,
    joint: &mut std::collections::HashMap<Vec<Token>, f64>,
) {
    if seq.len() >= horizon {
        *joint.entry(seq[..horizon].to_vec()).or_insert(0.0) += p;
        return;
    }
    let mut ctx = base_ctx.to_vec();
    ctx.extend(seq);
    let dist = target.next_distribution(&ctx);
    for t in 0..dist.vocab_size() {
        let tok = Token(t as u32);
        let pt = dist.prob(tok);
        if pt > 0.0 {
            let mut next = seq.to_vec();
            next.push(tok);
            extend_chain(target, base_ctx, &next, p * pt, horizon, joint);
        }
    }
}
