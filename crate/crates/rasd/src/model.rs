//! Reference language models: additive-smoothed back-off n-gram tables.
//!
//! The engine sees models only through `next_distribution` and
//! `tree_forward`, so any backend honoring those contracts plugs in. Table
//! models keep every probability exactly reproducible, which is what makes
//! losslessness checkable bit-for-bit.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::dist::Distribution;
use crate::error::{Error, Result};
use crate::tree::{flatten_level_order, FlatTree, Token, TokenTree};

/// An order-k n-gram model with additive smoothing and longest-suffix
/// back-off.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub order: usize,
    pub vocab_size: usize,
    pub smoothing_alpha: f64,
    /// Context (length 0..=order) -> count vector over the vocabulary.
    counts: HashMap<Vec<Token>, Vec<u64>>,
}

/// Per-session decoding state: the committed context.
#[derive(Debug, Clone)]
pub struct GenerationState {
    pub context: Vec<Token>,
}

impl GenerationState {
    pub fn new(context: Vec<Token>) -> Self {
        Self { context }
    }

    pub fn base_position(&self) -> usize {
        self.context.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    /// 0 means greedy (argmax, ties broken by lowest token id).
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { temperature: 0.0, seed: 0 }
    }
}

/// Counts every context of length `0..=order` followed by its next token.
pub fn train_markov(
    corpus: &[Vec<Token>],
    order: usize,
    vocab_size: usize,
    alpha: f64,
) -> Result<ModelSpec> {
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    assert!(alpha > 0.0, "alpha must be positive");
    let mut counts: HashMap<Vec<Token>, Vec<u64>> = HashMap::new();
    for seq in corpus {
        for (i, &tok) in seq.iter().enumerate() {
            for ctx_len in 0..=order.min(i) {
                let ctx = seq[i - ctx_len..i].to_vec();
                let entry = counts.entry(ctx).or_insert_with(|| vec![0; vocab_size]);
                entry[tok.0 as usize] += 1;
            }
        }
    }
    Ok(ModelSpec { order, vocab_size, smoothing_alpha: alpha, counts })
}

impl ModelSpec {
    /// Additive-smoothed conditional using the longest stored context suffix.
    pub fn next_distribution(&self, context: &[Token]) -> Distribution {
        let max_len = self.order.min(context.len());
        for ctx_len in (0..=max_len).rev() {
            let ctx = &context[context.len() - ctx_len..];
            if let Some(cv) = self.counts.get(ctx) {
                return self.smoothed(cv);
            }
        }
        Distribution::uniform(self.vocab_size)
    }

    fn smoothed(&self, counts: &[u64]) -> Distribution {
        let total: u64 = counts.iter().sum();
        let denom = total as f64 + self.smoothing_alpha * self.vocab_size as f64;
        let probs = counts
            .iter()
            .map(|&c| (c as f64 + self.smoothing_alpha) / denom)
            .collect();
        Distribution::new(probs).expect("smoothed counts normalize")
    }

    /// Raw count vector for a context, if stored. Test hook.
    pub fn counts_for(&self, context: &[Token]) -> Option<&[u64]> {
        self.counts.get(context).map(|v| v.as_slice())
    }

    pub fn context_count(&self) -> usize {
        self.counts.len()
    }

    /// Scores every node of a flattened tree in one (simulated) forward pass:
    /// the distribution at node `i` conditions on `context` plus the tokens on
    /// node `i`'s ancestor path, inclusive. The caller accounts this as a
    /// single target forward pass regardless of node count.
    pub fn tree_forward(
        &self,
        state: &GenerationState,
        flat: &FlatTree,
    ) -> Vec<Distribution> {
        let n = flat.tokens.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut ctx = state.context.clone();
            // ancestor path in flat order: mask row i selects exactly the
            // path through the tree, already level-ordered
            for j in 0..n {
                if flat.mask[i][j] {
                    ctx.push(flat.tokens[j]);
                }
            }
            out.push(self.next_distribution(&ctx));
        }
        out
    }

    /// Convenience: flatten then score.
    pub fn tree_forward_tree(
        &self,
        state: &GenerationState,
        tree: &TokenTree,
    ) -> Result<(FlatTree, Vec<Distribution>)> {
        let flat = flatten_level_order(tree, state.base_position())?;
        let dists = self.tree_forward(state, &flat);
        Ok((flat, dists))
    }
}

/// Draws one token, consuming exactly one uniform variate unless greedy.
pub fn sample(dist: &Distribution, cfg: &SamplerConfig, rng: &mut ChaCha12Rng) -> Token {
    if cfg.temperature == 0.0 {
        return dist.argmax();
    }
    let tempered = dist.with_temperature(cfg.temperature);
    let u: f64 = rng.random();
    tempered.sample_with(u)
}
