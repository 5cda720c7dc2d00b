//! The decoding loop: draft, retrieve, prune, fuse, verify, append.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{pld_retrieve, rest_retrieve, CandidateSet, Datastore, RetrievalConfig};
use crate::draft::{generate_draft_tree, DraftConfig, DraftResult};
use crate::error::{Error, Result};
use crate::fusion::{concat_trees, flatten_fused, fuse_trees};
use crate::model::{sample, GenerationState, ModelSpec, SamplerConfig};
use crate::retrieval_tree::{build_retrieval_tree, prefix_frequency_filter, prune_by_first_token, PruneConfig};
use crate::tree::{Provenance, Token, TokenTree};
use crate::verify::{verify_greedy, verify_stochastic, VerifyOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    None,
    Pld,
    Rest,
    Both,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub draft: DraftConfig,
    pub retrieval: RetrievalConfig,
    pub prune: PruneConfig,
    pub fusion_enabled: bool,
    pub retrieval_mode: RetrievalMode,
    pub sampler: SamplerConfig,
    pub max_new_tokens: usize,
    pub eos_token: Option<Token>,
    /// Trie node budget for the REST prefix filter.
    pub retrieval_node_budget: usize,
    /// When false the draft tree degenerates to the root; the retrieval-only
    /// ablation arm. P1 is still computed for pruning and PLD retry.
    pub draft_enabled: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            draft: DraftConfig::default(),
            retrieval: RetrievalConfig::default(),
            prune: PruneConfig::default(),
            fusion_enabled: true,
            retrieval_mode: RetrievalMode::None,
            sampler: SamplerConfig::default(),
            max_new_tokens: 64,
            eos_token: None,
            retrieval_node_budget: 64,
            draft_enabled: true,
        }
    }
}

/// Run counters and derived metrics.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub target_forward_passes: u64,
    pub draft_forward_passes: u64,
    pub retrieval_calls: u64,
    pub tokens_generated: u64,
    pub verified_node_total: u64,
    /// Tokens emitted per target forward pass (bonus token included).
    pub tau: f64,
    pub sr_proxy: f64,
    /// Accepted-token count per verification step (initial token excluded).
    pub per_step_accepts: Vec<u64>,
    /// Verified tree size per step; tracks how much fusion deduplicates.
    pub per_step_nodes: Vec<u64>,
}

impl Metrics {
    fn finish(&mut self) {
        self.tau = if self.target_forward_passes > 0 {
            self.tokens_generated as f64 / self.target_forward_passes as f64
        } else {
            0.0
        };
    }
}

/// Forward-pass cost model for the speedup proxy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostModel {
    pub c_target: f64,
    pub c_draft: f64,
    pub c_retrieval: f64,
    pub wall_clock: bool,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { c_target: 1.0, c_draft: 0.05, c_retrieval: 0.02, wall_clock: false }
    }
}

/// SR proxy: baseline cost of generating the same tokens autoregressively
/// over the cost actually spent.
pub fn speedup_proxy(m: &Metrics, cost: &CostModel) -> f64 {
    let spent = m.target_forward_passes as f64 * cost.c_target
        + m.draft_forward_passes as f64 * cost.c_draft
        + m.retrieval_calls as f64 * cost.c_retrieval;
    if spent <= 0.0 {
        return 0.0;
    }
    m.tokens_generated as f64 * cost.c_target / spent
}

fn validate(cfg: &EngineConfig, store: Option<&Datastore>) -> Result<()> {
    if cfg.max_new_tokens < 1 {
        return Err(Error::ConfigInvalid("max_new_tokens must be >= 1".into()));
    }
    cfg.retrieval.validate()?;
    let needs_store = matches!(cfg.retrieval_mode, RetrievalMode::Rest | RetrievalMode::Both);
    if needs_store && store.is_none() {
        return Err(Error::ConfigInvalid("REST retrieval requires a datastore".into()));
    }
    if cfg.retrieval_node_budget < 1 {
        return Err(Error::ConfigInvalid("retrieval_node_budget must be >= 1".into()));
    }
    Ok(())
}

fn root_only_draft(draft_model: &ModelSpec, state: &GenerationState, y0: Token) -> DraftResult {
    let mut ctx = state.context.clone();
    ctx.push(y0);
    DraftResult {
        tree: TokenTree::new(y0, Provenance::Draft),
        first_distribution: draft_model.next_distribution(&ctx),
        cumulative: vec![1.0],
        forward_passes: 1,
    }
}

/// One full speculative decoding run.
pub fn decode(
    target: &ModelSpec,
    draft_model: &ModelSpec,
    store: Option<&Datastore>,
    prompt: &[Token],
    cfg: &EngineConfig,
) -> Result<(Vec<Token>, Metrics)> {
    if prompt.is_empty() {
        return Err(Error::ConfigInvalid("prompt must be non-empty".into()));
    }
    validate(cfg, store)?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.sampler.seed);
    let mut metrics = Metrics::default();
    let mut committed: Vec<Token> = prompt.to_vec();
    let mut output: Vec<Token> = Vec::new();

    // step 0: the target commits y0 with a plain forward pass
    let first = target.next_distribution(&committed);
    metrics.target_forward_passes += 1;
    let mut y0 = sample(&first, &cfg.sampler, &mut rng);
    output.push(y0);
    metrics.tokens_generated += 1;

    while output.len() < cfg.max_new_tokens && Some(y0) != cfg.eos_token {
        let state = GenerationState::new(committed.clone());

        // (1) draft
        let dr = if cfg.draft_enabled {
            generate_draft_tree(draft_model, &state, y0, &cfg.draft)
        } else {
            root_only_draft(draft_model, &state, y0)
        };
        metrics.draft_forward_passes += dr.forward_passes as u64;

        // (2) retrieval
        let vocab = target.vocab_size;
        let mut cands = CandidateSet::default();
        match cfg.retrieval_mode {
            RetrievalMode::None => {}
            RetrievalMode::Pld => {
                cands = pld_retrieve(&state, y0, &dr, vocab, &cfg.retrieval)?;
                metrics.retrieval_calls += 1;
            }
            RetrievalMode::Rest => {
                let rest = rest_retrieve(store.unwrap(), &state, y0, &cfg.retrieval)?;
                metrics.retrieval_calls += 1;
                cands = prefix_frequency_filter(&rest, cfg.retrieval_node_budget);
            }
            RetrievalMode::Both => {
                cands = pld_retrieve(&state, y0, &dr, vocab, &cfg.retrieval)?;
                let rest = rest_retrieve(store.unwrap(), &state, y0, &cfg.retrieval)?;
                metrics.retrieval_calls += 2;
                cands.union(&prefix_frequency_filter(&rest, cfg.retrieval_node_budget));
            }
        }

        // (3) retrieval tree, pruned by P1
        let rtree = build_retrieval_tree(&cands, y0);
        let rtree = prune_by_first_token(&rtree, &dr.first_distribution, &cfg.prune);

        // (4) fuse, or stack unmerged in the ablation arm
        let fused = if cfg.fusion_enabled {
            fuse_trees(&dr, &rtree)?
        } else {
            concat_trees(&dr, &rtree)?
        };

        // (5) single target pass over the flattened tree
        let flat = flatten_fused(&fused, state.base_position())?;
        let mut node_dists = target.tree_forward(&state, &flat);
        metrics.target_forward_passes += 1;
        metrics.verified_node_total += fused.node_count() as u64;
        metrics.per_step_nodes.push(fused.node_count() as u64);

        // (6) verify
        let outcome: VerifyOutcome = if cfg.sampler.temperature == 0.0 {
            verify_greedy(&node_dists, &flat, &fused)
        } else {
            for d in &mut node_dists {
                *d = d.with_temperature(cfg.sampler.temperature);
            }
            verify_stochastic(&node_dists, &flat, &fused, &mut rng)?
        };

        // (7) append; the final token is the next step's y0
        metrics.per_step_accepts.push(outcome.accepted_count as u64);
        committed.push(y0);
        committed.extend(&outcome.accepted_path);
        output.extend(&outcome.accepted_path);
        output.push(outcome.final_token);
        metrics.tokens_generated += outcome.accepted_count as u64 + 1;
        y0 = outcome.final_token;

        if let Some(eos) = cfg.eos_token {
            if let Some(pos) = output.iter().position(|&t| t == eos) {
                output.truncate(pos + 1);
                break;
            }
        }
    }

    if output.len() > cfg.max_new_tokens {
        output.truncate(cfg.max_new_tokens);
    }
    metrics.tokens_generated = output.len() as u64;
    metrics.finish();
    Ok((output, metrics))
}

/// Vanilla token-by-token decoding with the same sampler discipline.
pub fn autoregressive_baseline(
    target: &ModelSpec,
    prompt: &[Token],
    cfg: &EngineConfig,
) -> Result<(Vec<Token>, Metrics)> {
    if prompt.is_empty() {
        return Err(Error::ConfigInvalid("prompt must be non-empty".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.sampler.seed);
    let mut metrics = Metrics::default();
    let mut committed = prompt.to_vec();
    let mut output = Vec::new();
    while output.len() < cfg.max_new_tokens {
        let dist = target.next_distribution(&committed);
        let tok = sample(&dist, &cfg.sampler, &mut rng);
        metrics.target_forward_passes += 1;
        metrics.tokens_generated += 1;
        committed.push(tok);
        output.push(tok);
        if Some(tok) == cfg.eos_token {
            break;
        }
    }
    metrics.finish();
    Ok((output, metrics))
}
