//! Benchmark harness: corpus synthesis, arm execution, ablation sweeps, and
//! machine-readable reports.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::datastore::{build_datastore, Datastore};
use crate::engine::{
    autoregressive_baseline, decode, speedup_proxy, CostModel, EngineConfig, Metrics,
    RetrievalMode,
};
use crate::error::{Error, Result};
use crate::model::{train_markov, ModelSpec};
use crate::tree::Token;

// --- corpus synthesis ------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub vocab_size: usize,
    /// Markov order of the random source.
    pub source_order: usize,
    /// Total tokens generated.
    pub length: usize,
    /// Target fraction of text composed of re-sampled earlier spans.
    pub repetition_rate: f64,
    pub seed: u64,
}

const LINE_LEN: usize = 256;
const SPLICE_SPAN: usize = 16;

fn fnv1a(ctx: &[Token], seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ seed;
    for t in ctx {
        h ^= t.0 as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Deterministically generates a corpus from a seeded random Markov source,
/// splicing repeated earlier spans at the configured rate.
pub fn synth_corpus(spec: &SyntheticCorpusSpec) -> Vec<Vec<Token>> {
    assert!(spec.vocab_size >= 2, "vocab_size must be >= 2");
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let mut stream: Vec<Token> = Vec::with_capacity(spec.length);
    // splice-start probability chosen so the expected token fraction coming
    // from splices matches repetition_rate
    let r = spec.repetition_rate.clamp(0.0, 1.0);
    let span = SPLICE_SPAN as f64;
    let p_splice = if r > 0.0 { r / (r + span * (1.0 - r)) } else { 0.0 };

    while stream.len() < spec.length {
        let u: f64 = rng.random();
        if u < p_splice && stream.len() > 2 * SPLICE_SPAN {
            let len = SPLICE_SPAN / 2 + rng.random_range(0..SPLICE_SPAN);
            let start = rng.random_range(0..stream.len() - len);
            for i in start..start + len {
                stream.push(stream[i]);
                if stream.len() >= spec.length {
                    break;
                }
            }
        } else {
            // peaky hashed conditional: the source prefers one token per
            // context, so low-order table models can learn it
            let from = stream.len().saturating_sub(spec.source_order);
            let ctx = &stream[from..];
            let preferred = (fnv1a(ctx, spec.seed) % spec.vocab_size as u64) as u32;
            let v: f64 = rng.random();
            let tok = if v < 0.85 {
                Token(preferred)
            } else {
                Token(rng.random_range(0..spec.vocab_size as u32))
            };
            stream.push(tok);
        }
    }
    stream.chunks(LINE_LEN).map(|c| c.to_vec()).collect()
}

// --- corpus file io --------------------------------------------------------

/// One sequence per line, space-separated decimal token ids.
pub fn write_corpus<W: Write>(corpus: &[Vec<Token>], sink: &mut W) -> Result<()> {
    for seq in corpus {
        let line: Vec<String> = seq.iter().map(|t| t.0.to_string()).collect();
        writeln!(sink, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_corpus<R: BufRead>(source: R) -> Result<Vec<Vec<Token>>> {
    let mut corpus = Vec::new();
    for line in source.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut seq = Vec::new();
        for field in line.split_whitespace() {
            let id: u32 = field
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("bad token id {field:?}")))?;
            seq.push(Token(id));
        }
        corpus.push(seq);
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<Vec<Token>>> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}

/// Maps the bytes of a UTF-8 text file onto a 256-token vocabulary.
pub fn tokens_from_text(text: &[u8]) -> Vec<Token> {
    text.iter().map(|&b| Token(b as u32)).collect()
}

pub fn corpus_vocab_size(corpus: &[Vec<Token>]) -> usize {
    corpus
        .iter()
        .flat_map(|s| s.iter())
        .map(|t| t.0 as usize + 1)
        .max()
        .unwrap_or(2)
        .max(2)
}

// --- bench -----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Baseline,
    DraftOnly,
    RetrievalOnly,
    Rasd,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Arm::Baseline => "baseline",
            Arm::DraftOnly => "draft-only",
            Arm::RetrievalOnly => "retrieval-only",
            Arm::Rasd => "rasd",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct BenchParams {
    pub prompt_count: usize,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub target_order: usize,
    pub draft_order: usize,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    pub engine: EngineConfig,
    pub cost: CostModel,
    pub arms: Vec<Arm>,
    /// When true the REST store also indexes the held-out prompt slices.
    pub in_domain: bool,
    /// Fraction of the store corpus that is indexed; models and prompts are
    /// unaffected so store-size sweeps vary only the datastore.
    pub store_fraction: f64,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            prompt_count: 8,
            prompt_len: 32,
            gen_len: 64,
            target_order: 3,
            draft_order: 1,
            alpha: 0.05,
            seeds: vec![1],
            engine: EngineConfig::default(),
            cost: CostModel::default(),
            arms: vec![Arm::Baseline, Arm::DraftOnly, Arm::RetrievalOnly, Arm::Rasd],
            in_domain: true,
            store_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmRow {
    pub arm: Arm,
    pub seed: u64,
    pub tau: f64,
    pub sr_proxy: f64,
    pub target_forward_passes: u64,
    pub draft_forward_passes: u64,
    pub retrieval_calls: u64,
    pub tokens_generated: u64,
    pub verified_node_total: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub mean_tau: f64,
    pub stddev_tau: f64,
    pub mean_sr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<ArmRow>,
    pub summary: Vec<ArmSummary>,
    /// Present for greedy runs: whether every arm reproduced the baseline
    /// text on every prompt.
    pub losslessness: Option<bool>,
    /// (arm_a, arm_b, mean_tau_a - mean_tau_b) for every arm pair.
    pub tau_deltas: Vec<(Arm, Arm, f64)>,
}

fn arm_config(arm: Arm, base: &EngineConfig, seed: u64) -> EngineConfig {
    let mut cfg = base.clone();
    cfg.sampler.seed = seed;
    match arm {
        Arm::Baseline => {}
        Arm::DraftOnly => {
            cfg.retrieval_mode = RetrievalMode::None;
            cfg.draft_enabled = true;
        }
        Arm::RetrievalOnly => {
            cfg.draft_enabled = false;
            if cfg.retrieval_mode == RetrievalMode::None {
                cfg.retrieval_mode = RetrievalMode::Pld;
            }
        }
        Arm::Rasd => {
            cfg.draft_enabled = true;
            if cfg.retrieval_mode == RetrievalMode::None {
                cfg.retrieval_mode = RetrievalMode::Pld;
            }
        }
    }
    cfg
}

/// Training/held-out split, trained models, prompts, and the store.
pub struct BenchSetup {
    pub target: ModelSpec,
    pub draft: ModelSpec,
    pub store: Datastore,
    pub prompts: Vec<Vec<Token>>,
    pub vocab_size: usize,
}

pub fn prepare(corpus: &[Vec<Token>], params: &BenchParams) -> Result<BenchSetup> {
    let vocab_size = corpus_vocab_size(corpus);
    let held_out = (corpus.len() / 10).max(1).min(corpus.len().saturating_sub(1)).max(1);
    let split = corpus.len() - held_out.min(corpus.len() - 1).max(0);
    let (train, heldout) = if corpus.len() > 1 {
        corpus.split_at(split)
    } else {
        (corpus, corpus)
    };
    let target = train_markov(train, params.target_order, vocab_size, params.alpha)?;
    let draft = train_markov(train, params.draft_order, vocab_size, params.alpha)?;
    let mut store_corpus: Vec<Vec<Token>> =
        if params.in_domain { corpus.to_vec() } else { train.to_vec() };
    if params.store_fraction < 1.0 {
        let keep = ((store_corpus.len() as f64 * params.store_fraction).ceil() as usize)
            .clamp(1, store_corpus.len());
        store_corpus.truncate(keep);
    }
    let store = build_datastore(&store_corpus, vocab_size, &params.engine.retrieval)?;

    let mut prompts = Vec::new();
    let mut i = 0usize;
    while prompts.len() < params.prompt_count {
        let seq = &heldout[i % heldout.len()];
        let offset = (prompts.len() / heldout.len()) * params.prompt_len;
        if seq.len() >= params.prompt_len {
            let start = offset.min(seq.len() - params.prompt_len);
            prompts.push(seq[start..start + params.prompt_len].to_vec());
        } else {
            prompts.push(seq.clone());
        }
        i += 1;
    }
    Ok(BenchSetup { target, draft, store, prompts, vocab_size })
}

pub fn run_bench(corpus: &[Vec<Token>], params: &BenchParams) -> Result<BenchReport> {
    let setup = prepare(corpus, params)?;
    let mut rows = Vec::new();
    let greedy = params.engine.sampler.temperature == 0.0;
    let mut lossless = true;

    for &seed in &params.seeds {
        // baseline texts for the losslessness check, one per prompt
        let mut baseline_out: Vec<Vec<Token>> = Vec::new();
        for arm in &params.arms {
            let cfg = {
                let mut c = arm_config(*arm, &params.engine, seed);
                c.max_new_tokens = params.gen_len;
                c
            };
            let mut agg = Metrics::default();
            for (pi, prompt) in setup.prompts.iter().enumerate() {
                let (out, m) = match arm {
                    Arm::Baseline => autoregressive_baseline(&setup.target, prompt, &cfg)?,
                    _ => decode(&setup.target, &setup.draft, Some(&setup.store), prompt, &cfg)?,
                };
                if greedy {
                    match arm {
                        Arm::Baseline => baseline_out.push(out),
                        _ => {
                            // only checkable when the baseline arm ran first
                            if pi < baseline_out.len() && out != baseline_out[pi] {
                                lossless = false;
                            }
                        }
                    }
                }
                agg.target_forward_passes += m.target_forward_passes;
                agg.draft_forward_passes += m.draft_forward_passes;
                agg.retrieval_calls += m.retrieval_calls;
                agg.tokens_generated += m.tokens_generated;
                agg.verified_node_total += m.verified_node_total;
                agg.per_step_accepts.extend(m.per_step_accepts);
            }
            agg.tau = agg.tokens_generated as f64 / agg.target_forward_passes as f64;
            let sr = speedup_proxy(&agg, &params.cost);
            rows.push(ArmRow {
                arm: *arm,
                seed,
                tau: agg.tau,
                sr_proxy: sr,
                target_forward_passes: agg.target_forward_passes,
                draft_forward_passes: agg.draft_forward_passes,
                retrieval_calls: agg.retrieval_calls,
                tokens_generated: agg.tokens_generated,
                verified_node_total: agg.verified_node_total,
            });
        }
    }

    let mut summary = Vec::new();
    for arm in &params.arms {
        let taus: Vec<f64> = rows.iter().filter(|r| r.arm == *arm).map(|r| r.tau).collect();
        let srs: Vec<f64> = rows.iter().filter(|r| r.arm == *arm).map(|r| r.sr_proxy).collect();
        let mean = taus.iter().sum::<f64>() / taus.len() as f64;
        let var = taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / taus.len() as f64;
        summary.push(ArmSummary {
            arm: *arm,
            mean_tau: mean,
            stddev_tau: var.sqrt(),
            mean_sr: srs.iter().sum::<f64>() / srs.len() as f64,
        });
    }

    let mut tau_deltas = Vec::new();
    for a in &summary {
        for b in &summary {
            if a.arm != b.arm {
                tau_deltas.push((a.arm, b.arm, a.mean_tau - b.mean_tau));
            }
        }
    }

    Ok(BenchReport {
        rows,
        summary,
        losslessness: if greedy && params.arms.contains(&Arm::Baseline) {
            Some(lossless)
        } else {
            None
        },
        tau_deltas,
    })
}

// --- ablation --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Prune,
    Fusion,
    CandLen,
    StoreSize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub report: BenchReport,
}

/// Re-runs the bench varying exactly one axis. `StoreSize` truncates the
/// corpus to the given fraction before the store is built, the desk-scale
/// analogue of sweeping datastore size.
pub fn run_ablation(
    corpus: &[Vec<Token>],
    params: &BenchParams,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<AblationRow>> {
    let mut out = Vec::new();
    for &v in values {
        let mut p = params.clone();
        let corpus_ref: &[Vec<Token>] = match axis {
            SweepAxis::Prune => {
                p.engine.prune.enabled = v != 0.0;
                corpus
            }
            SweepAxis::Fusion => {
                p.engine.fusion_enabled = v != 0.0;
                corpus
            }
            SweepAxis::CandLen => {
                p.engine.retrieval.cand_len = v as usize;
                corpus
            }
            SweepAxis::StoreSize => {
                p.store_fraction = v;
                corpus
            }
        };
        let report = run_bench(corpus_ref, &p)?;
        out.push(AblationRow { axis, value: v, report });
    }
    Ok(out)
}

/// Plain-text table mirroring the report, one line per arm summary.
pub fn format_summary(report: &BenchReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<16} {:>8} {:>8} {:>8}\n",
        "arm", "tau", "sd", "SR"
    ));
    for row in &report.summary {
        s.push_str(&format!(
            "{:<16} {:>8.3} {:>8.3} {:>8.3}\n",
            row.arm.to_string(),
            row.mean_tau,
            row.stddev_tau,
            row.mean_sr
        ));
    }
    if let Some(l) = report.losslessness {
        s.push_str(&format!("losslessness: {}\n", if l { "pass" } else { "FAIL" }));
    }
    s
}
