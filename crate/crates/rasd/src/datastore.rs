//! Exact suffix-match retrieval over a tokenized corpus.
//!
//! The index maps every n-gram of length `n_min..=n_max` to its occurrence
//! sites in corpus order. Retrieval walks suffix lengths from longest to
//! shortest, emitting the `cand_len` tokens after each hit, deduplicated, up
//! to `num_candidates` results.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::draft::{top_k_tokens, DraftResult};
use crate::error::{Error, Result};
use crate::model::GenerationState;
use crate::tree::Token;

#[derive(Debug, Clone, Copy)]
pub struct RetrievalConfig {
    pub n_max: usize,
    pub n_min: usize,
    /// Maximum number of candidates n.
    pub num_candidates: usize,
    /// Length of each candidate continuation l.
    pub cand_len: usize,
    pub pld_retry_depth: usize,
    pub pld_retry_k: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            n_max: 8,
            n_min: 1,
            num_candidates: 8,
            cand_len: 8,
            pld_retry_depth: 2,
            pld_retry_k: 3,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_min > self.n_max {
            return Err(Error::ConfigInvalid(format!(
                "need 1 <= n_min <= n_max, got {}..{}",
                self.n_min, self.n_max
            )));
        }
        if self.num_candidates < 1 || self.cand_len < 1 || self.pld_retry_k < 1 {
            return Err(Error::ConfigInvalid("num_candidates, cand_len, pld_retry_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ordered, deduplicated retrieved continuations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Vec<Token>>,
    /// Suffix length i that produced each candidate.
    pub match_len: Vec<usize>,
    /// Total occurrence count in the datastore of the matched n-gram.
    pub frequency: Vec<u64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn push_if_new(&mut self, cand: Vec<Token>, match_len: usize, frequency: u64) -> bool {
        if self.candidates.contains(&cand) {
            return false;
        }
        self.candidates.push(cand);
        self.match_len.push(match_len);
        self.frequency.push(frequency);
        true
    }

    /// Unions another set into this one, keeping existing entries first.
    pub fn union(&mut self, other: &CandidateSet) {
        for i in 0..other.len() {
            self.push_if_new(other.candidates[i].clone(), other.match_len[i], other.frequency[i]);
        }
    }
}

/// Tokenized corpus with an exact n-gram occurrence index.
#[derive(Debug, Clone)]
pub struct Datastore {
    pub sequences: Vec<Vec<Token>>,
    pub vocab_size: usize,
    /// n-gram -> (sequence id, end offset just past the n-gram), corpus order.
    index: HashMap<Vec<Token>, Vec<(usize, usize)>>,
    n_min: usize,
    n_max: usize,
}

pub fn build_datastore(
    corpus: &[Vec<Token>],
    vocab_size: usize,
    cfg: &RetrievalConfig,
) -> Result<Datastore> {
    cfg.validate()?;
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut index: HashMap<Vec<Token>, Vec<(usize, usize)>> = HashMap::new();
    for (sid, seq) in corpus.iter().enumerate() {
        for n in cfg.n_min..=cfg.n_max {
            if seq.len() < n {
                continue;
            }
            for start in 0..=seq.len() - n {
                let gram = seq[start..start + n].to_vec();
                index.entry(gram).or_default().push((sid, start + n));
            }
        }
    }
    Ok(Datastore {
        sequences: corpus.to_vec(),
        vocab_size,
        index,
        n_min: cfg.n_min,
        n_max: cfg.n_max,
    })
}

impl Datastore {
    pub fn key_count(&self) -> usize {
        self.index.len()
    }

    pub fn sites(&self, gram: &[Token]) -> &[(usize, usize)] {
        self.index.get(gram).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Suffix-match retrieval: longest suffix first, continuation of `cand_len`
/// tokens per hit, stopping at exactly `num_candidates` distinct results.
pub fn retrieve_suffix_match(
    store: &Datastore,
    query: &[Token],
    cfg: &RetrievalConfig,
) -> Result<CandidateSet> {
    cfg.validate()?;
    if query.len() < cfg.n_min {
        return Err(Error::QueryTooShort { got: query.len(), min: cfg.n_min });
    }
    debug_assert!(cfg.n_min >= store.n_min && cfg.n_max <= store.n_max, "index covers query lengths");
    let mut set = CandidateSet::default();
    let top = cfg.n_max.min(query.len());
    for i in (cfg.n_min..=top).rev() {
        if set.len() >= cfg.num_candidates {
            break;
        }
        let suffix = &query[query.len() - i..];
        let sites = store.sites(suffix);
        let freq = sites.len() as u64;
        for &(sid, end) in sites {
            let seq = &store.sequences[sid];
            if end >= seq.len() {
                continue; // nothing follows; skip rather than emit empty
            }
            let stop = (end + cfg.cand_len).min(seq.len());
            set.push_if_new(seq[end..stop].to_vec(), i, freq);
            if set.len() >= cfg.num_candidates {
                break;
            }
        }
    }
    Ok(set)
}

/// Index-free transliteration of the same retrieval loop; the oracle that
/// pins `retrieve_suffix_match`'s contract.
pub fn naive_scan_oracle(
    corpus: &[Vec<Token>],
    query: &[Token],
    cfg: &RetrievalConfig,
) -> Result<CandidateSet> {
    cfg.validate()?;
    if query.len() < cfg.n_min {
        return Err(Error::QueryTooShort { got: query.len(), min: cfg.n_min });
    }
    let mut set = CandidateSet::default();
    let top = cfg.n_max.min(query.len());
    for i in (cfg.n_min..=top).rev() {
        if set.len() >= cfg.num_candidates {
            break;
        }
        let suffix = &query[query.len() - i..];
        let mut freq = 0u64;
        for seq in corpus {
            if seq.len() < i {
                continue;
            }
            for start in 0..=seq.len() - i {
                if &seq[start..start + i] == suffix {
                    freq += 1;
                }
            }
        }
        for seq in corpus {
            if seq.len() < i {
                continue;
            }
            for start in 0..=seq.len() - i {
                if &seq[start..start + i] != suffix {
                    continue;
                }
                let end = start + i;
                if end >= seq.len() {
                    continue;
                }
                let stop = (end + cfg.cand_len).min(seq.len());
                set.push_if_new(seq[end..stop].to_vec(), i, freq);
                if set.len() >= cfg.num_candidates {
                    break;
                }
            }
            if set.len() >= cfg.num_candidates {
                break;
            }
        }
    }
    Ok(set)
}

/// Prompt-lookup retrieval against the live context, with iterative retry:
/// when the plain query misses, the query is extended with draft-proposed
/// tokens (top-k of P1 first, then draft-tree children at deeper levels) and
/// any hits are re-rooted at y0 by prefixing the extension.
pub fn pld_retrieve(
    state: &GenerationState,
    y0: Token,
    draft_result: &DraftResult,
    vocab_size: usize,
    cfg: &RetrievalConfig,
) -> Result<CandidateSet> {
    let mut query: Vec<Token> = state.context.clone();
    query.push(y0);
    if query.len() < cfg.n_min {
        return Ok(CandidateSet::default());
    }
    let store = build_datastore(std::slice::from_ref(&query), vocab_size, cfg)?;
    let set = retrieve_suffix_match(&store, &query, cfg)?;
    if !set.is_empty() || cfg.pld_retry_depth == 0 {
        return Ok(set);
    }

    // Retry: walk draft proposals in probability order, extending the query
    // one token at a time up to pld_retry_depth.
    let k = cfg.pld_retry_k.min(vocab_size);
    let first = top_k_tokens(&draft_result.first_distribution, k)?;
    retry_level(&store, &query, &[], &first, draft_result, cfg, 1)
}

fn retry_level(
    store: &Datastore,
    base_query: &[Token],
    prefix: &[Token],
    tokens: &[Token],
    draft_result: &DraftResult,
    cfg: &RetrievalConfig,
    depth: usize,
) -> Result<CandidateSet> {
    for &t in tokens {
        let mut ext_prefix = prefix.to_vec();
        ext_prefix.push(t);
        let mut query = base_query.to_vec();
        query.extend(&ext_prefix);
        let found = retrieve_suffix_match(store, &query, cfg)?;
        if !found.is_empty() {
            let mut out = CandidateSet::default();
            for i in 0..found.len() {
                let mut cand = ext_prefix.clone();
                cand.extend(&found.candidates[i]);
                cand.truncate(cfg.cand_len);
                out.push_if_new(cand, found.match_len[i], found.frequency[i]);
            }
            return Ok(out);
        }
        if depth < cfg.pld_retry_depth {
            // deeper retries follow the draft tree under this token
            if let Some(node) = find_child(draft_result, &ext_prefix) {
                let kids: Vec<Token> = draft_result
                    .tree
                    .children(node)
                    .iter()
                    .take(cfg.pld_retry_k)
                    .map(|&c| draft_result.tree.node(c).token)
                    .collect();
                let deeper = retry_level(store, base_query, &ext_prefix, &kids, draft_result, cfg, depth + 1)?;
                if !deeper.is_empty() {
                    return Ok(deeper);
                }
            }
        }
    }
    Ok(CandidateSet::default())
}

fn find_child(draft_result: &DraftResult, path: &[Token]) -> Option<usize> {
    let mut node = 0usize;
    for &tok in path {
        let next = draft_result
            .tree
            .children(node)
            .iter()
            .copied()
            .find(|&c| draft_result.tree.node(c).token == tok)?;
        node = next;
    }
    Some(node)
}

/// Corpus retrieval in the REST style: one suffix-match call per draft phase,
/// candidates carrying the matched n-gram's occurrence frequency for the
/// prefix filter downstream.
pub fn rest_retrieve(
    store: &Datastore,
    state: &GenerationState,
    y0: Token,
    cfg: &RetrievalConfig,
) -> Result<CandidateSet> {
    let mut query = state.context.clone();
    query.push(y0);
    if query.len() < cfg.n_min {
        return Ok(CandidateSet::default());
    }
    retrieve_suffix_match(store, &query, cfg)
}

// --- persistence -----------------------------------------------------------
//
// magic "RASD" | version u32 LE | vocab_size u32 LE | seq count u64 LE |
// per sequence: len u64 LE, tokens u32 LE | checksum u64 LE (byte sum of
// everything preceding, mod 2^64)

const MAGIC: &[u8; 4] = b"RASD";
const FORMAT_VERSION: u32 = 1;

pub fn save_datastore<W: Write>(store: &Datastore, sink: &mut W) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.vocab_size as u32).to_le_bytes());
    buf.extend_from_slice(&(store.sequences.len() as u64).to_le_bytes());
    for seq in &store.sequences {
        buf.extend_from_slice(&(seq.len() as u64).to_le_bytes());
        for t in seq {
            buf.extend_from_slice(&t.0.to_le_bytes());
        }
    }
    let checksum: u64 = buf.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64));
    buf.extend_from_slice(&checksum.to_le_bytes());
    sink.write_all(&buf)?;
    Ok(())
}

pub fn load_datastore<R: Read>(source: &mut R, cfg: &RetrievalConfig) -> Result<Datastore> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    if buf.len() < 4 + 4 + 4 + 8 + 8 || &buf[0..4] != MAGIC {
        return Err(Error::FormatVersionMismatch(0));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch(version));
    }
    let body = &buf[..buf.len() - 8];
    let stored = u64::from_le_bytes(buf[buf.len() - 8..].try_into().unwrap());
    let computed: u64 = body.iter().fold(0u64, |acc, &b| acc.wrapping_add(b as u64));
    if stored != computed {
        return Err(Error::ChecksumMismatch);
    }
    let vocab_size = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let mut pos = 20usize;
    let mut sequences = Vec::with_capacity(count);
    for _ in 0..count {
        if pos + 8 > body.len() {
            return Err(Error::ChecksumMismatch);
        }
        let len = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()) as usize;
        pos += 8;
        if pos + 4 * len > body.len() {
            return Err(Error::ChecksumMismatch);
        }
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            seq.push(Token(u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap())));
            pos += 4;
        }
        sequences.push(seq);
    }
    // the index is rebuilt, not serialized
    build_datastore(&sequences, vocab_size, cfg)
}
