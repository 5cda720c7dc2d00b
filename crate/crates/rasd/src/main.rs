use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rasd::datastore::{build_datastore, load_datastore, save_datastore, RetrievalConfig};
use rasd::draft::DraftConfig;
use rasd::engine::{CostModel, EngineConfig, RetrievalMode};
use rasd::model::SamplerConfig;
use rasd::harness::{
    format_summary, read_corpus_file, run_ablation, run_bench, synth_corpus, write_corpus, Arm,
    BenchParams, SweepAxis, SyntheticCorpusSpec,
};
use rasd::retrieval_tree::PruneConfig;

#[derive(Parser)]
#[command(name = "rasd", about = "Retrieval-augmented speculative decoding bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Pld,
    Rest,
    Both,
}

impl From<ModeArg> for RetrievalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::None => RetrievalMode::None,
            ModeArg::Pld => RetrievalMode::Pld,
            ModeArg::Rest => RetrievalMode::Rest,
            ModeArg::Both => RetrievalMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Prune,
    Fusion,
    CandLen,
    StoreSize,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 64)]
    max_new_tokens: usize,
    #[arg(long, value_enum, default_value = "pld")]
    retrieval_mode: ModeArg,
    /// Disable retrieval-tree pruning by the draft first-token distribution.
    #[arg(long)]
    no_prune: bool,
    #[arg(long, default_value_t = 8)]
    prune_k: usize,
    /// Stack draft and retrieval trees without merging shared prefixes.
    #[arg(long)]
    no_fuse: bool,
    #[arg(long, default_value_t = 8)]
    cand_len: usize,
    #[arg(long, default_value_t = 8)]
    n_max: usize,
    #[arg(long, default_value_t = 1)]
    n_min: usize,
    #[arg(long, default_value_t = 8)]
    num_candidates: usize,
    #[arg(long, default_value_t = 6)]
    draft_depth: usize,
    #[arg(long, default_value_t = 8)]
    draft_branch: usize,
    #[arg(long, default_value_t = 60)]
    draft_total: usize,
}

impl EngineArgs {
    fn to_config(&self, seed: u64) -> EngineConfig {
        EngineConfig {
            draft: DraftConfig {
                max_depth: self.draft_depth,
                branch_k: self.draft_branch,
                total_nodes: self.draft_total,
                ..DraftConfig::default()
            },
            retrieval: RetrievalConfig {
                n_max: self.n_max,
                n_min: self.n_min,
                num_candidates: self.num_candidates,
                cand_len: self.cand_len,
                ..RetrievalConfig::default()
            },
            prune: PruneConfig { top_k: self.prune_k, enabled: !self.no_prune },
            fusion_enabled: !self.no_fuse,
            retrieval_mode: self.retrieval_mode.into(),
            sampler: SamplerConfig { temperature: self.temperature, seed },
            max_new_tokens: self.max_new_tokens,
            ..EngineConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it to a file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        vocab: usize,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 100_000)]
        length: usize,
        #[arg(long, default_value_t = 0.5)]
        repetition_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a retrieval datastore from a corpus file.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 8)]
        n_max: usize,
        #[arg(long, default_value_t = 1)]
        n_min: usize,
    },
    /// Run the benchmark arms and report tau / speedup proxies.
    Bench {
        #[arg(long)]
        corpus: PathBuf,
        /// Optional prebuilt datastore; the store is built from the corpus
        /// when absent.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        prompts: usize,
        #[arg(long, default_value_t = 32)]
        prompt_len: usize,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Sweep one configuration axis and report per-value results.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated values; booleans as 0/1, cand_len as integers,
        /// store_size as fractions in (0, 1].
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        prompts: usize,
        #[arg(long, default_value_t = 32)]
        prompt_len: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
}

fn run(cli: Cli) -> rasd::Result<()> {
    match cli.command {
        Command::Synth { out, vocab, order, length, repetition_rate, seed } => {
            let corpus = synth_corpus(&SyntheticCorpusSpec {
                vocab_size: vocab,
                source_order: order,
                length,
                repetition_rate,
                seed,
            });
            let mut file = std::fs::File::create(&out)?;
            write_corpus(&corpus, &mut file)?;
            eprintln!("wrote {} sequences to {}", corpus.len(), out.display());
        }
        Command::Build { corpus, store, n_max, n_min } => {
            let seqs = read_corpus_file(&corpus)?;
            let vocab = rasd::harness::corpus_vocab_size(&seqs);
            let cfg = RetrievalConfig { n_max, n_min, ..RetrievalConfig::default() };
            let ds = build_datastore(&seqs, vocab, &cfg)?;
            let mut file = std::fs::File::create(&store)?;
            save_datastore(&ds, &mut file)?;
            eprintln!("indexed {} n-gram keys to {}", ds.key_count(), store.display());
        }
        Command::Bench { corpus, store, prompts, prompt_len, seeds, report, engine } => {
            let seqs = read_corpus_file(&corpus)?;
            if let Some(path) = &store {
                // validate the prebuilt store loads; benchmarking still
                // indexes the corpus itself so arms share one vocabulary
                let mut file = std::fs::File::open(path)?;
                load_datastore(&mut file, &engine.to_config(0).retrieval)?;
            }
            let params = BenchParams {
                prompt_count: prompts,
                prompt_len,
                gen_len: engine.max_new_tokens,
                seeds,
                engine: engine.to_config(0),
                cost: CostModel::default(),
                ..BenchParams::default()
            };
            let result = run_bench(&seqs, &params)?;
            print!("{}", format_summary(&result));
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&result)
                    .map_err(|e| rasd::Error::ConfigInvalid(e.to_string()))?;
                std::fs::write(path, json)?;
            }
        }
        Command::Ablate { corpus, axis, values, prompts, prompt_len, seeds, report, engine } => {
            if values.is_empty() {
                return Err(rasd::Error::ConfigInvalid("--values must be non-empty".into()));
            }
            let seqs = read_corpus_file(&corpus)?;
            let axis = match axis {
                AxisArg::Prune => SweepAxis::Prune,
                AxisArg::Fusion => SweepAxis::Fusion,
                AxisArg::CandLen => SweepAxis::CandLen,
                AxisArg::StoreSize => SweepAxis::StoreSize,
            };
            let params = BenchParams {
                prompt_count: prompts,
                prompt_len,
                gen_len: engine.max_new_tokens,
                seeds,
                engine: engine.to_config(0),
                arms: vec![Arm::RetrievalOnly, Arm::Rasd],
                ..BenchParams::default()
            };
            let rows = run_ablation(&seqs, &params, axis, &values)?;
            for row in &rows {
                println!("--- {:?} = {} ---", row.axis, row.value);
                print!("{}", format_summary(&row.report));
            }
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&rows)
                    .map_err(|e| rasd::Error::ConfigInvalid(e.to_string()))?;
                std::fs::write(path, json)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ rasd::Error::InvariantBreach(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
