use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use curate::clean::CleanConfig;
use curate::fuzzy::FuzzyConfig;
use curate::mix::MixSpec;
use curate::pairs::{PairConfig, StrategyChoice, TokenizerKind};
use curate::pipeline::{self, PipelineConfig, Stage};
use curate::quality::{ClassifierKind, QualityConfig};
use curate::semantic::{self, EmbedderKind, SemanticConfig};
use curate::sketch::ShingleUnit;
use curate::{Error, Result, RunManifest, Source};

#[derive(Parser)]
#[command(name = "curate", version, about = "Corpus curation pipeline")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Assign sequential ids to a raw JSONL corpus of {text, source?, meta?}.
    Ingest {
        #[command(flatten)]
        io: Io,
        /// Source label for lines without one.
        #[arg(long)]
        source: Option<String>,
        #[arg(long, default_value_t = 1)]
        start_id: u64,
    },
    /// Normalize text, strip URLs/DOIs/citations, repair LaTeX delimiters.
    Clean {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = curate::clean::DEFAULT_MIN_CHARS)]
        min_chars: usize,
    },
    /// Keep documents the classifier labels high or medium.
    FilterQuality {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value = "heuristic")]
        classifier: ClassifierKind,
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Remove byte-identical texts, keeping the smallest id.
    DedupExact {
        #[command(flatten)]
        io: Io,
        /// JSONL of {dropped, retained, digest}.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// MinHash/LSH near-duplicate removal.
    DedupFuzzy {
        #[command(flatten)]
        io: Io,
        /// JSONL of duplicate components.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = curate::sketch::DEFAULT_SHINGLE_K)]
        k: usize,
        #[arg(long, default_value = "word")]
        unit: ShingleUnit,
        #[arg(long, default_value_t = curate::sketch::DEFAULT_BANDS)]
        bands: usize,
        #[arg(long, default_value_t = curate::sketch::DEFAULT_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = curate::fuzzy::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = curate::fuzzy::DEFAULT_ANCHOR_FRACTION)]
        anchor_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Confirm candidates with exact shingle Jaccard.
        #[arg(long)]
        exact_refine: bool,
    },
    /// Keep documents similar to at least one reference query.
    FilterSemantic {
        #[arg(long, required_unless_present = "emit_queries")]
        input: Option<PathBuf>,
        #[arg(long, required_unless_present = "emit_queries")]
        output: Option<PathBuf>,
        /// JSONL of per-document scores.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = semantic::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value = "test")]
        embedder: EmbedderKind,
        #[arg(long, default_value_t = semantic::DEFAULT_DIMENSION)]
        dimension: usize,
        #[arg(long, default_value_t = 0)]
        embedder_seed: u64,
        /// JSONL of {topic, query}; built-in topics when absent.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        /// Write the built-in query set to this file and exit.
        #[arg(long, conflicts_with_all = ["input", "output"])]
        emit_queries: Option<PathBuf>,
    },
    /// Chunk documents and build input/output training pairs.
    MakePairs {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value = "auto")]
        strategy: StrategyChoice,
        #[arg(long, default_value_t = curate::pairs::DEFAULT_CHUNK_BUDGET)]
        chunk_budget: usize,
        #[arg(long, default_value_t = curate::pairs::DEFAULT_MAX_PARAGRAPH)]
        max_paragraph: usize,
        #[arg(long, default_value_t = curate::pairs::DEFAULT_PAIR_BUDGET)]
        pair_budget: usize,
        #[arg(long, default_value_t = curate::pairs::DEFAULT_SIDE_TARGET)]
        side_target: usize,
        #[arg(long, default_value = "whitespace")]
        tokenizer: TokenizerKind,
        #[arg(long)]
        tokenizer_endpoint: Option<String>,
    },
    /// Interleave per-source pair files by weight.
    Mix {
        /// JSON mix spec: {seed, total, entries: [{source, weight, path}]}.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Count documents or pairs and their tokens.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "whitespace")]
        tokenizer: TokenizerKind,
        #[arg(long)]
        tokenizer_endpoint: Option<String>,
    },
    /// Run the configured pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Rerun starting at this stage, reusing earlier outputs.
        #[arg(long)]
        from: Option<Stage>,
    },
}

fn report(manifest: &RunManifest) {
    eprintln!(
        "{}: {} in, {} out, {} dropped",
        manifest.stage, manifest.docs_in, manifest.docs_out, manifest.docs_dropped
    );
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    }
    match cli.command {
        Command::Ingest {
            io,
            source,
            start_id,
        } => {
            let source = source.map(|s| Source::parse(&s));
            report(&curate::model::ingest(&io.input, &io.output, source.as_ref(), start_id)?)
        }
        Command::Clean { io, min_chars } => {
            report(&pipeline::run_clean(&io.input, &io.output, &CleanConfig { min_chars })?)
        }
        Command::FilterQuality {
            io,
            classifier,
            endpoint,
        } => {
            let cfg = QualityConfig {
                classifier,
                endpoint,
            };
            report(&pipeline::run_quality(&io.input, &io.output, &cfg)?)
        }
        Command::DedupExact { io, report: r } => {
            report(&pipeline::run_exact(&io.input, &io.output, r.as_deref())?)
        }
        Command::DedupFuzzy {
            io,
            report: r,
            k,
            unit,
            bands,
            rows,
            tau,
            anchor_fraction,
            seed,
            exact_refine,
        } => {
            let cfg = FuzzyConfig {
                k,
                unit,
                bands,
                rows,
                tau,
                anchor_fraction,
                seed,
                exact_refine,
            };
            cfg.validate()?;
            report(&pipeline::run_fuzzy(&io.input, &io.output, &cfg, r.as_deref())?)
        }
        Command::FilterSemantic {
            input,
            output,
            report: r,
            threshold,
            embedder,
            dimension,
            embedder_seed,
            queries,
            endpoint,
            model,
            emit_queries,
        } => {
            if let Some(path) = emit_queries {
                let mut w = curate::model::JsonlWriter::create(&path)?;
                for q in semantic::default_queries() {
                    w.write(&q)?;
                }
                w.finish()?;
                return Ok(());
            }
            let cfg = SemanticConfig {
                threshold,
                embedder,
                dimension,
                embedder_seed,
                endpoint,
                model,
                queries,
                ..SemanticConfig::default()
            };
            cfg.validate()?;
            let (input, output) = (input.expect("required"), output.expect("required"));
            report(&pipeline::run_semantic(&input, &output, &cfg, r.as_deref())?)
        }
        Command::MakePairs {
            io,
            strategy,
            chunk_budget,
            max_paragraph,
            pair_budget,
            side_target,
            tokenizer,
            tokenizer_endpoint,
        } => {
            let cfg = PairConfig {
                strategy,
                chunk_budget,
                max_paragraph,
                pair_budget,
                side_target,
                tokenizer,
                tokenizer_endpoint,
            };
            cfg.validate()?;
            report(&pipeline::run_pairs(&io.input, &io.output, &cfg)?.0)
        }
        Command::Mix { spec, output } => {
            let spec = MixSpec::load(&spec)?;
            report(&pipeline::run_mix(&spec, &output)?)
        }
        Command::Stats {
            input,
            tokenizer,
            tokenizer_endpoint,
        } => {
            let cfg = PairConfig {
                tokenizer,
                tokenizer_endpoint,
                ..PairConfig::default()
            };
            let tc = cfg.build_tokenizer()?;
            let stats = pipeline::stats(&input, tc.as_ref())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&stats).expect("stats serialize")
            );
        }
        Command::Run { config, from } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if cli.workers.is_some() {
                cfg.workers = cli.workers;
            }
            for m in pipeline::run_pipeline(&cfg, from)? {
                report(&m);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
