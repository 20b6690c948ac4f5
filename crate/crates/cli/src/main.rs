use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use ragboost_cli::commands::{
    cmd_build_index, cmd_evaluate, cmd_run, cmd_search, cmd_synthbench, cmd_train_retriever,
};
use ragboost_cli::config::EngineConfig;
use ragboost_cli::synthbench::SynthConfig;

#[derive(Parser)]
#[command(
    name = "ragboost",
    about = "Retrieval-augmented ASR post-processing: keyword retriever, vector index, hypothesis fusion, evaluation",
    version
)]
struct Cli {
    /// Engine config file (TOML). Built-in defaults apply when the default
    /// path does not exist.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the root seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Abort on the first malformed record instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dual-tower retriever on the configured corpus.
    TrainRetriever,
    /// Embed the lexicon and build the vector index.
    BuildIndex,
    /// Replay a stream event file through the engine.
    Run,
    /// Score final transcripts against manifest references.
    Evaluate,
    /// Generate the synthetic benchmark (corpus, lexicon, events, manifest).
    Synthbench {
        /// Keywords in the lexicon.
        #[arg(long, default_value_t = 500)]
        keywords: usize,
        /// Training samples per keyword.
        #[arg(long, default_value_t = 20)]
        samples_per_keyword: usize,
        /// Held-out retrieval queries.
        #[arg(long, default_value_t = 200)]
        queries: usize,
        /// Benchmark utterances.
        #[arg(long, default_value_t = 200)]
        utterances: usize,
        /// Word error rate of the acoustic stream.
        #[arg(long, default_value_t = 0.20)]
        wer_acoustic: f64,
        /// Word error rate of the llm stream.
        #[arg(long, default_value_t = 0.20)]
        wer_llm: f64,
        /// Word error rate of the rag-source stream.
        #[arg(long, default_value_t = 0.10)]
        wer_rag: f64,
        /// Corruption probability of keyword tokens.
        #[arg(long, default_value_t = 0.5)]
        keyword_corruption: f64,
        /// Per-frame feature noise.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// Query the index once and print the hits.
    Search {
        /// Query by keyword text (text tower).
        #[arg(long)]
        keyword: Option<String>,
        /// Query by feature file (speech tower).
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => EngineConfig::load(path)?,
        None => {
            let default_path = PathBuf::from("ragboost.toml");
            if default_path.exists() {
                EngineConfig::load(&default_path)?
            } else {
                EngineConfig::default()
            }
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::TrainRetriever => {
            let s = cmd_train_retriever(&cfg)?;
            println!(
                "trained {} steps; loss {} -> {}; checkpoint {}",
                s.steps,
                s.first_loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into()),
                s.final_loss.map(|l| format!("{l:.4}")).unwrap_or_else(|| "-".into()),
                s.checkpoint.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::BuildIndex => {
            let s = cmd_build_index(&cfg)?;
            println!(
                "indexed {} keywords ({} duplicates dropped) -> {}",
                s.entries,
                s.duplicates_dropped,
                s.index.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run => {
            let s = cmd_run(&cfg, cli.strict)?;
            println!(
                "processed {} events, wrote {} records to {}{}",
                s.events,
                s.outputs,
                s.outputs_path.display(),
                if s.skipped > 0 {
                    format!(" ({} skipped)", s.skipped)
                } else {
                    String::new()
                }
            );
            if s.skipped > 0 {
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate => {
            let s = cmd_evaluate(&cfg, cli.strict)?;
            println!(
                "scored {} utterances: WER {:.4}, CER {:.4}, SEM {}",
                s.utterances,
                s.wer,
                s.cer,
                s.mean_sem.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
            );
            println!(
                "reports: {} {}",
                s.report_json.display(),
                s.report_text.display()
            );
            if s.missing_references > 0 {
                eprintln!("{} outputs had no reference", s.missing_references);
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synthbench {
            keywords,
            samples_per_keyword,
            queries,
            utterances,
            wer_acoustic,
            wer_llm,
            wer_rag,
            keyword_corruption,
            noise,
        } => {
            let dims = cfg.retriever_dims();
            let synth = SynthConfig {
                seed: cfg.seed,
                n_keywords: keywords,
                samples_per_keyword,
                held_out_queries: queries,
                n_utterances: utterances,
                feat_dim: dims.feat_dim,
                wer_acoustic,
                wer_llm,
                wer_rag,
                keyword_corruption,
                noise,
                ..SynthConfig::default()
            };
            let metrics = cmd_synthbench(&cfg, &synth)?;
            println!(
                "benchmark written under {}: {} keywords, {} utterances",
                cfg.paths.out_dir.display(),
                keywords,
                metrics.utterances
            );
            for (source, wer) in &metrics.measured_wer {
                println!(
                    "  {source}: measured WER {wer:.4} (configured {:.2})",
                    metrics.configured_wer[source]
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Search { keyword, features, k } => {
            if k == 0 {
                bail!("--k must be at least 1");
            }
            let hits = cmd_search(&cfg, keyword.as_deref(), features.as_deref(), k)?;
            for h in hits {
                println!("{}\t{}\t{:.6}\t{}", h.rank, h.entry_id, h.score, h.keyword);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
