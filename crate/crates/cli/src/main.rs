use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use structalign::experiment::{
    format_table, run_eval, run_gen_synth, run_infer, run_ppr, run_train, Ablation,
    ExperimentConfig,
};
use structalign::Error;

/// Structure-only entity alignment with dangling-entity detection.
#[derive(Parser)]
#[command(name = "structalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dot-path override, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AblationFlags {
    /// Drop the higher-order structural term from the similarity.
    #[arg(long)]
    no_hos: bool,
    /// Skip CSLS rescaling.
    #[arg(long)]
    no_csls: bool,
}

impl From<&AblationFlags> for Ablation {
    fn from(f: &AblationFlags) -> Self {
        Ablation {
            no_hos: f.no_hos,
            no_csls: f.no_csls,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic corpus to dataset.path.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Train an encoder; writes checkpoints and telemetry to output_dir.
    Train {
        #[command(flatten)]
        common: Common,
        /// Retrain even if output_dir already holds this config's run.
        #[arg(long)]
        force: bool,
    },
    /// Score a checkpoint under both evaluation protocols.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (default: output_dir/model.bin).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
        /// Print the JSON result instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// List the highest personalized PageRank values from one entity.
    Ppr {
        #[command(flatten)]
        common: Common,
        /// Entity URI as it appears in the dataset.
        #[arg(long)]
        source: String,
        /// Which graph the source lives in.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        kg: u8,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Rank candidates for test sources and flag dangling ones.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationFlags,
        /// Candidates kept per source.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingFile(_) | Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn load(common: &Common) -> structalign::Result<ExperimentConfig> {
    ExperimentConfig::load(common.config.as_deref(), &common.overrides)
}

fn run(cli: Cli) -> structalign::Result<()> {
    match cli.command {
        Command::GenSynth { common } => {
            let cfg = load(&common)?;
            let corpus = run_gen_synth(&cfg)?;
            println!(
                "wrote {} ({} + {} entities, {} seed / {} valid / {} test links)",
                cfg.dataset.path.display(),
                corpus.kg1.entity_count(),
                corpus.kg2.entity_count(),
                corpus.seed_train.len(),
                corpus.links_valid.len(),
                corpus.links_test.len()
            );
        }
        Command::Train { common, force } => {
            let cfg = load(&common)?;
            let s = run_train(&cfg, force)?;
            for t in &s.turns {
                println!("turn {}: {} seeds (+{} pseudo)", t.turn, t.seeds, t.accepted);
            }
            println!(
                "trained {} epochs, final L1 {:.4}; config {} corpus {}",
                s.epochs,
                s.final_l1,
                &s.config_hash[..12],
                &s.corpus_hash[..12]
            );
            println!("artifacts in {}", cfg.output_dir.display());
        }
        Command::Eval {
            common,
            checkpoint,
            ablation,
            json,
        } => {
            let cfg = load(&common)?;
            let r = run_eval(&cfg, checkpoint.as_deref(), (&ablation).into())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r).expect("result serializes"));
            } else {
                print!("{}", format_table(&r));
            }
        }
        Command::Ppr {
            common,
            source,
            kg,
            top,
        } => {
            let cfg = load(&common)?;
            let listing = run_ppr(&cfg, &source, kg, top)?;
            for (uri, v) in &listing.top {
                println!("{v:.6}\t{uri}");
            }
            println!("sum\t{:.10}", listing.sum);
        }
        Command::Infer {
            common,
            checkpoint,
            ablation,
            top,
        } => {
            let cfg = load(&common)?;
            let lines = run_infer(&cfg, checkpoint.as_deref(), (&ablation).into(), top)?;
            let flagged = lines.iter().filter(|l| l.dangling).count();
            println!(
                "{} sources, {} flagged dangling; rankings in {}",
                lines.len(),
                flagged,
                cfg.paths().infer().display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
