use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use crossalign::commands::{
    cmd_align, cmd_eval, cmd_extract, cmd_gradcheck, cmd_synth, cmd_train, render_gradcheck, AlignArgs, EvalArgs,
    Precision, RunConfig,
};
use crossalign::model::Variant;
use crossalign::Error;

/// Speech/text emotion classifier with cross-modal attention alignment.
#[derive(Parser)]
#[command(name = "crossalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the checkpoint with the best validation UA.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest (WA, UA, confusion matrix).
    Eval(EvalCmd),
    /// Dump per-word attention weights of a trained model.
    Align(AlignCmd),
    /// Check analytic gradients of a tiny model against finite differences.
    Gradcheck {
        #[arg(long, default_value = "proposed")]
        variant: Variant,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the 34 frame features of WAV files as CSV.
    Extract {
        /// A WAV file or a directory of them.
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic corpus.
    Synth {
        /// JSON spec; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's utterance count.
        #[arg(long)]
        n: Option<usize>,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "proposed")]
    variant: Variant,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Units per LSTM direction.
    #[arg(long, default_value_t = 100)]
    hidden: usize,
    #[arg(long, default_value_t = 5)]
    heads: usize,
    #[arg(long, default_value = "f32")]
    precision: Precision,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    freeze_embeddings: bool,
    /// Clip the global gradient norm to this value.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 5)]
    test_session: u8,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value = "f32")]
    precision: Precision,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AlignCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value = "f32")]
    precision: Precision,
    #[arg(long)]
    out: PathBuf,
    /// `spans.jsonl` from `synth`, for the trigger-word span-mass statistic.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        3
    } else if matches!(err.root(), Error::Numeric(_)) {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> crossalign::Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = RunConfig {
                variant: a.variant,
                manifest: a.manifest,
                embeddings: a.embeddings,
                out: a.out,
                epochs: a.epochs,
                batch: a.batch,
                lr: a.lr,
                seed: a.seed,
                hidden: a.hidden,
                heads: a.heads,
                precision: a.precision,
                freeze_embeddings: a.freeze_embeddings,
                clip: a.clip,
                patience: a.patience,
                val_fraction: a.val_fraction,
                test_session: a.test_session,
            };
            let summary = cmd_train(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        }
        Command::Eval(a) => {
            let report = cmd_eval(&EvalArgs {
                checkpoint: a.checkpoint,
                manifest: a.manifest,
                embeddings: a.embeddings,
                precision: a.precision,
                out: a.out,
            })?;
            print!("{}", report.render());
        }
        Command::Align(a) => {
            let summary = cmd_align(&AlignArgs {
                checkpoint: a.checkpoint,
                manifest: a.manifest,
                embeddings: a.embeddings,
                precision: a.precision,
                out_dir: a.out,
                truth: a.truth,
            })?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
        }
        Command::Gradcheck { variant, seed } => {
            let report = cmd_gradcheck(variant, seed)?;
            print!("{}", render_gradcheck(&report));
            if !report.passed() {
                let names: Vec<String> = report
                    .failures()
                    .map(|p| format!("{} ({:.3e})", p.name, p.max_rel_error))
                    .collect();
                return Err(Error::Numeric(format!("gradient check failed for {}", names.join(", "))));
            }
        }
        Command::Extract { input, out } => {
            for path in cmd_extract(&input, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Synth { spec, out, n, seed } => {
            let corpus = cmd_synth(
                spec.as_deref(),
                |s| {
                    if let Some(n) = n {
                        s.n_utterances = n;
                    }
                    if let Some(seed) = seed {
                        s.seed = seed;
                    }
                },
                &out,
            )?;
            println!(
                "{} utterances\nmanifest {}\nembeddings {}\nspans {}",
                corpus.utterances.len(),
                corpus.manifest.display(),
                corpus.embeddings.display(),
                corpus.spans.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap would exit 2 on usage errors, which is reserved for numeric failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
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
