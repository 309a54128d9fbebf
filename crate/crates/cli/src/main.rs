//! `mrrc`: generate synthetic scenes, train and fine-tune captioners,
//! decode, evaluate, certify gradients and explore TPR retrieval.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] mrrc_core::Error),
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
}

impl CliError {
    /// 1 for bad input or a failed check, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        use mrrc_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::GradcheckFailed(_) => 1,
            CliError::Core(E::Config(_) | E::Contract(_) | E::Parse { .. } | E::Schema { .. }) => 1,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mrrc", version, about = "Region-attention captioning toolkit")]
struct Cli {
    /// TOML config file; defaults to $MRRC_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Threads for decoding and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Extra `section.key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset and its vocabulary.
    Gen(GenArgs),
    /// Cross-entropy training.
    Train(TrainArgs),
    /// Self-critical fine-tuning of a checkpoint.
    Scst(ScstArgs),
    /// Write one caption per scene.
    Decode(DecodeArgs),
    /// Score decoded captions against the references.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Print TPR retrieval error by role mode and dimension.
    #[command(alias = "tpr-lab")]
    Tprlab(TprLabArgs),
}

/// Pushes `section.key = value` for every flag that was given.
macro_rules! overrides {
    ($out:ident; $($key:literal => $val:expr),* $(,)?) => {
        {
            $( if let Some(v) = &$val { $out.push(($key.to_string(), v.to_string())); } )*
        }
    };
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Follow cross-entropy training with self-critical fine-tuning.
    #[arg(long)]
    scst: bool,
}

#[derive(Args, Debug)]
struct ScstArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Fine-tuned checkpoint path; overwrites the input when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    reward: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Captions output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, conflicts_with = "greedy")]
    beam: Option<usize>,
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "greedy")]
    beam: Option<usize>,
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    max_len: Option<usize>,
    /// Also write the metrics record here.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Variant name or `all`.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    e: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_coords: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TprLabArgs {
    #[arg(long)]
    t: Option<usize>,
    /// Comma-separated role dimensions.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn quoted(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| toml::Value::String(p.display().to_string()).to_string())
}

/// Full variant name for accepted short forms; other input passes through
/// for the config loader to reject.
fn canonical(v: &Option<String>) -> Option<String> {
    v.as_ref()
        .map(|s| s.parse::<mrrc_core::models::Variant>().map_or_else(|_| s.clone(), |v| v.name().to_string()))
}

fn quoted_str(s: &Option<String>) -> Option<String> {
    s.as_ref().map(|s| toml::Value::String(s.clone()).to_string())
}

impl Cmd {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        match self {
            Cmd::Gen(a) => overrides!(o;
                "data.n" => a.n, "data.seed" => a.seed,
                "paths.dataset" => quoted(&a.out), "paths.vocab" => quoted(&a.vocab)),
            Cmd::Train(a) => {
                overrides!(o;
                    "paths.dataset" => quoted(&a.dataset), "paths.checkpoint" => quoted(&a.checkpoint),
                    "paths.history" => quoted(&a.history), "model.variant" => quoted_str(&canonical(&a.variant)),
                    "train.lr" => a.lr, "train.epochs" => a.epochs, "train.batch_size" => a.batch_size,
                    "train.max_steps" => a.max_steps, "train.seed" => a.seed);
                if a.scst {
                    o.push(("train.scst.enabled".into(), "true".into()));
                }
            }
            Cmd::Scst(a) => overrides!(o;
                "paths.dataset" => quoted(&a.dataset), "paths.checkpoint" => quoted(&a.checkpoint),
                "paths.scst_checkpoint" => quoted(&a.out), "paths.scst_history" => quoted(&a.history),
                "train.scst.steps" => a.steps, "train.scst.lr" => a.lr,
                "train.scst.reward" => quoted_str(&a.reward), "train.seed" => a.seed),
            Cmd::Decode(a) => {
                overrides!(o;
                    "paths.dataset" => quoted(&a.dataset), "paths.checkpoint" => quoted(&a.checkpoint),
                    "paths.vocab" => quoted(&a.vocab), "paths.captions" => quoted(&a.out),
                    "decode.beam" => a.beam, "decode.max_len" => a.max_len);
                if a.greedy {
                    o.push(("decode.greedy".into(), "true".into()));
                }
            }
            Cmd::Eval(a) => {
                overrides!(o;
                    "paths.dataset" => quoted(&a.dataset), "paths.checkpoint" => quoted(&a.checkpoint),
                    "paths.metrics" => quoted(&a.metrics),
                    "decode.beam" => a.beam, "decode.max_len" => a.max_len);
                if a.greedy {
                    o.push(("decode.greedy".into(), "true".into()));
                }
            }
            Cmd::Gradcheck(a) => overrides!(o;
                "gradcheck.variant" => quoted_str(&a.variant), "gradcheck.d" => a.d, "gradcheck.e" => a.e,
                "gradcheck.k_max" => a.k, "gradcheck.vocab_size" => a.vocab, "gradcheck.batch" => a.batch,
                "gradcheck.tol" => a.tol, "gradcheck.max_coords" => a.max_coords, "gradcheck.seed" => a.seed),
            Cmd::Tprlab(a) => {
                overrides!(o; "tprlab.t" => a.t, "tprlab.trials" => a.trials, "tprlab.seed" => a.seed);
                if !a.dims.is_empty() {
                    o.push(("tprlab.dims".into(), format!("{:?}", a.dims)));
                }
            }
        }
        o
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    overrides.extend(cli.cmd.overrides());
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.cmd {
        Cmd::Gen(_) => commands::gen(&cfg),
        Cmd::Train(_) => commands::train(&cfg),
        Cmd::Scst(_) => commands::scst(&cfg),
        Cmd::Decode(_) => commands::decode(&cfg, cli.workers),
        Cmd::Eval(_) => commands::eval(&cfg, cli.workers),
        Cmd::Gradcheck(_) => commands::gradcheck(&cfg),
        Cmd::Tprlab(_) => commands::tprlab(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
