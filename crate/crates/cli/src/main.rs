mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zsl_core::config::Config;
use zsl_core::Error;

#[derive(Parser, Debug)]
#[command(name = "zsl", version, about = "Zero-shot learning with attribute-modulated meta-trained feature generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for checkpoints, logs and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// softmax | weighted-soft | svm | weighted-svm
    #[arg(long, global = true)]
    classifier: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<u64>,
    #[arg(long, global = true)]
    sigma_test: Option<f64>,
    /// Synthetic samples per class (ZSL and GZSL).
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// synthetic | real
    #[arg(long, global = true)]
    gzsl_seen_mode: Option<String>,
    #[arg(long, global = true)]
    first_order: Option<bool>,
    /// e.g. "base,+,sigmoid,bias"
    #[arg(long, global = true)]
    mod_variant: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Meta-train and write a checkpoint plus the epoch log.
    Train,
    /// Dump synthetic unseen-class features with quality scores.
    Synthesize,
    /// Per-class top-1 on unseen classes.
    EvalZsl,
    /// Seen, unseen and harmonic-mean accuracy.
    EvalGzsl,
    /// Precision@k of synthetic class means against real unseen images.
    Retrieve,
    /// ZSL accuracy over sample counts and test noise levels.
    Sweep,
    /// Finite-difference check of every network composition.
    Gradcheck,
    /// Write the synthetic toy dataset.
    Toygen,
}

fn resolve(cli: &Cli) -> zsl_core::Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let mut set = |key: &str, v: Option<String>| -> zsl_core::Result<()> {
        match v {
            Some(v) => cfg.override_key(key, &v),
            None => Ok(()),
        }
    };
    set("seed", cli.seed.map(|v| v.to_string()))?;
    set("out", cli.out.as_ref().map(|p| p.display().to_string()))?;
    set("data", cli.data.as_ref().map(|p| p.display().to_string()))?;
    set("classifier", cli.classifier.clone())?;
    set("epochs", cli.epochs.map(|v| v.to_string()))?;
    set("sigma_test", cli.sigma_test.map(|v| v.to_string()))?;
    set("samples_zsl", cli.samples.map(|v| v.to_string()))?;
    set("samples_gzsl", cli.samples.map(|v| v.to_string()))?;
    set("gzsl_seen_mode", cli.gzsl_seen_mode.clone())?;
    set("first_order", cli.first_order.map(|v| v.to_string()))?;
    set("mod_variant", cli.mod_variant.clone())?;
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" | "argument" => 2,
        "io" | "format" => 3,
        "precondition" | "checkpoint" => 4,
        "numeric" => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = resolve(&cli).and_then(|cfg| commands::run(cli.command.name(), &cfg));
    match result {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Synthesize => "synthesize",
            Command::EvalZsl => "eval-zsl",
            Command::EvalGzsl => "eval-gzsl",
            Command::Retrieve => "retrieve",
            Command::Sweep => "sweep",
            Command::Gradcheck => "gradcheck",
            Command::Toygen => "toygen",
        }
    }
}
