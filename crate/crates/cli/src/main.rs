mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csmn::CsmnError;

use settings::{ConfigArgs, ImageArg};

/// Inconsistent settings, reported with their own exit code.
#[derive(Debug)]
pub struct Conflict(pub String);

impl std::fmt::Display for Conflict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration conflict: {}", self.0)
    }
}

impl std::error::Error for Conflict {}

/// Gradient check ran but some error exceeded its threshold.
#[derive(Debug)]
pub struct GradcheckFailed(pub usize);

impl std::fmt::Display for GradcheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} parameters exceed the gradient error threshold", self.0)
    }
}

impl std::error::Error for GradcheckFailed {}

pub mod exit {
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const MISSING_FILE: u8 = 3;
    pub const CONFIG: u8 = 4;
    pub const BAD_INPUT: u8 = 5;
    pub const VOCAB_MISMATCH: u8 = 6;
    pub const GRADCHECK: u8 = 7;
    pub const DIVERGED: u8 = 8;
}

#[derive(Parser)]
#[command(name = "csmn", version, about = "Personalized caption and hashtag generation with context sequence memory networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with one signature word and hashtag per user.
    Synth {
        #[arg(long, default_value_t = 5)]
        users: usize,
        /// Posts per user.
        #[arg(long, default_value_t = 20)]
        posts: usize,
        #[arg(long, default_value_t = 4)]
        topics: usize,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, value_enum, default_value = "pool5")]
        image_mode: ImageArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, build the vocabulary, compute profiles and split a corpus.
    Preprocess {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Line-delimited JSON corpus.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a preprocessed dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory written by `preprocess`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate for one post, or for an image key under a given user.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with_all = ["feature_key", "user"], required_unless_present = "feature_key")]
        post_id: Option<String>,
        #[arg(long, requires = "user")]
        feature_key: Option<String>,
        #[arg(long)]
        user: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score CSMN checkpoints or 1NN baselines on a split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Required for `--method csmn`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// csmn, 1nn-im, 1nn-usr or 1nn-usrim; may be repeated.
        #[arg(long, default_value = "csmn")]
        method: Vec<String>,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        part: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tape gradients with central differences on a synthetic batch.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Samples in the checked batch.
        #[arg(long, default_value_t = 2)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Conflict>() {
            return exit::CONFIG;
        }
        if cause.is::<GradcheckFailed>() {
            return exit::GRADCHECK;
        }
        if let Some(e) = cause.downcast_ref::<CsmnError>() {
            return match e {
                CsmnError::Io { .. } => exit::MISSING_FILE,
                CsmnError::Config(_) => exit::CONFIG,
                CsmnError::VocabMismatch { .. } => exit::VOCAB_MISMATCH,
                CsmnError::Diverged { .. } | CsmnError::NonFiniteGradient(_) => exit::DIVERGED,
                CsmnError::Parse { .. }
                | CsmnError::FeatureFormat(_)
                | CsmnError::CheckpointFormat(_)
                | CsmnError::MissingFeature(_)
                | CsmnError::TokenRange { .. }
                | CsmnError::Insufficient(_)
                | CsmnError::MissingParam(_) => exit::BAD_INPUT,
                _ => exit::OTHER,
            };
        }
        if cause.is::<std::io::Error>() {
            return exit::MISSING_FILE;
        }
    }
    exit::OTHER
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn diagnostic(err: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in err.chain() {
        let text = cause.to_string().replace('\n', " ");
        if !line.ends_with(&text) {
            if !line.is_empty() {
                line.push_str(": ");
            }
            line.push_str(&text);
        }
    }
    line
}

fn limit_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("CSMN_THREADS") else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Conflict(format!("CSMN_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { 0 });
        }
    };
    match limit_threads().and_then(|_| commands::run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("csmn: {}", diagnostic(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
