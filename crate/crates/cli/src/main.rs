//! `xlnlu`: synthetic data, embedding refinement, training, zero-shot
//! evaluation, ablation grids and latent export.
//!
//! Exit status: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xlnlu::model::HeadKind;
use xlnlu::ErrorKind;

#[derive(Parser, Debug)]
#[command(
    name = "xlnlu",
    version,
    about = "Zero-shot cross-lingual slot filling and intent detection"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration for the command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic bilingual bundle with a planted alignment.
    Gen,
    /// Preprocess both spaces and refine the cross-lingual map from seed words.
    Refine {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Train on the source-language corpora of a bundle.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        /// Source space to train in (default: the bundle's).
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long, value_parser = parse_head)]
        head: Option<HeadKind>,
        /// Gaussian noise on training embeddings.
        #[arg(long)]
        noise: bool,
        #[arg(long)]
        delexicalize: bool,
        /// Record that the evaluation space will be refined.
        #[arg(long)]
        refine: bool,
    },
    /// Score a checkpoint on a target corpus with a swapped-in space.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Supplies the target corpus, space and language unless overridden.
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        language: Option<String>,
    },
    /// Train and zero-shot evaluate every (configuration, seed) cell of a grid.
    Ablate {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Dump inference-mode latent means and log-variances as JSON lines.
    ExportLatents {
        #[arg(long)]
        model: PathBuf,
        /// Supplies the source test corpus and space unless overridden.
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// A corpus in the model's training language.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        space: Option<PathBuf>,
    },
}

fn parse_head(s: &str) -> Result<HeadKind, String> {
    match s {
        "lvm" => Ok(HeadKind::Lvm),
        "mlp" => Ok(HeadKind::Mlp),
        "crf" => Ok(HeadKind::Crf),
        _ => Err(format!("unknown head `{s}` (expected lvm, mlp or crf)")),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<xlnlu::Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let cfg: anyhow::Error = xlnlu::Error::Config(vec!["x".into()]).into();
        assert_eq!(exit_code(&cfg), 2);
        assert_eq!(exit_code(&cfg.context("while loading")), 2);
        assert_eq!(exit_code(&xlnlu::Error::Data("x".into()).into()), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("plain io")), 3);
    }

    #[test]
    fn head_names() {
        assert_eq!(parse_head("crf"), Ok(HeadKind::Crf));
        assert!(parse_head("CRF").is_err());
    }
}
