//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "inkdiff",
    version,
    about = "Conditional text-image diffusion toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Flags override values from `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration; relative paths inside resolve against its directory.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthetic corpus operations.
    Corpus {
        #[command(subcommand)]
        action: CorpusCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Train or evaluate the CTC recognizer.
    Recognizer {
        #[command(subcommand)]
        action: RecognizerCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Train the conditional diffusion model.
    Diffusion {
        #[command(subcommand)]
        action: DiffusionCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Generate images in one mode.
    Generate {
        #[command(flatten)]
        args: GenerateArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Generate an equal-proportion synthesis + imitation training set.
    Mix {
        #[command(flatten)]
        args: MixArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Image-quality metrics.
    Metrics {
        #[command(subcommand)]
        action: MetricsCmd,
        #[command(flatten)]
        common: Common,
    },
    /// Packaged experiments.
    Experiment {
        #[command(subcommand)]
        action: ExperimentCmd,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
pub enum CorpusCmd {
    /// Render vocabulary x writers x renders into the output directory.
    Build {
        #[arg(long, value_name = "FILE")]
        vocab: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        writers: Option<usize>,
        #[arg(long, value_name = "K")]
        per_pair: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
pub enum RecognizerCmd {
    /// Train on the train split, keeping the best validation-CER weights.
    Train {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        /// Train the scoring recognizer on a seed disjoint from the conditioning one.
        #[arg(long)]
        heldout: bool,
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
    },
    /// Print CER and WER on a split.
    Eval {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
        split: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum DiffusionCmd {
    /// Train the denoiser and conditional encoder against a frozen recognizer.
    Train {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        recognizer: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        steps: Option<usize>,
    },
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_name = "M")]
    pub mode: String,
    #[arg(long, value_name = "T")]
    pub text: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub image: Option<PathBuf>,
    #[arg(long, value_name = "K")]
    pub writer: Option<usize>,
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub count: usize,
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    /// Classifier-free guidance scale; 1.0 disables guidance.
    #[arg(long, default_value_t = 1.0)]
    pub guidance: f64,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub total: Option<usize>,
    #[arg(long, value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    /// Share of synthesis samples; the remainder are imitation samples.
    #[arg(long, value_name = "F")]
    pub synthesis_fraction: Option<f64>,
}

#[derive(Subcommand, Debug)]
pub enum MetricsCmd {
    /// Score a generated corpus against a real one.
    Compare {
        #[arg(long, value_name = "DIR")]
        real: PathBuf,
        #[arg(long, value_name = "DIR")]
        gen: PathBuf,
        /// Recognizer used for features and content CER.
        #[arg(long, value_name = "CKPT")]
        ckpt: Option<PathBuf>,
        /// Split of the real corpus to compare against.
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test", "all"])]
        split: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum ExperimentCmd {
    /// Train one diffusion model per condition set and compare them.
    Ablation {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        recognizer: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        heldout: Option<PathBuf>,
    },
    /// Retrain the recognizer with and without generated data.
    Augment {
        #[arg(long, value_name = "DIR")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "CKPT")]
        ckpt: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        total: Option<usize>,
    },
}
