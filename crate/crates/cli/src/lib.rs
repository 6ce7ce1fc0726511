//! Command-line front end: argument parsing, the run configuration and the
//! subcommand implementations.

pub mod commands;
pub mod run_config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tfcns::training::AblationAxis;

use run_config::keys_help;

#[derive(Parser)]
#[command(name = "tfcns", version, about = "Train, evaluate and inspect TFCNs segmentation models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Default)]
pub struct Common {
    /// `key = value` config file; later flags override it.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Sets both `seed` and `train_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (the `out_dir` key).
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model, writing the log, checkpoints and effective config.
    #[command(after_help = keys_help())]
    Train {
        #[command(flatten)]
        common: Common,
        /// Base learning rate (the `lr` key).
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on a dataset and print the metric table.
    #[command(after_help = keys_help())]
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<String>,
    },
    /// Segment one image, writing a palette PPM and a mask tensor.
    #[command(after_help = keys_help())]
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<String>,
        /// Image tensor file, H×W or C×H×W f32.
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
    },
    /// Write the class activation heatmap and overlay of one image.
    #[command(after_help = keys_help())]
    Cam {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<String>,
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        #[arg(long)]
        class: usize,
        /// Overlay pixels whose normalized heat exceeds this value.
        #[arg(long, default_value_t = tfcns::data::DEFAULT_CAM_THRESHOLD)]
        threshold: f64,
    },
    /// Train and compare configurations along one ablation axis.
    #[command(after_help = keys_help())]
    Ablate {
        #[command(flatten)]
        common: Common,
        /// One of patch, mlp, skip.
        #[arg(long)]
        axis: AblationAxis,
    },
    /// Write the synthetic dataset described by the config.
    #[command(after_help = keys_help())]
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

pub fn run(command: Command) -> Result<(), tfcns::Error> {
    match command {
        Command::Train { common, lr } => commands::train(&common, lr),
        Command::Eval { common, checkpoint } => commands::eval(&common, checkpoint),
        Command::Predict { common, checkpoint, image } => commands::predict(&common, checkpoint, &image),
        Command::Cam { common, checkpoint, image, class, threshold } => {
            commands::cam(&common, checkpoint, &image, class, threshold)
        }
        Command::Ablate { common, axis } => commands::ablate(&common, axis),
        Command::Synth { common } => commands::synth(&common),
    }
}

/// 1 for a diverged run, 2 for usage, config and data errors.
pub fn exit_code(err: &tfcns::Error) -> u8 {
    match err {
        tfcns::Error::NonFiniteLoss { .. } => 1,
        _ => 2,
    }
}
