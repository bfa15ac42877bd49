use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Learned point-cloud feature transmission: synthesis, training,
/// evaluation and the separate-coding baseline.
#[derive(Debug, Parser)]
#[command(name = "lpcft", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (`key=value` lines). Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory; every artifact is written below it.
    #[arg(long, global = true, default_value = "run")]
    pub out: PathBuf,
    /// Allow writing into a non-empty run directory.
    #[arg(long, global = true)]
    pub force: bool,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scene pairs (PLY files plus an index).
    Synth {
        /// Number of scene pairs; overrides the `count` key.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Stage one: noise-free pretraining of the feature codec.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Stage two: end-to-end training through the link.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Stage-one checkpoint to start from.
        #[arg(long, conflicts_with = "scratch", required_unless_present = "scratch")]
        init: Option<PathBuf>,
        /// Start from random weights instead.
        #[arg(long)]
        scratch: bool,
    },
    /// Metric sweep over SNR values: CSV, JSON summary and plots.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        link: LinkArgs,
        /// Evaluate the noise-free compression roundtrip instead.
        #[arg(long)]
        noise_free: bool,
    },
    /// Octree + LDPC reference over the same link.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        /// Octree depth; defaults to the depth matching `--target-bpp`.
        #[arg(long)]
        depth: Option<u8>,
        #[arg(long, default_value_t = 1.0)]
        target_bpp: f64,
        /// LDPC code rate: 1/2 or 3/4.
        #[arg(long, default_value = "1/2")]
        rate: String,
        #[command(flatten)]
        link: LinkArgs,
        /// Metrics CSV of a learned run to overlay on the plots.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Send one frame end to end and write the reconstruction.
    Transmit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        tx: PathBuf,
        /// Receiver cloud; required when the model fuses.
        #[arg(long)]
        rx: Option<PathBuf>,
        /// Single SNR in dB (`inf` for a noiseless link).
        #[arg(long, default_value = "10")]
        snr: f64,
        #[arg(long, default_value = "awgn")]
        channel: String,
        /// Skip the link: pure compression roundtrip.
        #[arg(long)]
        no_link: bool,
    },
    /// Train and compare ablation variants.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Held-out scenes for evaluation.
        #[arg(long)]
        test: PathBuf,
        /// Subset of use_abs_pos, use_channel_codec, use_fusion.
        #[arg(long, value_delimiter = ',', default_value = "use_abs_pos,use_channel_codec,use_fusion")]
        axes: Vec<String>,
        /// Shared stage-one checkpoint; trained when absent.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// Render plots from one or more metrics CSV files.
    Plot {
        #[arg(long = "csv", required = true)]
        csv: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct LinkArgs {
    /// Comma-separated SNR values in dB.
    #[arg(long, value_delimiter = ',', default_value = "0,5,10")]
    pub snr: Vec<f64>,
    #[arg(long, default_value = "awgn")]
    pub channel: String,
}
