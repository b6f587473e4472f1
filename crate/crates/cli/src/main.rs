use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod settings;

/// Unsupervised video instance segmentation pipeline: label, filter, track
/// and evaluate instance detections stored as JSON Lines.
#[derive(Parser, Debug)]
#[command(name = "vistrack", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check manifest, detections, class table and ground truth against the schema
    Validate {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        /// Print the report as JSON
        #[arg(long)]
        json: bool,
    },
    /// Assign each detection the class of its most similar text embedding
    Label {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        /// Output JSON Lines file (default: stdout)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Drop low-score and/or off-prototype labeled detections
    Filter {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum)]
        stage: Option<Stage>,
        #[command(flatten)]
        filter: FilterArgs,
        /// Also write the prototype bank as JSON
        #[arg(long, value_name = "FILE")]
        bank_out: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Link labeled detections into tracklets
    Track {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        track: TrackArgs,
        /// Use the appearance + box-IoU baseline tracker
        #[arg(long)]
        baseline: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Same as `track --baseline`
    Baseline {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        track: TrackArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Video AP/AR of tracklets against ground truth
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        /// Tracklet JSON Lines file
        #[arg(long)]
        tracklets: Option<PathBuf>,
        /// Treat every class as one
        #[arg(long)]
        ignore_class: bool,
        #[arg(long)]
        json: bool,
        /// Also write the report as JSON
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Per-frame F1 of labeled detections against ground truth
    F1 {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        /// Mask IoU a match must exceed
        #[arg(long)]
        f1_iou: Option<f64>,
        #[arg(long)]
        ignore_class: bool,
        #[arg(long)]
        json: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic dataset (config keys are generator fields)
    Synth {
        #[command(flatten)]
        shared: Shared,
        /// Starting point that config keys override
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// label, score filter, prototype filter, track and eval in one go
    E2e {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        filter: FilterArgs,
        #[command(flatten)]
        track: TrackArgs,
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        ignore_class: bool,
        #[arg(long)]
        json: bool,
        /// Keep every intermediate file here
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct Shared {
    /// JSON file whose keys mirror flag names; flags win over it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-video work (default: all cores)
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct Inputs {
    /// Directory with manifest.json, detections.jsonl, classes.json, ground_truth.jsonl
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub detections: Option<PathBuf>,
    /// Class embedding table
    #[arg(long, value_name = "FILE")]
    pub classes: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub objectness_min: Option<f32>,
    #[arg(long)]
    pub class_score_min: Option<f32>,
    /// Minimum cosine to the nearest prototype of the assigned class
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// K-means seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Instances per prototype
    #[arg(long)]
    pub pmf_cluster_divisor: Option<usize>,
    #[arg(long)]
    pub pmf_max_k: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    /// Weight of the latest frame against the running mean
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub num_slots: Option<usize>,
    /// Tracklets kept per video
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Keep a slot's last embedding while it is unmatched
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub hold_last_embedding: Option<bool>,
    #[arg(long)]
    pub appearance_weight: Option<f64>,
    #[arg(long)]
    pub iou_weight: Option<f64>,
    /// Frames a baseline track survives unmatched
    #[arg(long)]
    pub max_age: Option<u32>,
    /// Baseline pairs costing more are never linked
    #[arg(long)]
    pub max_cost: Option<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Default,
    Noiseless,
    NoisyLabels,
    Occlusion,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Score,
    Pmf,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
