//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "gsbench",
    about = "Mini-batch sampler benchmark: graph sampling vs PK vs clustering",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled feature file.
    Gen(GenArgs),
    /// Train an embedding model with one sampler.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a feature file.
    Eval(EvalArgs),
    /// Compare samplers over multiple seeded runs.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of classes C.
    #[arg(long, default_value_t = 64)]
    pub classes: usize,
    /// Number of class groups (super-clusters).
    #[arg(long, default_value_t = 8)]
    pub groups: usize,
    /// Feature dimension of the signal block.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    /// Samples per class (sets min = max).
    #[arg(long, default_value_t = 6)]
    pub per_class: usize,
    /// Unbalanced lower bound; overrides --per-class when set.
    #[arg(long)]
    pub per_class_min: Option<usize>,
    /// Unbalanced upper bound; overrides --per-class when set.
    #[arg(long)]
    pub per_class_max: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub group_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    pub class_scale: f64,
    /// Within-class noise std.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Extra pure-noise dimensions appended to every sample.
    #[arg(long, default_value_t = 0)]
    pub nuisance_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub nuisance_sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output feature file.
    #[arg(short, long)]
    pub out: PathBuf,
}

/// Flags shared by train and bench; every field is optional so a config file
/// can supply it (flags beat file beats defaults).
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sampler: pk | gs | cluster.
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Instances per class K.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Gradient norm threshold: a positive number, or `none` to disable.
    #[arg(long)]
    pub clip: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub decay_epoch: Option<usize>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Distance kind: euclidean | cosine.
    #[arg(long)]
    pub metric: Option<String>,
    /// Re-ranking of the class distance matrix: none | kreciprocal.
    #[arg(long)]
    pub rerank: Option<String>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long)]
    pub rerank_lambda: Option<f64>,
    /// Model kind: linear | mlp1.
    #[arg(long)]
    pub model: Option<String>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim_out: Option<usize>,
    /// Hidden width for mlp1.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub bias: Option<bool>,
    /// L2-normalize embeddings.
    #[arg(long)]
    pub l2norm: Option<bool>,
    /// Give PK/cluster epochs the same C iterations as graph sampling.
    #[arg(long)]
    pub match_gs_iters: bool,
    /// Cluster count M for the clustering sampler.
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Queries held out per class when building the eval split.
    #[arg(long)]
    pub queries_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training feature file.
    pub train_file: PathBuf,
    /// Held-out feature file for evaluation; defaults to splitting the
    /// training set.
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunFlags,
    /// Output directory for checkpoint, metrics, eval and manifest.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint written by `train`.
    pub checkpoint: PathBuf,
    /// Feature file to evaluate on.
    pub features: PathBuf,
    #[arg(long)]
    pub queries_per_class: Option<usize>,
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Training feature file (shared by all samplers).
    pub train_file: PathBuf,
    /// Held-out feature file; when absent, a per-class holdout is carved out
    /// of the training file before training.
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    /// Samples per class moved to the eval pool when no test file is given.
    #[arg(long)]
    pub holdout_per_class: Option<usize>,
    /// Comma-separated sampler list.
    #[arg(long, default_value = "pk,cluster,gs")]
    pub samplers: String,
    /// Independent seeded runs per sampler.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Held-out mAP target for iterations-to-target; `auto` uses each run's
    /// final PK mAP.
    #[arg(long, default_value = "auto")]
    pub target_map: String,
    /// Evaluate held-out mAP every n-th iteration.
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    #[command(flatten)]
    pub run: RunFlags,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}
