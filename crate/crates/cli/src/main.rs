//! `cooc`: aggregate activation tensors into retrieval descriptors, whiten,
//! index, evaluate, benchmark, inspect and train.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cooc_core::pipeline::{MaskMode, PoolMode};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "cooc",
    version,
    about = "Co-occurrence descriptors for image retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a directory of activation tensors into descriptors.
    Aggregate(AggregateArgs),
    /// Fit or apply PCA whitening.
    #[command(subcommand)]
    Whiten(WhitenCommand),
    /// Build or query a descriptor index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Rank every ground-truth query and report mAP.
    Eval(EvalArgs),
    /// Time the convolution route against the max-correlation baseline.
    Bench(BenchArgs),
    /// Write spatial weight maps and the channel co-occurrence correlation
    /// matrix.
    Inspect(InspectArgs),
    /// Train the co-occurrence filter from labeled pairs.
    Train(TrainArgs),
}

#[derive(Debug, Subcommand)]
enum WhitenCommand {
    Fit(WhitenFitArgs),
    Apply(WhitenApplyArgs),
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    Build(IndexBuildArgs),
    Query(IndexQueryArgs),
}

fn parse_pool(s: &str) -> Result<PoolMode, String> {
    s.parse().map_err(|e: cooc_core::Error| e.to_string())
}

fn parse_mask(s: &str) -> Result<MaskMode, String> {
    s.parse().map_err(|e: cooc_core::Error| e.to_string())
}

/// `N,ALPHA`, e.g. `50,3`.
fn parse_alpha_qe(s: &str) -> Result<AlphaQe, String> {
    let (n, alpha) = s
        .split_once(',')
        .ok_or_else(|| format!("expected N,ALPHA, got {s:?}"))?;
    let n: usize = n.trim().parse().map_err(|_| format!("bad N in {s:?}"))?;
    let alpha: f64 = alpha
        .trim()
        .parse()
        .map_err(|_| format!("bad ALPHA in {s:?}"))?;
    if n == 0 || !(alpha >= 0.0) {
        return Err(format!("need N >= 1 and ALPHA >= 0, got {s:?}"));
    }
    Ok(AlphaQe { n, alpha })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct AlphaQe {
    n: usize,
    alpha: f64,
}

fn serialize_display<T: std::fmt::Display, S: serde::Serializer>(
    v: &T,
    s: S,
) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// Options shared by every command that computes co-occurrences.
#[derive(Debug, Clone, Args, Serialize)]
struct CoocOpts {
    /// Filter radius.
    #[arg(long, default_value_t = cooc_core::cooc::DEFAULT_RADIUS)]
    radius: usize,
    /// Self-channel weight of the canonical filter.
    #[arg(long, default_value_t = 0.0)]
    diag: f64,
    /// Fixed activation threshold; the per-tensor mean when omitted.
    #[arg(long)]
    thr: Option<f64>,
    /// Trained filter (COOF); overrides --radius and --diag.
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Power of the spatial weight norm.
    #[arg(long, default_value_t = cooc_core::pooling::DEFAULT_POWER_A)]
    a: f64,
    /// Root of the spatial weights.
    #[arg(long, default_value_t = cooc_core::pooling::DEFAULT_POWER_B)]
    b: f64,
    /// Smoothing of the channel weights.
    #[arg(long, default_value_t = cooc_core::pooling::DEFAULT_EPS)]
    eps: f64,
}

#[derive(Debug, Args, Serialize)]
struct AggregateArgs {
    /// Directory of activation tensors.
    input: PathBuf,
    /// Output directory for descriptors.
    output: PathBuf,
    /// ucrow, chco-sct, bp or cbp.
    #[arg(long, default_value = "chco-sct", value_parser = parse_pool)]
    #[serde(serialize_with = "serialize_display")]
    pool: PoolMode,
    /// none, topdown or center.
    #[arg(long, default_value = "none", value_parser = parse_mask)]
    #[serde(serialize_with = "serialize_display")]
    mask: MaskMode,
    #[command(flatten)]
    cooc: CoocOpts,
    /// Compact bilinear output dimension.
    #[arg(long, default_value_t = cooc_core::sketch::DEFAULT_SKETCH_DIM)]
    sketch_dim: usize,
    /// Seed of the count-sketch hashes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Signed square root of the pooled vector (bilinear modes).
    #[arg(long)]
    signed_sqrt: bool,
}

#[derive(Debug, Args, Serialize)]
struct WhitenFitArgs {
    /// Directory of training descriptors.
    input: PathBuf,
    /// Output model file (COOW).
    output: PathBuf,
    /// Output dimension.
    #[arg(long)]
    dim: usize,
}

#[derive(Debug, Args, Serialize)]
struct WhitenApplyArgs {
    /// Whitening model (COOW).
    model: PathBuf,
    /// Directory of descriptors.
    input: PathBuf,
    /// Output directory.
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct IndexBuildArgs {
    /// Directory of descriptors.
    input: PathBuf,
    /// Output index file (COOI).
    output: PathBuf,
    /// Whitening model applied to every descriptor.
    #[arg(long)]
    whiten: Option<PathBuf>,
    /// Average `id@scale` descriptors per image id.
    #[arg(long)]
    ms: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
struct QeOpts {
    /// Average query expansion over the top N.
    #[arg(long, value_name = "N", conflicts_with = "alphaqe")]
    aqe: Option<usize>,
    /// Alpha-weighted query expansion over the top N.
    #[arg(long, value_name = "N,ALPHA", value_parser = parse_alpha_qe)]
    alphaqe: Option<AlphaQe>,
}

#[derive(Debug, Args, Serialize)]
struct IndexQueryArgs {
    /// Index file (COOI).
    index: PathBuf,
    /// Query descriptor file(s); `id@scale` files are averaged with --ms.
    #[arg(required = true)]
    queries: Vec<PathBuf>,
    /// Output CSV of rankings.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    whiten: Option<PathBuf>,
    #[arg(long)]
    ms: bool,
    #[command(flatten)]
    qe: QeOpts,
    /// Entries kept per query.
    #[arg(long, default_value_t = 100)]
    top: usize,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// Index file (COOI).
    index: PathBuf,
    /// Ground-truth directory (`<query>_query.txt`, `_good`, `_ok`, `_junk`).
    groundtruth: PathBuf,
    /// Output directory for the per-query AP CSV and the manifest.
    output: PathBuf,
    /// Directory of query descriptors; queries are looked up in the index
    /// when omitted.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    whiten: Option<PathBuf>,
    /// Average `id@scale` query descriptors.
    #[arg(long)]
    ms: bool,
    #[command(flatten)]
    qe: QeOpts,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    /// Comma-separated shapes `MxNxD`.
    #[arg(long, default_value = "32x24x512,32x24x32")]
    shapes: String,
    #[arg(long, default_value_t = cooc_core::cooc::DEFAULT_RADIUS)]
    radius: usize,
    /// Timed calls per route.
    #[arg(long, default_value_t = 50)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the timing CSV and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct InspectArgs {
    /// Tensor files.
    #[arg(required = true)]
    tensors: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cooc: CoocOpts,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Pair list: `path_a<TAB>path_b<TAB>label` per line, paths relative to
    /// the list.
    pairs: PathBuf,
    /// Output filter file (COOF).
    output: PathBuf,
    /// Loss-curve CSV; next to the filter when omitted.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    lr: f64,
    /// Contrastive margin.
    #[arg(long, default_value_t = 0.7)]
    tau: f64,
    #[arg(long, default_value_t = 5)]
    batch: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = cooc_core::cooc::DEFAULT_RADIUS)]
    radius: usize,
    /// Initial self-channel weight.
    #[arg(long, default_value_t = cooc_core::cooc::TRAINABLE_DIAG)]
    diag: f64,
    #[arg(long, default_value_t = cooc_core::sketch::DEFAULT_SKETCH_DIM)]
    sketch_dim: usize,
    /// Seed of the shuffling and of the sketch hashes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of pairs held out for filter selection.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("COOC_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("COOC_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("COOC_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Aggregate(a) => commands::aggregate(&a),
        Command::Whiten(WhitenCommand::Fit(a)) => commands::whiten_fit(&a),
        Command::Whiten(WhitenCommand::Apply(a)) => commands::whiten_apply(&a),
        Command::Index(IndexCommand::Build(a)) => commands::index_build(&a),
        Command::Index(IndexCommand::Query(a)) => commands::index_query(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::Train(a) => commands::train(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with 2 inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
