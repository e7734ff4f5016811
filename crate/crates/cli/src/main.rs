//! Command-line front end: pseudo-mask generation, evaluation, the
//! transport-vs-local-argmin comparison, fixture synthesis and loss
//! evaluation, all as reproducible batch runs.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "otmask",
    version,
    about = "Panoptic pseudo-masks from point annotations via optimal transport over geodesic pixel costs"
)]
struct Cli {
    /// Worker threads for per-source shortest-path rows (0 = all cores);
    /// the OTMASK_JOBS environment variable is the fallback.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a pseudo-mask from maps and point annotations.
    Generate(GenerateArgs),
    /// Score a predicted mask against a ground-truth mask.
    Evaluate(EvaluateArgs),
    /// Run the transport plan and the per-pixel minimum-cost baseline on
    /// the same inputs and report the differences.
    Compare(CompareArgs),
    /// Render a synthetic scene into fixture files.
    Synth(SynthArgs),
    /// Evaluate the weak-supervision losses and their gradient checks.
    Losses(LossesArgs),
}

/// Pipeline knobs; anything not given falls back to the config file and
/// then to the built-in defaults (explicit flags always win).
#[derive(Args, Debug, Clone)]
struct PipelineFlags {
    /// Boundary term weight in the edge length.
    #[arg(long)]
    beta: Option<f64>,
    /// Sinkhorn regularization coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "sinkhorn-iters")]
    sinkhorn_iters: Option<usize>,
    /// equal_division | nearest_gt | nearest_centroid
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long = "centroid-iters")]
    centroid_iters: Option<usize>,
    /// max | high_only | low_only
    #[arg(long = "boundary-combine")]
    boundary_combine: Option<String>,
    /// Rebuild solver costs from the refined centroids.
    #[arg(long = "cost-from-centroids")]
    cost_from_centroids: bool,
    /// Run Sinkhorn updates in log space.
    #[arg(long = "log-domain")]
    log_domain: bool,
    /// Divide costs by their maximum before exponentiation.
    #[arg(long = "normalize-cost")]
    normalize_cost: Option<bool>,
    /// Constant added to every edge weight.
    #[arg(long = "edge-floor")]
    edge_floor: Option<f64>,
    /// `key = value` config file merged under explicit flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Semantic class-probability map (PFM planes + .meta sidecar).
    #[arg(long)]
    semantic: PathBuf,
    /// High-level boundary map (one-channel PFM); zeros when absent.
    #[arg(long = "boundary-high")]
    boundary_high: Option<PathBuf>,
    /// Low-level boundary map; overrides the gradient proxy from --image.
    #[arg(long = "boundary-low")]
    boundary_low: Option<PathBuf>,
    /// RGB image (color PFM); its gradient magnitude stands in for a
    /// missing low-level boundary map.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Point annotations (`target_id class_id kind x y` lines).
    #[arg(long)]
    points: PathBuf,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Report file (stable JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    semantic: PathBuf,
    #[arg(long = "boundary-high")]
    boundary_high: Option<PathBuf>,
    #[arg(long = "boundary-low")]
    boundary_low: Option<PathBuf>,
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    points: PathBuf,
    /// Ground-truth mask; adds IoU and panoptic-quality deltas to the report.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[command(flatten)]
    pipeline: PipelineFlags,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description file.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct LossesArgs {
    #[arg(long)]
    semantic: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    points: PathBuf,
    /// Pseudo-mask the boundary loss pairs are classified against.
    #[arg(long)]
    mask: PathBuf,
    /// Boundary map the boundary loss is evaluated on.
    #[arg(long = "boundary-high")]
    boundary_high: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Coordinates sampled per loss for the gradient check.
    #[arg(long = "fd-coords", default_value_t = 32)]
    fd_coords: usize,
    #[arg(long = "fd-step", default_value_t = 1e-6)]
    fd_step: f64,
    #[arg(long = "fd-seed", default_value_t = 0)]
    fd_seed: u64,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    theta1: Option<f64>,
    #[arg(long)]
    theta2: Option<f64>,
}

fn resolve_jobs(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("OTMASK_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // usage problems exit 1, as do validation errors
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let jobs = resolve_jobs(cli.jobs);
    if jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: failed to configure {jobs} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Generate(args) => commands::generate(args, jobs),
        Command::Evaluate(args) => commands::evaluate(args, jobs),
        Command::Compare(args) => commands::compare(args, jobs),
        Command::Synth(args) => commands::synth(args, jobs),
        Command::Losses(args) => commands::losses(args, jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let internal = err
                .downcast_ref::<otmask_core::Error>()
                .map(|e| matches!(e, otmask_core::Error::Internal(_)))
                .unwrap_or(false);
            ExitCode::from(if internal { 2 } else { 1 })
        }
    }
}
