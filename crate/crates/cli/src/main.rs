//! `posmatch` command-line tool.
//!
//! Exit codes: 0 success, 1 failed self-test, 2 invalid input, 3 numerical
//! failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod docs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posmatch::config::Mode;
use posmatch::geometry::{SubsampleMode, WarpKind};

#[derive(Parser, Debug)]
#[command(name = "posmatch", version, about = "Position-aware point cloud matching and registration")]
pub struct Cli {
    /// JSON run configuration; missing keys take the preset of its `mode`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic pair with ground truth and coordinate features.
    Synth(SynthArgs),
    /// Voxel-grid subsample a PLY cloud.
    Subsample(SubsampleArgs),
    /// Run the two-pass matcher on precomputed features.
    Match(MatchArgs),
    /// Match (or read matches), then RANSAC to a rigid transform.
    RegisterRigid(RegisterArgs),
    /// Match (or read matches), then non-rigid ICP over a deformation graph.
    RegisterNonrigid(NonrigidArgs),
    /// Metric report against ground truth.
    Eval(EvalArgs),
    /// Run the acceptance checks.
    Selftest(SelftestArgs),
    /// Print the effective configuration.
    Config(ConfigArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// `rigid`, `bend`, `twist` or `wave`; defaults by configured mode.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    /// Shared fraction of points (rigid pairs).
    #[arg(long, default_value_t = 0.5)]
    pub overlap: f64,
    /// Gaussian noise sigma in meters (rigid pairs).
    #[arg(long, default_value_t = 0.005)]
    pub noise: f64,
    /// Warp strength (deformable pairs).
    #[arg(long, default_value_t = 0.1)]
    pub magnitude: f64,
    /// Length scale of the coordinate features, meters.
    #[arg(long, default_value_t = 0.1)]
    pub feature_bandwidth: f64,
    /// Average feature row norm.
    #[arg(long, default_value_t = 12.0)]
    pub feature_scale: f64,
}

#[derive(Args, Debug)]
pub struct SubsampleArgs {
    pub input: PathBuf,
    /// Voxel size in meters; defaults to the configured value.
    #[arg(long)]
    pub voxel: Option<f64>,
    #[arg(long, value_parser = parse_subsample_mode)]
    pub mode: Option<SubsampleMode>,
}

#[derive(Args, Debug)]
pub struct PairArgs {
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
}

#[derive(Args, Debug)]
pub struct FeatureArgs {
    /// Source features, one row per point.
    #[arg(long)]
    pub source_features: Option<PathBuf>,
    #[arg(long)]
    pub target_features: Option<PathBuf>,
    /// Pipeline weights; pass-through weights when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Correspondence JSON to use instead of matching.
    #[arg(long)]
    pub matches: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct NonrigidArgs {
    #[command(flatten)]
    pub register: RegisterArgs,
    /// Use the correspondences of a ground-truth document.
    #[arg(long)]
    pub gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long)]
    pub gt: PathBuf,
    /// Predicted correspondences, for IR, FMR and NFMR.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    /// Estimated rigid transform, for RMSE and RR.
    #[arg(long)]
    pub transform: Option<PathBuf>,
    /// Warped source cloud, for EPE and accuracy.
    #[arg(long)]
    pub warped: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    /// Comma-separated criterion ids; all when absent.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u32>,
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: posmatch::Error| e.to_string())
}

fn parse_subsample_mode(s: &str) -> Result<SubsampleMode, String> {
    match s {
        "centroid" => Ok(SubsampleMode::Centroid),
        "representative" => Ok(SubsampleMode::Representative),
        other => Err(format!("unknown subsample mode `{other}`")),
    }
}

pub fn parse_kind(s: &str) -> posmatch::Result<Option<WarpKind>> {
    if s == "rigid" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
