//! `omnidepth`: synthesize 360° benchmark sequences, align stereo pairs,
//! evaluate consistency losses, refine depth and score the result.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omnidepth::disparity::WeightMode;
use omnidepth::optimizer::UpdateRule;
use omnidepth::temporal::PairPolicy;

#[derive(Debug, Parser)]
#[command(name = "omnidepth", version, about = "360° depth synthesis, alignment and test-time refinement")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct GlobalOpts {
    /// ERP width in pixels (render, convert to ERP).
    #[arg(long, global = true)]
    width: Option<usize>,

    /// ERP height in pixels (render, convert to ERP).
    #[arg(long, global = true)]
    height: Option<usize>,

    /// Seed for procedural scenes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 0 uses every core. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Distortion weight: `paper` or `polar_only`.
    #[arg(long, global = true, default_value = "paper", value_parser = parse_weight_mode)]
    weight_mode: WeightMode,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ray-cast a synthetic sequence with exact depth and flow.
    Render(RenderArgs),
    /// Rotate a frame pair so its baseline lies along +z.
    Adjust(AdjustArgs),
    /// Report geometric and temporal consistency losses.
    Loss(LossArgs),
    /// Refine depth maps by minimizing the combined loss.
    Optimize(OptimizeArgs),
    /// Score predicted depth against ground truth.
    Eval(EvalArgs),
    /// Convert between ERP and a horizontal cubemap strip.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Scene description file; a random scene from `--seed` otherwise.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    frames: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AdjustArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, num_args = 2, value_names = ["J", "K"])]
    pair: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Largest tolerated |vertical| / |translation| ratio.
    #[arg(long, default_value_t = omnidepth::alignment::DEFAULT_MAX_VERTICAL_RATIO)]
    max_vertical_ratio: f64,
}

#[derive(Debug, Clone, Args)]
struct LossOpts {
    /// Which ordered pairs enter the loss.
    #[arg(long, default_value = "consecutive_and_ends", value_parser = parse_pair_policy)]
    pairs: PairPolicy,
    #[arg(long, default_value_t = omnidepth::disparity::DEFAULT_MIN_COVERAGE)]
    min_coverage: f64,
    /// Skip the geometric term of low-coverage pairs instead of failing.
    #[arg(long)]
    skip_insufficient: bool,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Report the geometric term.
    #[arg(long)]
    geometric: bool,
    /// Report the temporal term.
    #[arg(long)]
    temporal: bool,
    /// Restrict to one frame pair (both directions).
    #[arg(long, num_args = 2, value_names = ["J", "K"])]
    pair: Option<Vec<usize>>,
    /// Depth maps to score, one per frame; the sequence's own otherwise.
    #[arg(long, num_args = 1..)]
    depth: Vec<PathBuf>,
    #[command(flatten)]
    opts: LossOpts,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Initial depth maps, one per frame; the sequence's own otherwise.
    #[arg(long, num_args = 1..)]
    init: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long)]
    out: PathBuf,
    /// Initial step in log-depth units.
    #[arg(long, default_value_t = 0.05)]
    step_size: f64,
    /// `rprop` or `gd`.
    #[arg(long, default_value = "rprop", value_parser = parse_update_rule)]
    update: UpdateRule,
    /// Pixels per coarse correction cell along each axis.
    #[arg(long, default_value_t = omnidepth::optimizer::DEFAULT_DOWNSAMPLE)]
    downsample: usize,
    #[arg(long, default_value_t = 1.0)]
    geometric_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    temporal_weight: f64,
    #[arg(long, default_value_t = omnidepth::optimizer::DEFAULT_DEPTH_MIN)]
    depth_min: f64,
    #[arg(long, default_value_t = omnidepth::optimizer::DEFAULT_DEPTH_MAX)]
    depth_max: f64,
    #[command(flatten)]
    opts: LossOpts,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    gt: Vec<PathBuf>,
    /// Validity masks (PFM, nonzero = valid), one per prediction.
    #[arg(long, num_args = 1..)]
    mask: Vec<PathBuf>,
    /// Also append the rows to this table file.
    #[arg(long)]
    append: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Projection {
    Cubemap,
    Erp,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// PNG or PFM image.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Target projection.
    #[arg(long, value_enum)]
    to: Projection,
    /// Cube face size; defaults to a quarter of the ERP width.
    #[arg(long)]
    face_size: Option<usize>,
}

fn parse_weight_mode(s: &str) -> Result<WeightMode, String> {
    s.parse().map_err(|e: omnidepth::Error| e.to_string())
}

fn parse_pair_policy(s: &str) -> Result<PairPolicy, String> {
    s.parse().map_err(|e: omnidepth::Error| e.to_string())
}

fn parse_update_rule(s: &str) -> Result<UpdateRule, String> {
    s.parse().map_err(|e: omnidepth::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    eprintln!("{}", commands::config_echo(&cli));
    if cli.global.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 3 for numerical failures inside the pipeline, 2 for everything the user
/// can fix by changing inputs or flags.
fn exit_code(e: &omnidepth::Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use omnidepth::Error;

    #[test]
    fn exit_codes() {
        let numerical = Error::Numerical {
            source_frame: 0,
            target_frame: 1,
            x: 3,
            y: 4,
            what: "gradient is NaN".into(),
        };
        assert_eq!(exit_code(&numerical), 3);
        assert_eq!(exit_code(&Error::NonFinite { index: 0 }), 2);
        assert_eq!(exit_code(&Error::StaticViewpoint), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
