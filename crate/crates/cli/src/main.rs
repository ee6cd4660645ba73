use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Offset-free mapping of TOA/TDOA matrices: simulation, validation and geometry recovery.
#[derive(Debug, Parser)]
#[command(name = "tdoamap", version)]
struct Cli {
    /// Worker threads for parallel trials and restarts (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo check of the TOA/TDOA identity on random scenes.
    Simulate(SimulateArgs),
    /// Identity and zero-mean checks on a measured TOA matrix.
    Validate(ValidateArgs),
    /// Inject random clock offsets into a measured TOA matrix.
    Ingest(IngestArgs),
    /// Recover microphone and source positions from a mapped matrix.
    Localize(LocalizeArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    mics: u32,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u32).range(1..))]
    srcs: u32,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    /// Room size in meters as LxWxH.
    #[arg(long, default_value = "10x10x3", value_parser = parse_room)]
    room: [f64; 3],
    /// Speed of sound, m/s.
    #[arg(long, default_value_t = 340.0, value_parser = positive_f64)]
    speed: f64,
    /// Offsets are drawn from [-R, R] seconds.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    offset_range: f64,
    #[arg(long)]
    seed: u64,
    /// Tolerance on residuals and column means, seconds.
    #[arg(long, default_value_t = 1e-12, value_parser = positive_f64)]
    tol: f64,
    /// Report JSON output.
    #[arg(long)]
    report: PathBuf,
    /// Histogram CSV of all mapped values.
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u32).range(1..))]
    bins: u32,
    /// Histogram covers [-H, H] seconds.
    #[arg(long, default_value_t = 0.1, value_parser = positive_f64)]
    hist_range: f64,
    /// Write the first trial's scene as JSON.
    #[arg(long)]
    scene_out: Option<PathBuf>,
    /// Write the first trial's TOA matrix as CSV.
    #[arg(long)]
    toa_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    toa: PathBuf,
    #[arg(long, default_value_t = 0)]
    ref_mic: usize,
    #[arg(long, default_value_t = 0)]
    ref_src: usize,
    #[arg(long, default_value_t = 1e-12, value_parser = positive_f64)]
    tol: f64,
    #[arg(long)]
    report: PathBuf,
    /// Skip the first line of the CSV.
    #[arg(long)]
    header: bool,
    /// Multiply every entry on load (e.g. 1e-3 for milliseconds).
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Write the TOA-mapped matrix as CSV.
    #[arg(long)]
    mapped_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    toa: PathBuf,
    #[arg(long, default_value_t = 1.0, value_parser = non_negative_f64)]
    offset_range: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long)]
    header: bool,
    /// Offset-injected TOA matrix, CSV.
    #[arg(long)]
    out: PathBuf,
    /// Drawn offsets, JSON.
    #[arg(long)]
    audit: PathBuf,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    /// Mapped matrix CSV.
    #[arg(long)]
    mapped: PathBuf,
    #[arg(long, default_value_t = 340.0, value_parser = positive_f64)]
    speed: f64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    restarts: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    ref_src: usize,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    max_iter: u32,
    /// Scene JSON whose positions seed the first restart (random otherwise).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Ground-truth scene JSON; prints the Procrustes RMSE.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// With --truth, fail when the RMSE (m) exceeds this.
    #[arg(long, requires = "truth", value_parser = positive_f64)]
    rmse_tol: Option<f64>,
    /// Estimate JSON output.
    #[arg(long)]
    out: PathBuf,
}

fn parse_room(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("expected LxWxH, got {s:?}"));
    }
    let mut room = [0.0; 3];
    for (side, part) in room.iter_mut().zip(parts) {
        *side = positive_f64(part)?;
    }
    Ok(room)
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn non_negative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        _ => Err(format!("expected a non-negative number, got {s:?}")),
    }
}

/// Exit status for runs whose tolerance checks failed.
const EXIT_CHECK_FAILED: u8 = 1;
/// Exit status for usage, input and I/O errors.
const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.into())
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }

    let outcome = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Validate(args) => commands::validate(args),
        Command::Ingest(args) => commands::ingest(args),
        Command::Localize(args) => commands::localize(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
