//! Command-line surface.
//!
//! Exit codes: 0 success, 1 validation or I/O failure, 2 solver
//! non-convergence (output still written), 3 evaluation against an
//! all-invalid ground truth.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dataset::{
    read_depth_png, read_float_raster, read_mask_png, write_depth_png, write_float_raster,
    write_mask_png,
};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::oracle::synth_scene;
use crate::poisson::{densify, scale_shift_align, CgSettings, SolveReport};
use crate::refine::{handcrafted_features, refine};

#[derive(Parser)]
#[command(
    name = "depthfuse",
    version,
    about = "Densify sparse metric depth against a dense relative prior, refine it, and evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse sparse anchors (16-bit depth PNG) with a dense prior (PFM).
    Densify(DensifyArgs),
    /// Refine an initial depth map with affinity propagation.
    Refine(RefineArgs),
    /// Masked metrics for a prediction against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic scene (gt, prior, sparse, mask).
    Synth(SynthArgs),
}

#[derive(Args)]
struct DensifyArgs {
    /// Sparse metric anchors, 16-bit depth PNG.
    #[arg(long)]
    sparse: PathBuf,
    /// Dense relative prior, grayscale PFM.
    #[arg(long)]
    prior: PathBuf,
    /// Least-squares align the prior to the anchors first.
    #[arg(long)]
    align: bool,
    /// CG relative residual tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// CG iteration cap (default scales with the unknown count).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output depth PNG.
    #[arg(long, default_value = "pseudo_depth.png")]
    out: PathBuf,
    /// Append the solve report as a CSV row.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    /// Initial depth, 16-bit depth PNG.
    #[arg(long)]
    init: PathBuf,
    /// Raw sensor depth, 16-bit depth PNG.
    #[arg(long)]
    sensor: PathBuf,
    /// Observation mask PNG (any nonzero code counts as observed).
    #[arg(long)]
    mask: PathBuf,
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output depth PNG.
    #[arg(long, default_value = "refined.png")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction, 16-bit depth PNG.
    #[arg(long)]
    pred: PathBuf,
    /// Ground truth, 16-bit depth PNG (0 = invalid).
    #[arg(long)]
    gt: PathBuf,
    /// Dataset maximum depth in meters (loss normalization).
    #[arg(long = "d-max", default_value_t = 90.0)]
    d_max: f64,
    /// Append the report as a CSV row.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    seed: u64,
    /// Directory for gt.png, prior.pfm, sparse.png, mask.png.
    #[arg(long)]
    outdir: PathBuf,
}

/// Parses and runs a full invocation, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Densify(args) => cmd_densify(&args),
        Command::Refine(args) => cmd_refine(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Synth(args) => cmd_synth(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    Ok(())
}

/// Prints a status line, tolerating a closed stdout (e.g. piped to `head`).
fn emit(line: String) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn cmd_densify(args: &DensifyArgs) -> Result<i32> {
    require_exists(&args.sparse)?;
    require_exists(&args.prior)?;
    let sparse = read_depth_png(&args.sparse)?;
    let mut prior = read_float_raster(&args.prior)?;

    if args.align {
        let (aligned, scale, shift) = scale_shift_align(&prior, &sparse)?;
        emit(format!("align: scale={scale} shift={shift}"));
        prior = aligned;
    }

    let settings = CgSettings {
        rel_tolerance: args.tol,
        max_iterations: args.max_iters,
        ..CgSettings::default()
    };
    let (grid, report) = densify(&sparse, &prior, &settings)?;
    write_depth_png(&grid, &args.out)?;
    emit(format!(
        "densify: iterations={} rel_residual={} converged={} out={}",
        report.iterations,
        report.final_rel_residual,
        report.converged,
        args.out.display()
    ));
    if let Some(path) = &args.report {
        append_csv_row(
            path,
            "iterations,final_rel_residual,converged",
            &solve_report_row(&report),
        )?;
    }
    Ok(if report.converged { 0 } else { 2 })
}

fn solve_report_row(report: &SolveReport) -> String {
    format!(
        "{},{},{}",
        report.iterations, report.final_rel_residual, report.converged
    )
}

fn cmd_refine(args: &RefineArgs) -> Result<i32> {
    for path in [&args.init, &args.sensor, &args.mask, &args.config] {
        require_exists(path)?;
    }
    let init = read_depth_png(&args.init)?;
    let sensor = read_depth_png(&args.sensor)?;
    let mask = read_mask_png(&args.mask)?;
    let config = RunConfig::load(&args.config)?;

    // No image channel on this surface; the initialization doubles as the
    // intensity input for the handcrafted features.
    let features = handcrafted_features(&init, &init)?;
    let refined = refine(&init, &sensor, &mask, &features, &config.refine)?;
    write_depth_png(&refined, &args.out)?;
    emit(format!(
        "refine: iterations={} out={}",
        config.refine.iterations,
        args.out.display()
    ));
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    require_exists(&args.pred)?;
    require_exists(&args.gt)?;
    let pred = read_depth_png(&args.pred)?;
    let gt = read_depth_png(&args.gt)?;
    let report = evaluate(&pred, &gt, args.d_max)?;
    emit(report.to_kv_block());
    if let Some(path) = &args.csv {
        append_csv_row(
            path,
            crate::metrics::EvalReport::csv_header(),
            &report.to_csv_row(),
        )?;
    }
    if gt.values().iter().all(|&v| v == 0.0) {
        eprintln!("warning: ground truth has no valid pixels; metrics use n=1");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let scene = synth_scene(args.height, args.width, args.seed)?;
    std::fs::create_dir_all(&args.outdir)?;
    write_depth_png(&scene.dense_gt, args.outdir.join("gt.png"))?;
    write_float_raster(&scene.prior, args.outdir.join("prior.pfm"))?;
    write_depth_png(&scene.sparse, args.outdir.join("sparse.png"))?;
    write_mask_png(&scene.mask, args.outdir.join("mask.png"))?;
    emit(format!(
        "synth: seed={} wrote gt.png prior.pfm sparse.png mask.png under {}",
        args.seed,
        args.outdir.display()
    ));
    Ok(0)
}

/// Appends one CSV row, writing the header first when the file is new/empty.
fn append_csv_row(path: &Path, header: &str, row: &str) -> Result<()> {
    let needs_header = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if needs_header {
        writeln!(file, "{header}")?;
    }
    writeln!(file, "{row}")?;
    Ok(())
}
