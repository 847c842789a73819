//! `tacstereo`: simulate tactile scenes, reconstruct, calibrate, stitch and
//! evaluate.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! algorithm failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use tacstereo::dtrc::PatternSpec;
use tacstereo::pipeline::{self, PipelineConfig, PipelineError, PressOutcome};
use tacstereo::simulator::{pattern_inradius, preset, Scene, PRESET_NAMES};

#[derive(Parser)]
#[command(name = "tacstereo", version, about = "Stereo marker tactile reconstruction toolkit")]
struct Cli {
    /// Seed for every random draw (pixel noise).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a scene directory of stereo frames and ground truth.
    Simulate {
        /// Built-in scene (see --list-presets).
        #[arg(long, conflicts_with = "scene")]
        preset: Option<String>,
        /// Scene description file (TOML).
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, required_unless_present = "list_presets")]
        out: Option<PathBuf>,
        /// Override the scene's pixel noise standard deviation.
        #[arg(long)]
        noise: Option<f64>,
        /// Write marker CSVs only, no PNG frames.
        #[arg(long)]
        no_images: bool,
        #[arg(long)]
        list_presets: bool,
    },
    /// Fit the gel refractive index from a sweep scene or a sweep CSV.
    Calibrate {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the inverse pipeline on every press of a scene directory.
    Reconstruct {
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Calibration record overriding the config.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Merge reconstructed patches into one heightmap.
    Stitch {
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare a reconstruction with a scene's ground truth.
    Evaluate {
        #[arg(long)]
        scene: PathBuf,
        /// Point file (.ply, .csv) or heightmap sidecar (.json).
        #[arg(long)]
        recon: PathBuf,
        /// Evaluate against one press's skin over its contact region.
        #[arg(long)]
        press: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        bin_width: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the parameters of the supported marker patterns.
    PatternInfo,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.cmd {
        Cmd::Simulate { preset: name, scene, out, noise, no_images, list_presets } => {
            if list_presets {
                for p in PRESET_NAMES {
                    println!("{p}");
                }
                return Ok(());
            }
            let (mut s, base) = match (name, scene) {
                (Some(n), None) => (
                    preset(&n).ok_or_else(|| PipelineError::Config(format!("unknown preset {n:?}")))?,
                    PathBuf::from("."),
                ),
                (None, Some(p)) => {
                    let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                    (Scene::load(&p)?, base)
                }
                _ => return Err(PipelineError::Config("give exactly one of --preset or --scene".into())),
            };
            if let Some(n) = noise {
                s.render.noise = n;
            }
            if no_images {
                s.render_images = false;
            }
            let out = out.expect("clap requires --out");
            let m = pipeline::simulate_scene(&s.prepare(&base)?, cli.seed, &out)?;
            println!("{}: {} presses -> {}", m.name, m.presses.len(), out.display());
        }
        Cmd::Calibrate { input, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let rec = pipeline::calibrate(&input, &cfg, &out, timestamp())?;
            println!("n_gel = {:.6} (residual rms {:.3e} mm) -> {}", rec.n_gel, rec.residual_rms, out.display());
        }
        Cmd::Reconstruct { scene, out, config, calibration } => {
            let mut cfg = load_config(config.as_deref())?;
            if calibration.is_some() {
                cfg.calibration = calibration;
            }
            let out = out.or_else(|| cfg.output.clone()).unwrap_or_else(|| scene.join("recon"));
            let report = pipeline::reconstruct_scene(&scene, &cfg, &out)?;
            for p in &report.presses {
                match &p.outcome {
                    PressOutcome::Ok { markers, points, .. } => {
                        println!("press {:3}: ok, {markers} markers, {points} patch points", p.index)
                    }
                    PressOutcome::Skipped { reason } => eprintln!("press {:3}: skipped: {reason}", p.index),
                }
            }
            if report.succeeded() == 0 {
                return Err(PipelineError::Failed("every press failed".into()));
            }
        }
        Cmd::Stitch { patches, out, config } => {
            let cfg = load_config(config.as_deref())?;
            let s = pipeline::stitch_dir(&patches, &cfg.stitch, &out)?;
            println!(
                "{} merged points ({} before merging), {}x{} grid -> {}",
                s.merged.len(),
                s.naive.len(),
                s.grid.cols,
                s.grid.rows,
                out.display()
            );
        }
        Cmd::Evaluate { scene, recon, press, bin_width, out } => {
            if !(bin_width > 0.0) {
                return Err(PipelineError::Config(format!("--bin-width must be positive, got {bin_width}")));
            }
            let pts = pipeline::load_recon_points(&recon)?;
            let report = pipeline::evaluate(&scene, &pts, press, bin_width)?;
            pipeline::write_evaluation(&report, &out)?;
            println!("{} points, rms {:.4} mm, max {:.4} mm", report.points, report.rms, report.max_abs);
            if let Some(s) = report.sine {
                println!(
                    "upper rms {:.4} mm, valley gap {:.4} mm over {} periods",
                    s.upper_rms, s.valley_gap, s.periods
                );
            }
        }
        Cmd::PatternInfo => {
            println!("{:<10} {:>3} {:>3} {:>7} {:>12}  rings", "pattern", "l", "m", "markers", "inradius_mm");
            for spec in [PatternSpec::circular(), PatternSpec::hexagon(), PatternSpec::square()] {
                println!(
                    "{:<10} {:>3} {:>3} {:>7} {:>12.3}  {:?}",
                    format!("{:?}", spec.kind).to_lowercase(),
                    spec.l,
                    spec.m,
                    spec.expected_count,
                    pattern_inradius(&spec, 2.54),
                    spec.ring_sizes()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
