//! `needlevib` command-line tool.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use needlevib::phantom::EntrySide;

use crate::config::RunConfig;

/// Exit codes.
const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_NO_DETECTION: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "needlevib", version, about = "Locate a vibrating needle in B-mode sequences")]
struct Cli {
    /// Flat JSON config; flags override its keys.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Phantom seed (gen) or first calibration seed (calibrate).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom sequence and its ground truth.
    Gen(GenArgs),
    /// Detect the needle in a sequence.
    Detect(DetectArgs),
    /// Replay a sequence frame by frame through the streaming detector.
    Stream(StreamArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Export one pixel's spectrogram.
    Spectro(SpectroArgs),
    /// Recompute the low-confidence threshold from needle-free phantoms.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
struct PhantomFlags {
    /// Named preset: `paper` or `bin-aligned`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fps: Option<f64>,
    /// Pixel spacing in mm.
    #[arg(long)]
    spacing: Option<f64>,
    /// Shaft direction in degrees from +x towards +y.
    #[arg(long = "angle-deg")]
    angle_deg: Option<f64>,
    #[arg(long = "entry-x", requires = "entry_y")]
    entry_x: Option<f64>,
    #[arg(long = "entry-y", requires = "entry_x")]
    entry_y: Option<f64>,
    /// Needle length in pixels.
    #[arg(long)]
    length: Option<f64>,
    /// Transverse displacement amplitude in pixels.
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long = "motion-sigma")]
    motion_sigma: Option<f64>,
    #[arg(long)]
    visibility: Option<f64>,
    #[arg(long)]
    artifacts: Option<usize>,
    #[arg(long)]
    grain: Option<f64>,
}

#[derive(Debug, Args)]
struct DetectFlags {
    /// Vibration frequency in Hz.
    #[arg(long = "vib-hz")]
    vib_hz: Option<f64>,
    /// STFT window length in frames.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long = "theta-step")]
    theta_step: Option<f64>,
    #[arg(long = "rho-step")]
    rho_step: Option<f64>,
    /// Percent of Hough cells used for the tip vote.
    #[arg(long = "top-p")]
    top_p: Option<f64>,
    /// Border the needle enters from.
    #[arg(long = "entry-side")]
    entry_side: Option<EntrySide>,
    #[arg(long = "profile-threshold")]
    profile_threshold: Option<f64>,
    #[arg(long = "profile-smooth")]
    profile_smooth: Option<usize>,
    #[arg(long = "confidence-min")]
    confidence_min: Option<f64>,
    #[arg(long = "t-min")]
    t_min: Option<usize>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    phantom: PhantomFlags,
    #[arg(long = "vib-hz")]
    vib_hz: Option<f64>,
    #[arg(long = "entry-side")]
    entry_side: Option<EntrySide>,
    /// Output sequence; the ground truth goes next to it as `<stem>.gt.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DetectArgs {
    input: PathBuf,
    #[command(flatten)]
    detect: DetectFlags,
    /// Detection JSON path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Two-channel Hough output (shaft, tip).
    #[arg(long = "emit-hough")]
    emit_hough: Option<PathBuf>,
    /// Rendered ground-truth Hough channels; needs `--gt`.
    #[arg(long = "emit-hough-gt", requires = "gt")]
    emit_hough_gt: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Energy map as a one-channel map.
    #[arg(long = "emit-energy")]
    emit_energy: Option<PathBuf>,
    /// Per-stage timing JSON.
    #[arg(long)]
    timing: Option<PathBuf>,
    /// Directory for 8-bit PGM previews of the energy and Hough images.
    #[arg(long = "preview-dir")]
    preview_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StreamArgs {
    input: PathBuf,
    #[command(flatten)]
    detect: DetectFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of `<id>.json` detections.
    #[arg(long = "pred-dir", requires = "gt_dir")]
    pred_dir: Option<PathBuf>,
    /// Directory of `<id>.gt.json` ground truths.
    #[arg(long = "gt-dir", requires = "pred_dir")]
    gt_dir: Option<PathBuf>,
    #[arg(long = "angle-thresh", default_value_t = needlevib::metrics::DEFAULT_ANGLE_THRESH)]
    angle_thresh: f64,
    #[arg(long = "tip-thresh", default_value_t = needlevib::metrics::DEFAULT_TIP_THRESH)]
    tip_thresh: f64,
    /// Per-record CSV report.
    #[arg(long = "out-csv")]
    out_csv: Option<PathBuf>,
    /// Aggregate JSON (stdout if omitted).
    #[arg(long = "out-json")]
    out_json: Option<PathBuf>,
    /// Predicted two-channel Hough map, scored against `--hough-gt`.
    #[arg(long = "hough", requires = "hough_gt")]
    hough: Option<PathBuf>,
    #[arg(long = "hough-gt", requires = "hough")]
    hough_gt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SpectroArgs {
    input: PathBuf,
    #[arg(long)]
    x: usize,
    #[arg(long)]
    y: usize,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    /// Power spectrogram (bins x windows) as a one-channel map.
    #[arg(long)]
    out: PathBuf,
    /// Plot-ready CSV: window_index,bin_freq_hz,power.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[command(flatten)]
    phantom: PhantomFlags,
    #[command(flatten)]
    detect: DetectFlags,
    /// Number of needle-free phantoms.
    #[arg(long, default_value_t = 200)]
    count: u64,
}

impl PhantomFlags {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            preset: self.preset.clone(),
            height: self.height,
            width: self.width,
            frame_count: self.frames,
            fps: self.fps,
            pixel_spacing: self.spacing,
            needle_angle: self.angle_deg,
            needle_entry: self.entry_x.zip(self.entry_y),
            needle_length: self.length,
            vib_amplitude: self.amplitude,
            motion_sigma: self.motion_sigma,
            visibility: self.visibility,
            artifact_count: self.artifacts,
            speckle_grain: self.grain,
            ..Default::default()
        }
    }
}

impl DetectFlags {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            vib_freq: self.vib_hz,
            window_len: self.window,
            hop: self.hop,
            theta_step: self.theta_step,
            rho_step: self.rho_step,
            top_p: self.top_p,
            entry_side: self.entry_side,
            profile_threshold: self.profile_threshold,
            profile_smooth: self.profile_smooth,
            confidence_min: self.confidence_min,
            t_min: self.t_min,
            ..Default::default()
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<needlevib::Error>() {
            return match e {
                needlevib::Error::Io { .. } => EXIT_IO,
                needlevib::Error::NoDetection(_) | needlevib::Error::NoTip => EXIT_NO_DETECTION,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| needlevib::Error::Validation(format!("--threads {n}: {e}")))?;
    }
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let global = RunConfig { seed: cli.seed, ..Default::default() };
    let base = file.overlay(global)?;

    match cli.command {
        Command::Gen(args) => {
            let flags = RunConfig {
                vib_freq: args.vib_hz,
                entry_side: args.entry_side,
                ..args.phantom.to_config()
            };
            commands::gen(&base.overlay(flags)?, &args.out)
        }
        Command::Detect(args) => {
            let cfg = base.overlay(args.detect.to_config())?;
            commands::detect(&cfg, &args)
        }
        Command::Stream(args) => {
            let cfg = base.overlay(args.detect.to_config())?;
            commands::stream(&cfg, &args.input)
        }
        Command::Eval(args) => commands::eval(&base, &args),
        Command::Spectro(args) => {
            let flags = RunConfig { window_len: args.window, hop: args.hop, ..Default::default() };
            commands::spectro(&base.overlay(flags)?, &args)
        }
        Command::Calibrate(args) => {
            let cfg = base
                .overlay(args.phantom.to_config())?
                .overlay(args.detect.to_config())?;
            commands::calibrate(&cfg, args.count)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
