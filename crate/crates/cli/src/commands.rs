use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use serde::Serialize;

use needlevib::hough::HoughMap;
use needlevib::metrics::{evaluate_batch, Thresholds};
use needlevib::phantom::{synth_sequence, GroundTruth};
use needlevib::pipeline::{calibrate_confidence_min, detect_full, emit_hough_channels, StreamState};
use needlevib::scoring::hybrid_loss;
use needlevib::sequence::{load_sequence, save_sequence};
use needlevib::spectral::{stft, SpectralBasis};
use needlevib::vibmap::{pgm_preview, VibMap};
use needlevib::Error;

use crate::config::RunConfig;
use crate::{DetectArgs, EvalArgs, SpectroArgs, EXIT_NO_DETECTION};

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())).into())
}

/// `a.vibseq` -> `a.gt.json`.
pub fn gt_path(seq_path: &Path) -> PathBuf {
    seq_path.with_extension("gt.json")
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<ExitCode> {
    let spec = cfg.phantom()?;
    let (seq, gt) = synth_sequence(&spec)?;
    save_sequence(&seq, out)?;
    let gt_out = gt_path(out);
    write_json(&gt_out, &gt)?;
    eprintln!("wrote {} and {}", out.display(), gt_out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn detect(cfg: &RunConfig, args: &DetectArgs) -> Result<ExitCode> {
    let dcfg = cfg.detect()?;
    let gt: Option<GroundTruth> = args.gt.as_deref().map(read_json).transpose()?;
    let seq = load_sequence(&args.input)?;
    let out = detect_full(&seq, &dcfg)?;

    match &args.out {
        Some(path) => write_json(path, &out.detection)?,
        None => println!("{}", serde_json::to_string(&out.detection)?),
    }
    if let Some(path) = &args.timing {
        write_json(path, &out.timings)?;
    }
    if let Some(path) = &args.emit_energy {
        VibMap::from_f64(&[&out.energy.values])?.save(path)?;
    }
    if let Some(dir) = &args.preview_dir {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
        write_file(&dir.join("energy.pgm"), pgm_preview(&out.energy.values))?;
        write_file(&dir.join("hough.pgm"), pgm_preview(&out.hough))?;
    }
    if args.emit_hough.is_some() || args.emit_hough_gt.is_some() {
        let channels = emit_hough_channels(&seq, &dcfg, gt.as_ref())?;
        if let Some(path) = &args.emit_hough {
            let p = &channels.prediction;
            VibMap::from_f64(&[&p.shaft, &p.tip])?.save(path)?;
            if let Some(dir) = &args.preview_dir {
                write_file(&dir.join("hough_tip.pgm"), pgm_preview(&p.tip))?;
            }
        }
        if let (Some(path), Some(g)) = (&args.emit_hough_gt, &channels.ground_truth) {
            VibMap::from_f64(&[&g.shaft, &g.tip])?.save(path)?;
        }
    }

    if out.detection.tip().is_none() {
        eprintln!("no needle detected in {}", args.input.display());
        return Ok(ExitCode::from(EXIT_NO_DETECTION));
    }
    if out.detection.low_confidence {
        eprintln!("warning: low-confidence detection (confidence {:.3})", out.detection.confidence);
    }
    Ok(ExitCode::SUCCESS)
}

pub fn stream(cfg: &RunConfig, input: &Path) -> Result<ExitCode> {
    let dcfg = cfg.detect()?;
    let seq = load_sequence(input)?;
    let mut state = StreamState::for_sequence(&seq, dcfg)?;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let mut emitted = 0usize;
    for t in 0..seq.frame_count() {
        if let Some(det) = state.push(seq.frame(t))? {
            writeln!(lock, "{}", serde_json::to_string(&det)?).context("writing to stdout")?;
            emitted += 1;
        }
    }
    if emitted == 0 {
        return Err(Error::NoDetection(format!(
            "{} frames is fewer than the warm-up length",
            seq.frame_count()
        ))
        .into());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_hough(path: &Path) -> Result<HoughMap> {
    let map = VibMap::load(path)?;
    let [shaft, tip] = map.channels.as_slice() else {
        return Err(Error::Validation(format!(
            "{}: expected 2 channels, found {}",
            path.display(),
            map.channels.len()
        ))
        .into());
    };
    Ok(HoughMap {
        shaft: shaft.mapv(f64::from),
        tip: tip.mapv(f64::from),
    })
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<ExitCode> {
    let params = cfg.loss()?;
    if args.pred_dir.is_none() && args.hough.is_none() {
        return Err(Error::Validation("eval needs --pred-dir/--gt-dir or --hough/--hough-gt".into()).into());
    }
    if let (Some(pred_dir), Some(gt_dir)) = (&args.pred_dir, &args.gt_dir) {
        let thresholds = Thresholds {
            angle_deg: args.angle_thresh,
            tip_mm: args.tip_thresh,
        };
        let report = evaluate_batch(pred_dir, gt_dir, &thresholds)?;
        if !report.unmatched.is_empty() {
            eprintln!(
                "warning: {} unmatched id(s) excluded: {}",
                report.unmatched.len(),
                report.unmatched.join(", ")
            );
        }
        if let Some(path) = &args.out_csv {
            write_file(path, &report.csv)?;
        }
        match &args.out_json {
            Some(path) => write_json(path, &report.aggregate)?,
            None => println!("{}", serde_json::to_string(&report.aggregate)?),
        }
    }
    if let (Some(pred), Some(gt)) = (&args.hough, &args.hough_gt) {
        let loss = hybrid_loss(&load_hough(pred)?, &load_hough(gt)?, &params)?;
        println!("{}", serde_json::json!({ "hybrid_loss": loss }));
    }
    Ok(ExitCode::SUCCESS)
}

pub fn spectro(cfg: &RunConfig, args: &SpectroArgs) -> Result<ExitCode> {
    let window = cfg.window_len.unwrap_or(needlevib::spectral::DEFAULT_WINDOW_LEN);
    let hop = cfg.hop.unwrap_or(needlevib::spectral::DEFAULT_HOP);
    let seq = load_sequence(&args.input)?;
    let mut samples = seq.pixel_signal(args.x, args.y)?.samples;
    // Same DC handling as the energy map.
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.iter_mut().for_each(|v| *v -= mean);

    if window < 4 {
        return Err(Error::Validation(format!("window {window} has no non-DC bin")).into());
    }
    let spec = stft(&samples, window, hop)?;
    let power = spec.power_matrix();
    VibMap::from_f64(&[&power])?.save(&args.out)?;

    let freqs = SpectralBasis::new(window)?.bin_freqs(seq.fps() as f64);
    if let Some(path) = &args.csv {
        let mut csv = String::from("window_index,bin_freq_hz,power\n");
        for m in 0..power.ncols() {
            for (k, f) in freqs.iter().enumerate() {
                let _ = writeln!(csv, "{m},{f},{:e}", power[[k, m]]);
            }
        }
        write_file(path, csv)?;
    }
    let totals: Vec<f64> = power.rows().into_iter().map(|r| r.sum()).collect();
    let peak = (1..totals.len()).fold(1, |best, k| if totals[k] > totals[best] { k } else { best });
    println!(
        "{}",
        serde_json::json!({
            "x": args.x,
            "y": args.y,
            "window_len": window,
            "hop": hop,
            "peak_bin": peak,
            "peak_freq_hz": freqs[peak],
        })
    );
    Ok(ExitCode::SUCCESS)
}

pub fn calibrate(cfg: &RunConfig, count: u64) -> Result<ExitCode> {
    let base = cfg.phantom()?;
    let dcfg = cfg.detect()?;
    let first = cfg.seed.unwrap_or(0);
    let value = calibrate_confidence_min(&base, first..first + count, &dcfg)?;
    println!("{}", serde_json::json!({ "confidence_min": value, "count": count }));
    Ok(ExitCode::SUCCESS)
}
