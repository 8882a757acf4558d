//! End-to-end detection: frames -> band energy -> Hough -> shaft and tip,
//! in batch and streaming form.

use std::sync::{Arc, PoisonError, RwLock};
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hough::{
    self, argmax_cell, hough_transform, render_shaft_gt, render_tip_gt, HoughGrid, HoughMap,
};
use crate::phantom::{synth_sequence, EntrySide, GroundTruth, PhantomSpec};
use crate::sequence::{FrameStack, UsSequence};
use crate::spectral::{self, band_energy_map, nearest_bin, window_count, BandPowers, EnergyMap};

/// Floor for the low-confidence threshold. A Hough peak never falls below
/// the Hough mean unless the map is numerically empty, so anything under
/// 1 means "no structure at all".
pub const CONFIDENCE_FLOOR: f64 = 1.0;
/// Low-confidence threshold shipped as the default. Produced by
/// [`calibrate_confidence_min`] over 200 needle-free paper-preset
/// phantoms (seeds `0..200`), whose 99th-percentile confidence is 0; the
/// floor applies.
pub const DEFAULT_CONFIDENCE_MIN: f64 = CONFIDENCE_FLOOR;
/// Frames required before the stream emits detections.
pub const DEFAULT_T_MIN: usize = 30;
const CONFIDENCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub vib_freq: f64,
    pub window_len: usize,
    pub hop: usize,
    pub theta_step: f64,
    pub rho_step: f64,
    pub top_p: f64,
    pub entry_side: EntrySide,
    pub profile_threshold: f64,
    pub profile_smooth: usize,
    pub confidence_min: f64,
    /// Width of the rendered tip channel, in rho bins.
    pub tip_sigma: f64,
    pub t_min: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            vib_freq: crate::phantom::PAPER_VIB_HZ,
            window_len: spectral::DEFAULT_WINDOW_LEN,
            hop: spectral::DEFAULT_HOP,
            theta_step: hough::DEFAULT_THETA_STEP,
            rho_step: hough::DEFAULT_RHO_STEP,
            top_p: hough::DEFAULT_TOP_P,
            entry_side: EntrySide::Left,
            profile_threshold: 0.3,
            profile_smooth: 5,
            confidence_min: DEFAULT_CONFIDENCE_MIN,
            tip_sigma: hough::DEFAULT_GT_SIGMA,
            t_min: DEFAULT_T_MIN,
        }
    }
}

impl DetectConfig {
    /// Checks everything that does not depend on the input sequence.
    pub fn validate(&self) -> Result<()> {
        let v = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Validation(msg)) };
        v(self.vib_freq > 0.0, format!("vib_freq must be positive, got {}", self.vib_freq))?;
        v(self.window_len >= 4, format!("window_len must be >= 4, got {}", self.window_len))?;
        v(self.hop >= 1, "hop must be >= 1".into())?;
        v(
            self.profile_threshold > 0.0 && self.profile_threshold < 1.0,
            format!("profile_threshold must be in (0, 1), got {}", self.profile_threshold),
        )?;
        v(self.profile_smooth >= 1, "profile_smooth must be >= 1".into())?;
        v(
            self.top_p > 0.0 && self.top_p <= 100.0,
            format!("top_p must be in (0, 100], got {}", self.top_p),
        )?;
        v(self.confidence_min >= 0.0, "confidence_min must be >= 0".into())?;
        v(self.tip_sigma > 0.0, "tip_sigma must be positive".into())?;
        v(
            self.t_min >= self.window_len,
            format!("t_min {} shorter than window_len {}", self.t_min, self.window_len),
        )?;
        HoughGrid::new(16, 16, self.theta_step, self.rho_step).map(|_| ())
    }

    pub fn grid(&self, h: usize, w: usize) -> Result<HoughGrid> {
        HoughGrid::new(h, w, self.theta_step, self.rho_step)
    }
}

/// Shaft line, tip, and confidence of one detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "theta_deg")]
    pub theta: f64,
    #[serde(rename = "rho_px")]
    pub rho: f64,
    #[serde(rename = "tip_x_px")]
    pub tip_x: Option<f64>,
    #[serde(rename = "tip_y_px")]
    pub tip_y: Option<f64>,
    pub confidence: f64,
    pub low_confidence: bool,
}

impl Detection {
    fn empty() -> Self {
        Self {
            theta: 0.0,
            rho: 0.0,
            tip_x: None,
            tip_y: None,
            confidence: 0.0,
            low_confidence: true,
        }
    }

    pub fn tip(&self) -> Option<(f64, f64)> {
        self.tip_x.zip(self.tip_y)
    }

    /// True when no shaft could be located at all.
    pub fn is_empty(&self) -> bool {
        self.confidence == 0.0 && self.tip().is_none()
    }
}

/// Wall-clock time per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub spectral_ms: f64,
    pub hough_ms: f64,
    pub post_ms: f64,
    pub total_ms: f64,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Intermediate products of one batch run.
#[derive(Debug, Clone)]
pub struct DetectOutput {
    pub detection: Detection,
    pub energy: EnergyMap,
    pub hough: Array2<f64>,
    pub timings: StageTimings,
}

pub fn detect<S: FrameStack + ?Sized>(stack: &S, cfg: &DetectConfig) -> Result<Detection> {
    detect_full(stack, cfg).map(|o| o.detection)
}

/// Batch detection, keeping the energy map, Hough image and timings.
pub fn detect_full<S: FrameStack + ?Sized>(stack: &S, cfg: &DetectConfig) -> Result<DetectOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let energy = band_energy_map(stack, cfg.vib_freq, cfg.window_len, cfg.hop)?;
    let spectral_ms = elapsed_ms(start);
    let (detection, hough, hough_ms, post_ms) = detect_from_energy(&energy.values, cfg)?;
    Ok(DetectOutput {
        detection,
        energy,
        hough,
        timings: StageTimings {
            spectral_ms,
            hough_ms,
            post_ms,
            total_ms: elapsed_ms(start),
        },
    })
}

/// Hough voting, shaft argmax, and tip search on a ready energy map.
fn detect_from_energy(
    energy: &Array2<f64>,
    cfg: &DetectConfig,
) -> Result<(Detection, Array2<f64>, f64, f64)> {
    let (h, w) = energy.dim();
    let grid = cfg.grid(h, w)?;
    let start = Instant::now();
    let hough = hough_transform(energy, &grid)?;
    let hough_ms = elapsed_ms(start);

    let start = Instant::now();
    let detection = match argmax_cell(&hough) {
        Some((i, j, peak)) if peak > 0.0 => {
            let (theta, rho) = grid.line_from_cell(i, j)?;
            let mean = hough.mean().unwrap_or(0.0);
            let confidence = peak / (mean + CONFIDENCE_EPS);
            let tip = match tip_along_line(energy, theta, rho, cfg) {
                Ok(tip) => Some(tip),
                Err(Error::NoTip | Error::Geometry(_)) => None,
                Err(e) => return Err(e),
            };
            Detection {
                theta,
                rho,
                tip_x: tip.map(|t| t.0),
                tip_y: tip.map(|t| t.1),
                confidence,
                low_confidence: tip.is_none() || confidence < cfg.confidence_min,
            }
        }
        _ => Detection::empty(),
    };
    Ok((detection, hough, hough_ms, elapsed_ms(start)))
}

/// Parameter interval `[s0, s1]` of the points `rho*n + s*d` that lie in
/// the `w x h` pixel rectangle, or `None` if the line misses it.
fn clip_line(theta_deg: f64, rho: f64, w: usize, h: usize) -> Option<(f64, f64)> {
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    // x(s) = rho*cos - s*sin, y(s) = rho*sin + s*cos
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (base, slope, max) in [
        (rho * cos, -sin, (w - 1) as f64),
        (rho * sin, cos, (h - 1) as f64),
    ] {
        if slope.abs() < 1e-12 {
            if base < -1e-9 || base > max + 1e-9 {
                return None;
            }
            continue;
        }
        let a = (0.0 - base) / slope;
        let b = (max - base) / slope;
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (hi >= lo).then_some((lo, hi))
}

/// Centered moving average; windows shrink at the ends.
fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    let n = values.len();
    let before = (width - 1) / 2;
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(before);
            let b = (a + width).min(n);
            values[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

/// Nearest-rank percentile of `values` (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Locates the tip along the shaft line from the energy profile: sample at
/// 1-px steps (bilinear), smooth, keep samples above `profile_threshold`
/// times the 95th percentile, and return the end of the longest run that
/// lies farthest from the entry side.
pub fn tip_along_line(
    energy: &Array2<f64>,
    theta_deg: f64,
    rho: f64,
    cfg: &DetectConfig,
) -> Result<(f64, f64)> {
    let (h, w) = energy.dim();
    let (s0, s1) = clip_line(theta_deg, rho, w, h)
        .ok_or_else(|| Error::Geometry(format!("line ({theta_deg} deg, {rho} px) misses the image")))?;
    let (sin, cos) = theta_deg.to_radians().sin_cos();
    let point = |s: f64| {
        (
            (rho * cos - s * sin).clamp(0.0, (w - 1) as f64),
            (rho * sin + s * cos).clamp(0.0, (h - 1) as f64),
        )
    };
    let steps = (s1 - s0).floor() as usize + 1;
    if steps < 2 {
        return Err(Error::Geometry("line only grazes the image".into()));
    }
    let profile: Vec<f64> = (0..steps)
        .map(|k| {
            let (x, y) = point(s0 + k as f64);
            crate::phantom::sample_bilinear(energy, x, y)
        })
        .collect();
    let smooth = moving_average(&profile, cfg.profile_smooth);
    let threshold = cfg.profile_threshold * percentile(&smooth, 95.0);
    if !(threshold > 0.0) {
        return Err(Error::NoTip);
    }

    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for (k, &v) in smooth.iter().enumerate() {
        match (v > threshold, run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(a)) => {
                if best.is_none_or(|(b0, b1)| k - a > b1 - b0 + 1) {
                    best = Some((a, k - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = run_start {
        if best.is_none_or(|(b0, b1)| steps - a > b1 - b0 + 1) {
            best = Some((a, steps - 1));
        }
    }
    let (a, b) = best.ok_or(Error::NoTip)?;
    let (pa, pb) = (point(s0 + a as f64), point(s0 + b as f64));
    let pick_b = match cfg.entry_side {
        EntrySide::Left => pb.0 > pa.0,
        EntrySide::Right => pb.0 < pa.0,
        EntrySide::Top => pb.1 > pa.1,
        EntrySide::Bottom => pb.1 < pa.1,
    };
    Ok(if pick_b { pb } else { pa })
}

/// Two-channel Hough output plus optional rendered ground truth.
#[derive(Debug, Clone)]
pub struct EmittedChannels {
    pub grid: HoughGrid,
    pub detection: Detection,
    pub prediction: HoughMap,
    pub ground_truth: Option<HoughMap>,
}

/// Shaft channel is the max-normalized Hough image of the energy map; the
/// tip channel is the rendered sinusoid of the detected tip.
pub fn emit_hough_channels<S: FrameStack + ?Sized>(
    stack: &S,
    cfg: &DetectConfig,
    gt: Option<&GroundTruth>,
) -> Result<EmittedChannels> {
    let out = detect_full(stack, cfg)?;
    let grid = cfg.grid(stack.height(), stack.width())?;
    let (tx, ty) = out
        .detection
        .tip()
        .ok_or_else(|| Error::NoDetection("no tip to render".into()))?;
    let peak = out.hough.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::NoDetection("empty Hough image".into()));
    }
    let prediction = HoughMap {
        shaft: out.hough.mapv(|v| v / peak),
        tip: render_tip_gt(&grid, tx, ty, cfg.tip_sigma)?,
    };
    let ground_truth = gt
        .map(|g| render_ground_truth(&grid, g, cfg.tip_sigma))
        .transpose()?;
    Ok(EmittedChannels {
        grid,
        detection: out.detection,
        prediction,
        ground_truth,
    })
}

/// Gaussian-blurred shaft and tip targets for a ground truth.
pub fn render_ground_truth(grid: &HoughGrid, gt: &GroundTruth, sigma: f64) -> Result<HoughMap> {
    Ok(HoughMap {
        shaft: render_shaft_gt(grid, gt.theta, gt.rho, sigma)?,
        tip: render_tip_gt(grid, gt.tip_x, gt.tip_y, sigma)?,
    })
}

/// 99th-percentile confidence of [`detect`] over needle-free phantoms
/// (vibration off, needle invisible) built from `base` with the given
/// seeds, floored at [`CONFIDENCE_FLOOR`].
pub fn calibrate_confidence_min(
    base: &PhantomSpec,
    seeds: impl IntoIterator<Item = u64>,
    cfg: &DetectConfig,
) -> Result<f64> {
    let mut confidences = Vec::new();
    for seed in seeds {
        let spec = PhantomSpec {
            vib_amplitude: 0.0,
            visibility: 0.0,
            seed,
            ..base.clone()
        };
        let (seq, _) = synth_sequence(&spec)?;
        confidences.push(detect(&seq, cfg)?.confidence);
    }
    if confidences.is_empty() {
        return Err(Error::validation("calibration needs at least one phantom"));
    }
    Ok(percentile(&confidences, 99.0).max(CONFIDENCE_FLOOR))
}

/// Streaming detector: per-pixel sliding DFTs plus a ring of per-window
/// band powers covering the last `t_min` frames.
#[derive(Debug, Clone)]
pub struct StreamState {
    cfg: DetectConfig,
    height: usize,
    width: usize,
    fps: f64,
    target_bin: usize,
    twiddles: Vec<Complex64>,
    /// `pixels x bins`, pixel-major.
    bins: Vec<Complex64>,
    /// Last `window_len` frames, normalized.
    frames: Vec<Vec<f64>>,
    /// `windows x pixels` band powers, ring-indexed by window number.
    window_powers: Vec<Vec<BandPowers>>,
    /// Frame index of each pixel's most recent value change.
    last_change: Vec<usize>,
    frames_seen: usize,
    last: Arc<RwLock<Option<Detection>>>,
}

impl StreamState {
    pub fn new(height: usize, width: usize, fps: f64, cfg: DetectConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.hop != 1 {
            return Err(Error::validation("streaming requires hop = 1"));
        }
        if !(fps > 0.0) {
            return Err(Error::validation(format!("fps must be positive, got {fps}")));
        }
        let target_bin = nearest_bin(cfg.vib_freq, fps, cfg.window_len)?;
        cfg.grid(height, width)?;
        let nb = cfg.window_len / 2;
        let pixels = height * width;
        let twiddles = (0..nb)
            .map(|k| Complex64::from_polar(1.0, std::f64::consts::TAU * k as f64 / cfg.window_len as f64))
            .collect();
        let windows = window_count(cfg.t_min, cfg.window_len, 1);
        Ok(Self {
            height,
            width,
            fps,
            target_bin,
            twiddles,
            bins: vec![Complex64::new(0.0, 0.0); pixels * nb],
            frames: vec![vec![0.0; pixels]; cfg.window_len],
            window_powers: vec![vec![BandPowers::default(); pixels]; windows],
            last_change: vec![0; pixels],
            frames_seen: 0,
            last: Arc::default(),
            cfg,
        })
    }

    pub fn for_sequence(seq: &UsSequence, cfg: DetectConfig) -> Result<Self> {
        Self::new(seq.height(), seq.width(), seq.fps() as f64, cfg)
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    /// Most recently emitted detection.
    pub fn last_detection(&self) -> Option<Detection> {
        self.reader().latest()
    }

    /// Shareable read handle on the latest emitted detection.
    pub fn reader(&self) -> DetectionReader {
        DetectionReader(Arc::clone(&self.last))
    }

    /// Ingests one `H x W` frame; returns a detection once `t_min` frames
    /// have been seen.
    pub fn push(&mut self, frame: &[u8]) -> Result<Option<Detection>> {
        let pixels = self.height * self.width;
        if frame.len() != pixels {
            return Err(Error::validation(format!(
                "frame has {} samples, stream expects {pixels}",
                frame.len()
            )));
        }
        let n = self.cfg.window_len;
        let nb = n / 2;
        let slot = self.frames_seen % n;
        let t = self.frames_seen;
        let warm = t + 1 >= n;
        let windows = self.window_powers.len();
        let ring_slot = if warm { (t + 1 - n) % windows } else { 0 };

        for (p, &raw) in frame.iter().enumerate() {
            let x = raw as f64 / 255.0;
            if t > 0 && x != self.frames[(t - 1) % n][p] {
                self.last_change[p] = t;
            }
            let oldest = self.frames[slot][p];
            self.frames[slot][p] = x;
            let delta = x - oldest;
            let bins = &mut self.bins[p * nb..(p + 1) * nb];
            let mut powers = BandPowers::default();
            for (k, (b, w)) in bins.iter_mut().zip(&self.twiddles).enumerate() {
                *b = (*b + delta) * w;
                if k > 0 {
                    let pw = b.norm_sqr();
                    powers.total += pw;
                    if k == self.target_bin {
                        powers.target = pw;
                    }
                }
            }
            if warm {
                self.window_powers[ring_slot][p] = powers;
            }
        }
        self.frames_seen += 1;

        if self.frames_seen < self.cfg.t_min {
            return Ok(None);
        }
        let energy = self.energy_map();
        let (detection, ..) = detect_from_energy(&energy, &self.cfg)?;
        *self.last.write().unwrap_or_else(PoisonError::into_inner) = Some(detection.clone());
        Ok(Some(detection))
    }

    /// Energy ratio over the windows of the last `t_min` frames.
    pub fn energy_map(&self) -> Array2<f64> {
        let windows = self.window_powers.len();
        let first_window = self.frames_seen + 1 - self.cfg.window_len - windows;
        let window_start = self.frames_seen - self.cfg.t_min;
        let data = (0..self.height * self.width)
            .map(|p| {
                if self.last_change[p] <= window_start {
                    return 0.0;
                }
                let mut acc = BandPowers::default();
                for m in 0..windows {
                    let wp = self.window_powers[(first_window + m) % windows][p];
                    acc.target += wp.target;
                    acc.total += wp.total;
                }
                acc.ratio(windows)
            })
            .collect();
        Array2::from_shape_vec((self.height, self.width), data).expect("pixel count fixed")
    }
}

/// Read side of a [`StreamState`], usable from other threads.
#[derive(Debug, Clone)]
pub struct DetectionReader(Arc<RwLock<Option<Detection>>>);

impl DetectionReader {
    pub fn latest(&self) -> Option<Detection> {
        self.0.read().unwrap_or_else(PoisonError::into_inner).clone()
    }
}

/// Functional form of [`StreamState::push`].
pub fn stream_push(state: &mut StreamState, frame: &[u8]) -> Result<Option<Detection>> {
    state.push(frame)
}
