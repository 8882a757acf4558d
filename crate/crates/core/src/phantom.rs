//! Synthetic speckle sequences with a vibrating line segment and exact
//! ground truth.
//!
//! The needle is modeled as a transverse sinusoidal displacement of the
//! speckle texture around the segment, optionally plus a bright ridge
//! (`visibility`). With `visibility = 0` the needle has no static
//! signature at all; only the motion reveals it.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hough::normalize_line;
use crate::sequence::UsSequence;

/// Peak brightness of needle and artifact ridges.
const RIDGE_PEAK: f64 = 0.5;
/// Ridge cross-section std, in pixels.
const RIDGE_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrySide {
    Left,
    Right,
    Top,
    Bottom,
}

impl EntrySide {
    pub fn mirrored_horizontally(self) -> Self {
        match self {
            EntrySide::Left => EntrySide::Right,
            EntrySide::Right => EntrySide::Left,
            other => other,
        }
    }
}

impl std::str::FromStr for EntrySide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(EntrySide::Left),
            "right" => Ok(EntrySide::Right),
            "top" => Ok(EntrySide::Top),
            "bottom" => Ok(EntrySide::Bottom),
            other => Err(Error::validation(format!("unknown entry side '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub frame_count: usize,
    pub fps: f64,
    /// mm per pixel.
    pub pixel_spacing: f64,
    /// Direction of the shaft in degrees, `[0, 180)`, measured from the
    /// +x axis towards +y (image rows grow downwards).
    pub needle_angle: f64,
    /// Entry point `(x, y)` on the `entry_side` border.
    pub needle_entry: (f64, f64),
    pub needle_length: f64,
    pub vib_freq: f64,
    /// Peak transverse displacement, in pixels.
    pub vib_amplitude: f64,
    /// Std of the Gaussian co-motion falloff around the shaft, in pixels.
    pub motion_sigma: f64,
    pub visibility: f64,
    pub artifact_count: usize,
    pub speckle_grain: f64,
    pub entry_side: EntrySide,
    pub seed: u64,
}

pub const PAPER_HEIGHT: usize = 328;
pub const PAPER_WIDTH: usize = 335;
pub const PAPER_FRAMES: usize = 30;
pub const PAPER_FPS: f64 = 30.0;
pub const PAPER_VIB_HZ: f64 = 2.5;
pub const BIN_ALIGNED_VIB_HZ: f64 = 3.0;

impl PhantomSpec {
    /// 328x335 frames, 30 frames at 30 fps, 2.5 Hz vibration.
    pub fn paper(seed: u64) -> Self {
        Self {
            height: PAPER_HEIGHT,
            width: PAPER_WIDTH,
            frame_count: PAPER_FRAMES,
            fps: PAPER_FPS,
            pixel_spacing: 0.15,
            needle_angle: 30.0,
            needle_entry: (0.0, 80.0),
            needle_length: 200.0,
            vib_freq: PAPER_VIB_HZ,
            vib_amplitude: 0.8,
            motion_sigma: 1.0,
            visibility: 0.0,
            artifact_count: 1,
            speckle_grain: 2.0,
            entry_side: EntrySide::Left,
            seed,
        }
    }

    /// Paper geometry with the tone on STFT bin 1 of a 10-sample window.
    pub fn bin_aligned(seed: u64) -> Self {
        Self {
            vib_freq: BIN_ALIGNED_VIB_HZ,
            ..Self::paper(seed)
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(seed)),
            "bin-aligned" => Ok(Self::bin_aligned(seed)),
            other => Err(Error::validation(format!("unknown preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Validation(msg)) };
        v(
            self.height >= 16 && self.width >= 16,
            format!("frame size {}x{} below 16x16", self.height, self.width),
        )?;
        v(self.frame_count >= 1, "frame_count must be at least 1".into())?;
        v(self.fps > 0.0 && self.fps.is_finite(), format!("fps must be positive, got {}", self.fps))?;
        v(
            self.pixel_spacing > 0.0 && self.pixel_spacing.is_finite(),
            format!("pixel_spacing must be positive, got {}", self.pixel_spacing),
        )?;
        v(
            self.vib_freq > 0.0 && self.vib_freq < self.fps / 2.0,
            format!(
                "vibration {} Hz violates Nyquist for {} fps (must be in (0, {}))",
                self.vib_freq,
                self.fps,
                self.fps / 2.0
            ),
        )?;
        v(
            self.vib_amplitude >= 0.0 && self.vib_amplitude.is_finite(),
            format!("vib_amplitude must be >= 0, got {}", self.vib_amplitude),
        )?;
        v(self.motion_sigma > 0.0, format!("motion_sigma must be positive, got {}", self.motion_sigma))?;
        v(
            (0.0..=1.0).contains(&self.visibility),
            format!("visibility must be in [0, 1], got {}", self.visibility),
        )?;
        v(self.speckle_grain >= 1.0, format!("speckle_grain must be >= 1, got {}", self.speckle_grain))?;
        v(
            (0.0..180.0).contains(&self.needle_angle),
            format!("needle_angle must be in [0, 180), got {}", self.needle_angle),
        )?;
        v(self.needle_length > 0.0, format!("needle_length must be positive, got {}", self.needle_length))?;
        self.geometry().map(|_| ())
    }

    /// Resolved needle geometry; fails when the segment leaves the image.
    pub fn geometry(&self) -> Result<NeedleGeometry> {
        let (w, h) = (self.width as f64 - 1.0, self.height as f64 - 1.0);
        let (ex, ey) = self.needle_entry;
        let on_border = match self.entry_side {
            EntrySide::Left => ex.abs() <= 0.5,
            EntrySide::Right => (ex - w).abs() <= 0.5,
            EntrySide::Top => ey.abs() <= 0.5,
            EntrySide::Bottom => (ey - h).abs() <= 0.5,
        };
        if !on_border || !(0.0..=w).contains(&ex) || !(0.0..=h).contains(&ey) {
            return Err(Error::validation(format!(
                "needle entry ({ex}, {ey}) is not on the {:?} border",
                self.entry_side
            )));
        }
        let (s, c) = self.needle_angle.to_radians().sin_cos();
        let inward = match self.entry_side {
            EntrySide::Left => c,
            EntrySide::Right => -c,
            EntrySide::Top => s,
            EntrySide::Bottom => -s,
        };
        if inward.abs() < 1e-9 {
            return Err(Error::validation("needle runs parallel to its entry border"));
        }
        let sign = inward.signum();
        let dir = (sign * c, sign * s);
        let geom = NeedleGeometry {
            entry: (ex, ey),
            dir,
            length: self.needle_length,
        };
        let (tx, ty) = geom.tip();
        if !(0.0..=w).contains(&tx) || !(0.0..=h).contains(&ty) {
            return Err(Error::validation(format!(
                "needle tip ({tx:.2}, {ty:.2}) lies outside the {}x{} image",
                self.width, self.height
            )));
        }
        Ok(geom)
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let g = self.geometry()?;
        let (nx, ny) = g.normal();
        let (tx, ty) = g.tip();
        let (theta, rho) = normalize_line(ny.atan2(nx).to_degrees(), tx * nx + ty * ny);
        Ok(GroundTruth {
            theta,
            rho,
            tip_x: tx,
            tip_y: ty,
            pixel_spacing: self.pixel_spacing,
        })
    }

    /// Left-right mirrored spec (same speckle seed, mirrored geometry).
    pub fn mirrored_horizontally(&self) -> Self {
        let (ex, ey) = self.needle_entry;
        Self {
            needle_angle: (180.0 - self.needle_angle) % 180.0,
            needle_entry: (self.width as f64 - 1.0 - ex, ey),
            entry_side: self.entry_side.mirrored_horizontally(),
            ..self.clone()
        }
    }
}

/// Straight segment from the entry point along a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeedleGeometry {
    pub entry: (f64, f64),
    pub dir: (f64, f64),
    pub length: f64,
}

impl NeedleGeometry {
    pub fn tip(&self) -> (f64, f64) {
        (
            self.entry.0 + self.length * self.dir.0,
            self.entry.1 + self.length * self.dir.1,
        )
    }

    /// Unit normal, `dir` rotated by +90 degrees.
    pub fn normal(&self) -> (f64, f64) {
        (-self.dir.1, self.dir.0)
    }

    /// `(along, across)` coordinates of `p` relative to the entry point.
    #[inline]
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.entry.0, y - self.entry.1);
        let (nx, ny) = self.normal();
        (dx * self.dir.0 + dy * self.dir.1, dx * nx + dy * ny)
    }

    /// Euclidean distance to the segment.
    pub fn segment_distance(&self, x: f64, y: f64) -> f64 {
        let (along, across) = self.local(x, y);
        let overshoot = if along < 0.0 {
            along
        } else if along > self.length {
            along - self.length
        } else {
            0.0
        };
        overshoot.hypot(across)
    }

    /// Distance that drives tissue co-motion: the perpendicular distance to
    /// the shaft, where the shaft extends without bound behind the entry
    /// point and nothing moves past the tip.
    pub fn co_motion_distance(&self, x: f64, y: f64) -> f64 {
        let (along, across) = self.local(x, y);
        if along > self.length {
            f64::INFINITY
        } else {
            across.abs()
        }
    }
}

/// Per-pixel 2-vector field, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
}

impl DisplacementField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            dx: Array2::zeros((h, w)),
            dy: Array2::zeros((h, w)),
        }
    }

    pub fn constant(h: usize, w: usize, dx: f64, dy: f64) -> Self {
        Self {
            dx: Array2::from_elem((h, w), dx),
            dy: Array2::from_elem((h, w), dy),
        }
    }
}

/// Spatially correlated noise in `[0, 1]`: Gaussian white noise blurred
/// with a Gaussian of std `grain`, then min-max normalized.
pub fn background_speckle(h: usize, w: usize, grain: f64, seed: u64) -> Result<Array2<f64>> {
    if h < 16 || w < 16 {
        return Err(Error::validation(format!("texture size {h}x{w} below 16x16")));
    }
    if !(grain >= 1.0) {
        return Err(Error::validation(format!("grain must be >= 1, got {grain}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Array2::from_shape_simple_fn((h, w), || rng.sample::<f64, _>(StandardNormal));
    let blurred = gaussian_blur(&noise, grain);
    let lo = blurred.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = blurred.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(blurred.mapv(|v| (v - lo) / span))
}

/// Separable Gaussian blur, edges clamped.
fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let (h, w) = img.dim();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;

    let horizontal: Array2<f64> = Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, kv)| kv * img[[y, clamp(x as i64 + k as i64 - radius, w)]])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, kv)| kv * horizontal[[clamp(y as i64 + k as i64 - radius, h), x]])
            .sum::<f64>()
    })
}

/// Gaussian co-motion weight `exp(-d^2 / (2 sigma^2))` of every pixel.
pub fn co_motion_weights(spec: &PhantomSpec) -> Result<Array2<f64>> {
    let g = spec.geometry()?;
    let inv = 1.0 / (2.0 * spec.motion_sigma * spec.motion_sigma);
    Ok(Array2::from_shape_fn((spec.height, spec.width), |(y, x)| {
        let d = g.co_motion_distance(x as f64, y as f64);
        (-d * d * inv).exp()
    }))
}

fn vibration_phase(spec: &PhantomSpec, t: usize) -> f64 {
    (std::f64::consts::TAU * spec.vib_freq * t as f64 / spec.fps).sin()
}

/// Displacement `A sin(2 pi f t / fps) exp(-d^2/(2 sigma^2)) n` at frame `t`.
pub fn displacement_field(spec: &PhantomSpec, t: usize) -> Result<DisplacementField> {
    if t >= spec.frame_count {
        return Err(Error::validation(format!(
            "frame {t} outside 0..{}",
            spec.frame_count
        )));
    }
    let weights = co_motion_weights(spec)?;
    let normal = spec.geometry()?.normal();
    Ok(field_from_weights(&weights, normal, spec.vib_amplitude * vibration_phase(spec, t)))
}

fn field_from_weights(weights: &Array2<f64>, normal: (f64, f64), scale: f64) -> DisplacementField {
    DisplacementField {
        dx: weights.mapv(|wv| scale * wv * normal.0),
        dy: weights.mapv(|wv| scale * wv * normal.1),
    }
}

/// `out(p) = texture(p - field(p))`, bilinear, coordinates clamped to the
/// image.
pub fn warp_bilinear(texture: &Array2<f64>, field: &DisplacementField) -> Result<Array2<f64>> {
    let dim = texture.dim();
    if field.dx.dim() != dim || field.dy.dim() != dim {
        return Err(Error::validation("texture and field shapes differ"));
    }
    let (h, w) = dim;
    Ok(Array2::from_shape_fn(dim, |(y, x)| {
        let sx = (x as f64 - field.dx[[y, x]]).clamp(0.0, (w - 1) as f64);
        let sy = (y as f64 - field.dy[[y, x]]).clamp(0.0, (h - 1) as f64);
        sample_bilinear(texture, sx, sy)
    }))
}

#[inline]
pub(crate) fn sample_bilinear(img: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img[[y0, x0]] + fx * (img[[y0, x1]] - img[[y0, x0]]);
    let bottom = img[[y1, x0]] + fx * (img[[y1, x1]] - img[[y1, x0]]);
    top + fy * (bottom - top)
}

/// Static distractor segments, drawn from the seed's second stream.
fn artifact_segments(spec: &PhantomSpec) -> Vec<NeedleGeometry> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let (w, h) = (spec.width as f64 - 1.0, spec.height as f64 - 1.0);
    let short = w.min(h);
    let mut out = Vec::with_capacity(spec.artifact_count);
    while out.len() < spec.artifact_count {
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let length = rng.random_range(0.2 * short..0.5 * short);
        let ex = rng.random_range(0.0..=w);
        let ey = rng.random_range(0.0..=h);
        let seg = NeedleGeometry {
            entry: (ex, ey),
            dir: (angle.cos(), angle.sin()),
            length,
        };
        let (tx, ty) = seg.tip();
        if (0.0..=w).contains(&tx) && (0.0..=h).contains(&ty) {
            out.push(seg);
        }
    }
    out
}

fn ridge(distance: f64) -> f64 {
    RIDGE_PEAK * (-distance * distance / (2.0 * RIDGE_SIGMA * RIDGE_SIGMA)).exp()
}

/// Ground-truth line and tip of a phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "theta_deg")]
    pub theta: f64,
    #[serde(rename = "rho_px")]
    pub rho: f64,
    #[serde(rename = "tip_x_px")]
    pub tip_x: f64,
    #[serde(rename = "tip_y_px")]
    pub tip_y: f64,
    #[serde(rename = "pixel_spacing_mm")]
    pub pixel_spacing: f64,
}

/// Renders the phantom sequence; a pure function of `spec`.
pub fn synth_sequence(spec: &PhantomSpec) -> Result<(UsSequence, GroundTruth)> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let geom = spec.geometry()?;
    let normal = geom.normal();
    let texture = background_speckle(h, w, spec.speckle_grain, spec.seed)?;
    let weights = co_motion_weights(spec)?;

    let mut statics = Array2::<f64>::zeros((h, w));
    for seg in artifact_segments(spec) {
        statics.indexed_iter_mut().for_each(|((y, x), v)| {
            *v += ridge(seg.segment_distance(x as f64, y as f64));
        });
    }

    let frames: Vec<Vec<u8>> = (0..spec.frame_count)
        .into_par_iter()
        .map(|t| {
            let shift = spec.vib_amplitude * vibration_phase(spec, t);
            let field = field_from_weights(&weights, normal, shift);
            let warped = warp_bilinear(&texture, &field).expect("shapes match");
            let moved = NeedleGeometry {
                entry: (geom.entry.0 + shift * normal.0, geom.entry.1 + shift * normal.1),
                ..geom
            };
            warped
                .indexed_iter()
                .map(|((y, x), &v)| {
                    let needle = if spec.visibility > 0.0 {
                        spec.visibility * ridge(moved.segment_distance(x as f64, y as f64))
                    } else {
                        0.0
                    };
                    let v = (v + needle + statics[[y, x]]).clamp(0.0, 1.0);
                    (v * 255.0).round() as u8
                })
                .collect()
        })
        .collect();

    let seq = UsSequence::new(
        h,
        w,
        spec.frame_count,
        spec.fps as f32,
        spec.pixel_spacing as f32,
        frames.concat(),
    )?;
    Ok((seq, spec.ground_truth()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_spec() -> PhantomSpec {
        PhantomSpec {
            height: 64,
            width: 72,
            frame_count: 30,
            needle_entry: (0.0, 16.0),
            needle_length: 50.0,
            motion_sigma: 3.0,
            ..PhantomSpec::bin_aligned(5)
        }
    }

    #[test]
    fn speckle_is_deterministic_and_seed_dependent() {
        let a = background_speckle(64, 64, 2.0, 1).unwrap();
        let b = background_speckle(64, 64, 2.0, 1).unwrap();
        let c = background_speckle(64, 64, 2.0, 2).unwrap();
        assert_eq!(a, b);
        let differing = a.iter().zip(c.iter()).filter(|(x, y)| x != y).count();
        assert!(differing as f64 >= 0.01 * a.len() as f64);
        let mean = a.mean().unwrap();
        assert!((0.3..=0.7).contains(&mean), "mean {mean}");
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn correlation_length(img: &Array2<f64>) -> usize {
        let mean = img.mean().unwrap();
        let var = img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / img.len() as f64;
        let (h, w) = img.dim();
        (1..w / 2)
            .find(|&lag| {
                let mut acc = 0.0;
                let mut n = 0;
                for y in 0..h {
                    for x in 0..w - lag {
                        acc += (img[[y, x]] - mean) * (img[[y, x + lag]] - mean);
                        n += 1;
                    }
                }
                acc / n as f64 / var < (-1.0f64).exp()
            })
            .unwrap_or(w / 2)
    }

    #[test]
    fn coarser_grain_correlates_further() {
        let fine = background_speckle(96, 96, 1.0, 9).unwrap();
        let coarse = background_speckle(96, 96, 8.0, 9).unwrap();
        assert!(correlation_length(&coarse) > correlation_length(&fine));
    }

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let spec = PhantomSpec {
            vib_amplitude: 0.0,
            ..small_spec()
        };
        let f = displacement_field(&spec, 7).unwrap();
        assert!(f.dx.iter().chain(f.dy.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn field_magnitude_closed_forms() {
        let spec = PhantomSpec {
            needle_angle: 0.0,
            needle_entry: (0.0, 30.0),
            fps: 40.0,
            vib_freq: 10.0,
            ..small_spec()
        };
        // t = 1: sin(2*pi*10/40) = 1.
        let f = displacement_field(&spec, 1).unwrap();
        let mag = |y: usize, x: usize| f.dx[[y, x]].hypot(f.dy[[y, x]]);
        assert_abs_diff_eq!(mag(30, 20), spec.vib_amplitude, epsilon = 1e-12);
        let far = 30 + (2.0 * spec.motion_sigma) as usize;
        assert_abs_diff_eq!(mag(far, 20), spec.vib_amplitude * (-2.0f64).exp(), epsilon = 1e-12);
        // Displacement is along the shaft normal.
        assert_abs_diff_eq!(f.dx[[30, 20]], 0.0, epsilon = 1e-12);
        // Nothing moves past the tip.
        assert_eq!(mag(30, 60), 0.0);
        assert!(displacement_field(&spec, 30).is_err());
    }

    #[test]
    fn warp_identity_shift_and_ramp() {
        let tex = background_speckle(20, 24, 1.5, 3).unwrap();
        assert_eq!(warp_bilinear(&tex, &DisplacementField::zeros(20, 24)).unwrap(), tex);

        let shifted = warp_bilinear(&tex, &DisplacementField::constant(20, 24, 1.0, 0.0)).unwrap();
        for y in 0..20 {
            for x in 1..24 {
                assert_eq!(shifted[[y, x]], tex[[y, x - 1]]);
            }
        }

        let ramp = Array2::from_shape_fn((20, 24), |(_, x)| 0.1 * x as f64);
        let half = warp_bilinear(&ramp, &DisplacementField::constant(20, 24, 0.5, 0.0)).unwrap();
        for x in 1..24 {
            assert_abs_diff_eq!(half[[5, x]], 0.1 * (x as f64 - 0.5), epsilon = 1e-12);
        }
        assert!(warp_bilinear(&ramp, &DisplacementField::zeros(3, 3)).is_err());
    }

    #[test]
    fn static_scene_when_not_vibrating() {
        let spec = PhantomSpec {
            visibility: 1.0,
            vib_amplitude: 0.0,
            ..small_spec()
        };
        let (seq, _) = synth_sequence(&spec).unwrap();
        assert_eq!(seq.frame(0), seq.frame(spec.frame_count - 1));
    }

    #[test]
    fn ground_truth_tip_on_line() {
        for angle in [0.0, 17.0, 45.0, 89.0, 120.0, 170.0] {
            for side in [EntrySide::Left, EntrySide::Right] {
                let spec = PhantomSpec {
                    needle_angle: angle,
                    entry_side: side,
                    needle_entry: if side == EntrySide::Left { (0.0, 32.0) } else { (71.0, 32.0) },
                    needle_length: 20.0,
                    ..small_spec()
                };
                if angle == 89.0 {
                    continue;
                }
                let gt = spec.ground_truth().unwrap();
                let (s, c) = gt.theta.to_radians().sin_cos();
                assert!((gt.tip_x * c + gt.tip_y * s - gt.rho).abs() <= 0.5);
                assert!((0.0..180.0).contains(&gt.theta));
            }
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let nyquist = PhantomSpec {
            vib_freq: 20.0,
            ..small_spec()
        };
        assert!(matches!(synth_sequence(&nyquist), Err(Error::Validation(_))));
        let outside = PhantomSpec {
            needle_length: 500.0,
            ..small_spec()
        };
        assert!(matches!(synth_sequence(&outside), Err(Error::Validation(_))));
        let off_border = PhantomSpec {
            needle_entry: (5.0, 16.0),
            ..small_spec()
        };
        assert!(off_border.validate().is_err());
        let parallel = PhantomSpec {
            needle_angle: 90.0,
            ..small_spec()
        };
        assert!(parallel.validate().is_err());
    }

    #[test]
    fn parallel_frames_match_sequential_rendering() {
        let spec = PhantomSpec {
            visibility: 0.4,
            ..small_spec()
        };
        let (seq, _) = synth_sequence(&spec).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (seq1, _) = pool.install(|| synth_sequence(&spec)).unwrap();
        assert_eq!(seq, seq1);
    }

    #[test]
    fn mirrored_spec_mirrors_ground_truth() {
        let spec = small_spec();
        let gt = spec.ground_truth().unwrap();
        let m = spec.mirrored_horizontally().ground_truth().unwrap();
        assert_abs_diff_eq!(m.tip_x, spec.width as f64 - 1.0 - gt.tip_x, epsilon = 1e-9);
        assert_abs_diff_eq!(m.tip_y, gt.tip_y, epsilon = 1e-9);
        assert_abs_diff_eq!(m.theta, (180.0 - gt.theta) % 180.0, epsilon = 1e-9);
    }
}
