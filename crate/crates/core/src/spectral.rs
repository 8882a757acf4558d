//! Fourier basis, STFT as correlation with fixed cosine/sine kernels,
//! a streaming sliding DFT, and per-pixel vibration-band energy maps.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sequence::FrameStack;

/// Default analysis window, in samples.
pub const DEFAULT_WINDOW_LEN: usize = 10;
/// Default window stride, in samples.
pub const DEFAULT_HOP: usize = 1;
/// Ratio denominator floor; constant pixels map to zero.
pub const ENERGY_EPS: f64 = 1e-12;

/// `(cos, sin)` of `2*pi*j/n`, exact on quarter turns.
fn unit_circle(j: usize, n: usize) -> (f64, f64) {
    let j = j % n;
    if (4 * j).is_multiple_of(n) {
        return match 4 * j / n {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
    }
    let a = std::f64::consts::TAU * j as f64 / n as f64;
    (a.cos(), a.sin())
}

/// Real DFT weight matrix: row `2k` holds `cos(2*pi*n*k/N)`, row `2k+1`
/// holds `-sin(2*pi*n*k/N)`, for `k` in `0..N/2` (Nyquist excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    window_len: usize,
    weights: Array2<f64>,
}

impl SpectralBasis {
    pub fn new(window_len: usize) -> Result<Self> {
        if window_len < 2 {
            return Err(Error::validation(format!(
                "window length must be at least 2, got {window_len}"
            )));
        }
        let bins = window_len / 2;
        let weights = Array2::from_shape_fn((2 * bins, window_len), |(r, n)| {
            let (c, s) = unit_circle(n * (r / 2), window_len);
            if r % 2 == 0 {
                c
            } else {
                -s
            }
        });
        Ok(Self {
            window_len,
            weights,
        })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Number of complex bins, `floor(N/2)`.
    pub fn bin_count(&self) -> usize {
        self.window_len / 2
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// `f_k = k * fs / N` for each bin.
    pub fn bin_freqs(&self, sample_rate: f64) -> Vec<f64> {
        (0..self.bin_count())
            .map(|k| k as f64 * sample_rate / self.window_len as f64)
            .collect()
    }

    /// Real and imaginary part of bin `k` over `window`.
    #[inline]
    pub fn project(&self, window: &[f64], k: usize) -> (f64, f64) {
        let cos_row = self.weights.row(2 * k);
        let sin_row = self.weights.row(2 * k + 1);
        let mut re = 0.0;
        let mut im = 0.0;
        for ((x, c), s) in window.iter().zip(cos_row.iter()).zip(sin_row.iter()) {
            re += x * c;
            im += x * s;
        }
        (re, im)
    }
}

pub fn dft_basis(window_len: usize) -> Result<SpectralBasis> {
    SpectralBasis::new(window_len)
}

/// Interleaved real/imag spectrogram, `K x M` with `K = 2*floor(N/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
    pub hop: usize,
    pub window_len: usize,
}

impl Spectrogram {
    /// Correlates `signal` with every basis row, one column per window.
    pub fn compute(basis: &SpectralBasis, signal: &[f64], hop: usize) -> Result<Self> {
        let n = basis.window_len();
        if hop == 0 {
            return Err(Error::validation("hop must be at least 1"));
        }
        if signal.len() < n {
            return Err(Error::validation(format!(
                "signal length {} shorter than window {n}",
                signal.len()
            )));
        }
        let windows = window_count(signal.len(), n, hop);
        let rows = basis.weights().nrows();
        let mut values = Array2::zeros((rows, windows));
        for m in 0..windows {
            let seg = &signal[m * hop..m * hop + n];
            for r in 0..rows {
                values[[r, m]] = dot(seg, basis.weights().row(r).as_slice().unwrap());
            }
        }
        Ok(Self {
            values,
            hop,
            window_len: n,
        })
    }

    pub fn window_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn bin_count(&self) -> usize {
        self.values.nrows() / 2
    }

    /// `|X_k|^2` in window `m`.
    pub fn power(&self, k: usize, m: usize) -> f64 {
        let re = self.values[[2 * k, m]];
        let im = self.values[[2 * k + 1, m]];
        re * re + im * im
    }

    /// `bin_count x window_count` power matrix.
    pub fn power_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.bin_count(), self.window_count()), |(k, m)| {
            self.power(k, m)
        })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Valid windows of length `n` at stride `hop` over `len` samples.
pub fn window_count(len: usize, n: usize, hop: usize) -> usize {
    if len < n {
        0
    } else {
        (len - n) / hop + 1
    }
}

pub fn stft(signal: &[f64], window_len: usize, hop: usize) -> Result<Spectrogram> {
    Spectrogram::compute(&SpectralBasis::new(window_len)?, signal, hop)
}

/// Rectangular-window sliding DFT over the last `N` samples, updated in
/// `O(N/2)` per sample.
#[derive(Debug, Clone)]
pub struct SlidingDft {
    ring: Vec<f64>,
    head: usize,
    pushes: u64,
    bins: Vec<Complex64>,
    twiddles: Vec<Complex64>,
}

impl SlidingDft {
    pub fn new(window_len: usize) -> Result<Self> {
        if window_len < 2 {
            return Err(Error::validation(format!(
                "window length must be at least 2, got {window_len}"
            )));
        }
        let twiddles = (0..window_len / 2)
            .map(|k| {
                let (c, s) = unit_circle(k, window_len);
                Complex64::new(c, s)
            })
            .collect();
        Ok(Self {
            ring: vec![0.0; window_len],
            head: 0,
            pushes: 0,
            bins: vec![Complex64::new(0.0, 0.0); window_len / 2],
            twiddles,
        })
    }

    pub fn window_len(&self) -> usize {
        self.ring.len()
    }

    /// True once a full window of real samples has been seen.
    pub fn is_warm(&self) -> bool {
        self.pushes >= self.ring.len() as u64
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    /// `X_k <- (X_k + x_new - x_oldest) * exp(j*2*pi*k/N)`.
    pub fn push(&mut self, sample: f64) {
        let oldest = std::mem::replace(&mut self.ring[self.head], sample);
        self.head = (self.head + 1) % self.ring.len();
        self.pushes += 1;
        let delta = sample - oldest;
        for (x, w) in self.bins.iter_mut().zip(&self.twiddles) {
            *x = (*x + delta) * w;
        }
    }

    pub fn bins(&self) -> &[Complex64] {
        &self.bins
    }

    /// Bins as interleaved `[re_0, im_0, re_1, im_1, ...]`, the same layout
    /// as a [`Spectrogram`] column.
    pub fn rows(&self) -> Vec<f64> {
        self.bins.iter().flat_map(|c| [c.re, c.im]).collect()
    }
}

/// Functional form of [`SlidingDft::push`].
pub fn sliding_dft_push(mut state: SlidingDft, sample: f64) -> SlidingDft {
    state.push(sample);
    state
}

/// Index of the non-DC bin nearest `freq` for an `N`-sample window.
pub fn nearest_bin(freq: f64, sample_rate: f64, window_len: usize) -> Result<usize> {
    let bins = window_len / 2;
    if bins < 2 {
        return Err(Error::validation(format!(
            "window length {window_len} has no non-DC bin"
        )));
    }
    if !(freq > 0.0 && freq < sample_rate / 2.0) {
        return Err(Error::validation(format!(
            "target frequency {freq} Hz outside (0, {}) Hz",
            sample_rate / 2.0
        )));
    }
    let k = (freq * window_len as f64 / sample_rate + 0.5).floor() as usize;
    Ok(k.clamp(1, bins - 1))
}

/// Per-pixel fraction of non-DC spectral power in the vibration bin.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap {
    pub values: Array2<f64>,
    pub target_bin: usize,
    pub window_len: usize,
    pub hop: usize,
    pub fps: f64,
}

impl EnergyMap {
    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// Window-summed powers for one pixel: `(sum |X_k*|^2, sum_{k>=1} |X_k|^2)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BandPowers {
    pub target: f64,
    pub total: f64,
}

impl BandPowers {
    /// Ratio of means over `windows` windows, clamped to `[0, 1]`.
    pub fn ratio(&self, windows: usize) -> f64 {
        if windows == 0 {
            return 0.0;
        }
        let m = windows as f64;
        ((self.target / m) / (self.total / m + ENERGY_EPS)).clamp(0.0, 1.0)
    }
}

/// Powers of a single window given its interleaved bin rows.
#[inline]
pub fn window_band_powers(rows: &[f64], target_bin: usize) -> BandPowers {
    let mut out = BandPowers::default();
    for k in 1..rows.len() / 2 {
        let p = rows[2 * k] * rows[2 * k] + rows[2 * k + 1] * rows[2 * k + 1];
        out.total += p;
        if k == target_bin {
            out.target = p;
        }
    }
    out
}

/// Mean-removes `signal` in place and sums band powers over all windows.
/// Returns `None` when the signal is constant (no non-DC content).
pub fn pixel_band_powers(
    basis: &SpectralBasis,
    signal: &mut [f64],
    target_bin: usize,
    hop: usize,
) -> Option<BandPowers> {
    let first = signal[0];
    if signal.iter().all(|&v| v == first) {
        return None;
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    signal.iter_mut().for_each(|v| *v -= mean);

    let n = basis.window_len();
    let windows = window_count(signal.len(), n, hop);
    let mut acc = BandPowers::default();
    for m in 0..windows {
        let seg = &signal[m * hop..m * hop + n];
        for k in 1..basis.bin_count() {
            let (re, im) = basis.project(seg, k);
            let p = re * re + im * im;
            acc.total += p;
            if k == target_bin {
                acc.target += p;
            }
        }
    }
    Some(acc)
}

/// Vibration-band energy ratio of every pixel.
///
/// Each pixel's temporal mean is removed, its rectangular-window STFT is
/// taken, and the mean power in the bin nearest `target_freq` is divided by
/// the mean power over all non-DC bins (plus [`ENERGY_EPS`]).
pub fn band_energy_map<S: FrameStack + ?Sized>(
    stack: &S,
    target_freq: f64,
    window_len: usize,
    hop: usize,
) -> Result<EnergyMap> {
    let (h, w, t) = (stack.height(), stack.width(), stack.frame_count());
    let fps = stack.fps();
    if hop == 0 {
        return Err(Error::validation("hop must be at least 1"));
    }
    if t < window_len {
        return Err(Error::validation(format!(
            "sequence has {t} frames, window needs {window_len}"
        )));
    }
    let basis = SpectralBasis::new(window_len)?;
    let target_bin = nearest_bin(target_freq, fps, window_len)?;
    let windows = window_count(t, window_len, hop);

    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut signal = vec![0.0; t];
            (0..w)
                .map(|x| {
                    stack.fill_signal(x, y, &mut signal);
                    pixel_band_powers(&basis, &mut signal, target_bin, hop)
                        .map_or(0.0, |p| p.ratio(windows))
                })
                .collect()
        })
        .collect();
    let values = Array2::from_shape_vec((h, w), rows.concat()).expect("row lengths fixed");
    Ok(EnergyMap {
        values,
        target_bin,
        window_len,
        hop,
        fps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::FloatSequence;
    use approx::assert_abs_diff_eq;

    fn naive_dft(x: &[f64], k: usize) -> (f64, f64) {
        let n = x.len() as f64;
        x.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, v)| {
            let a = -std::f64::consts::TAU * k as f64 * i as f64 / n;
            (re + v * a.cos(), im + v * a.sin())
        })
    }

    #[test]
    fn four_point_basis_is_exact() {
        let b = dft_basis(4).unwrap();
        let expect = [
            [1.0, 1.0, 1.0, 1.0],
            [0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, -1.0, 0.0],
            [0.0, -1.0, 0.0, 1.0],
        ];
        assert_eq!(b.weights().dim(), (4, 4));
        for (r, row) in expect.iter().enumerate() {
            for (n, v) in row.iter().enumerate() {
                assert_eq!(b.weights()[[r, n]], *v, "row {r} col {n}");
            }
        }
    }

    #[test]
    fn window_len_below_two_rejected() {
        assert!(matches!(dft_basis(1), Err(Error::Validation(_))));
        assert!(matches!(dft_basis(0), Err(Error::Validation(_))));
    }

    #[test]
    fn constant_and_tone_projections() {
        let b = dft_basis(4).unwrap();
        assert_eq!(b.project(&[1.0; 4], 0), (4.0, 0.0));
        assert_eq!(b.project(&[1.0; 4], 1), (0.0, 0.0));

        let b8 = dft_basis(8).unwrap();
        let x: Vec<f64> = (0..8)
            .map(|n| (std::f64::consts::TAU * n as f64 / 8.0).cos())
            .collect();
        let (re, im) = b8.project(&x, 1);
        assert_abs_diff_eq!(re, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bin_freqs_follow_window() {
        let b = dft_basis(10).unwrap();
        assert_eq!(b.bin_freqs(30.0), vec![0.0, 3.0, 6.0, 9.0, 12.0]);
    }

    #[test]
    fn stft_window_count() {
        let s = stft(&[0.5; 30], 10, 1).unwrap();
        assert_eq!(s.window_count(), 21);
        assert_eq!(s.values.nrows(), 10);
        let s = stft(&[0.5; 30], 10, 3).unwrap();
        assert_eq!(s.window_count(), 7);
        assert!(stft(&[0.5; 9], 10, 1).is_err());
    }

    #[test]
    fn stft_of_constant_is_dc_only() {
        for n in [4, 7, 10] {
            let s = stft(&[0.3; 25], n, 1).unwrap();
            for m in 0..s.window_count() {
                assert_abs_diff_eq!(s.values[[0, m]], 0.3 * n as f64, epsilon = 1e-12);
                for r in 1..s.values.nrows() {
                    assert_abs_diff_eq!(s.values[[r, m]], 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn stft_matches_naive_dft() {
        let sig: Vec<f64> = (0..30).map(|i| ((i * 37 % 17) as f64) / 17.0).collect();
        let s = stft(&sig, 10, 2).unwrap();
        for m in 0..s.window_count() {
            for k in 0..5 {
                let (re, im) = naive_dft(&sig[2 * m..2 * m + 10], k);
                assert_abs_diff_eq!(s.values[[2 * k, m]], re, epsilon = 1e-9);
                assert_abs_diff_eq!(s.values[[2 * k + 1, m]], im, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sliding_dft_zeros_and_tone() {
        let mut sd = SlidingDft::new(10).unwrap();
        for _ in 0..10 {
            sd.push(0.0);
        }
        assert!(sd.bins().iter().all(|c| c.norm() == 0.0));

        let amp = 0.7;
        for i in 0..200 {
            sd.push(amp * (std::f64::consts::TAU * i as f64 / 10.0).sin());
        }
        assert_abs_diff_eq!(sd.bins()[1].norm(), 5.0 * amp, epsilon = 1e-9);
    }

    #[test]
    fn nearest_bin_rules() {
        assert_eq!(nearest_bin(2.5, 30.0, 10).unwrap(), 1);
        assert_eq!(nearest_bin(3.0, 30.0, 10).unwrap(), 1);
        assert_eq!(nearest_bin(6.2, 30.0, 10).unwrap(), 2);
        // Nyquist bin is excluded, clamp to the last kept bin.
        assert_eq!(nearest_bin(14.0, 30.0, 10).unwrap(), 4);
        assert!(nearest_bin(15.0, 30.0, 10).is_err());
        assert!(nearest_bin(0.0, 30.0, 10).is_err());
        assert!(nearest_bin(3.0, 30.0, 3).is_err());
    }

    fn stack_from_fn(t: usize, f: impl Fn(usize, usize, usize) -> f64) -> FloatSequence {
        let (h, w) = (16, 16);
        let mut data = Vec::with_capacity(t * h * w);
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ti, y, x));
                }
            }
        }
        FloatSequence {
            height: h,
            width: w,
            frame_count: t,
            fps: 30.0,
            data,
        }
    }

    #[test]
    fn constant_sequence_has_zero_energy() {
        let s = stack_from_fn(30, |_, y, x| (y * 16 + x) as f64 / 300.0);
        let e = band_energy_map(&s, 2.5, 10, 1).unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bin_aligned_tone_has_unit_ratio() {
        let s = stack_from_fn(30, |t, _, _| {
            0.5 + 0.2 * (std::f64::consts::TAU * 3.0 * t as f64 / 30.0).sin()
        });
        let e = band_energy_map(&s, 3.0, 10, 1).unwrap();
        assert_eq!(e.target_bin, 1);
        for v in e.values.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn band_energy_rejects_bad_frequency() {
        let s = stack_from_fn(30, |_, _, _| 0.0);
        assert!(band_energy_map(&s, 15.0, 10, 1).is_err());
        assert!(band_energy_map(&s, -1.0, 10, 1).is_err());
        assert!(band_energy_map(&s, 3.0, 40, 1).is_err());
    }
}
