//! Grayscale image sequences and the `VIBSEQ01` container.
//!
//! Layout (little-endian): 8-byte ASCII magic `VIBSEQ01`, `u32` height,
//! `u32` width, `u32` frame count, `f32` fps, `f32` pixel spacing in mm,
//! then `T*H*W` bytes of 8-bit samples, frame-major and row-major within
//! each frame.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const SEQ_MAGIC: &[u8; 8] = b"VIBSEQ01";
const HEADER_LEN: usize = 8 + 4 * 5;

/// Smallest accepted frame edge, in pixels.
pub const MIN_EDGE: usize = 16;

/// Read access to a `T x H x W` stack of normalized intensities.
///
/// Spectral and detection code is generic over this so that the same
/// pipeline runs on 8-bit containers and on float frames.
pub trait FrameStack: Sync {
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    fn frame_count(&self) -> usize;
    fn fps(&self) -> f64;

    /// Writes the temporal signal of pixel `(x, y)` into `out` (length `T`).
    fn fill_signal(&self, x: usize, y: usize, out: &mut [f64]);
}

/// An immutable, validated sequence of 8-bit grayscale frames.
#[derive(Debug, Clone, PartialEq)]
pub struct UsSequence {
    height: usize,
    width: usize,
    frame_count: usize,
    fps: f32,
    pixel_spacing: f32,
    frames: Vec<u8>,
}

impl UsSequence {
    pub fn new(
        height: usize,
        width: usize,
        frame_count: usize,
        fps: f32,
        pixel_spacing: f32,
        frames: Vec<u8>,
    ) -> Result<Self> {
        if height < MIN_EDGE || width < MIN_EDGE {
            return Err(Error::validation(format!(
                "frame size {height}x{width} below minimum {MIN_EDGE}x{MIN_EDGE}"
            )));
        }
        if frame_count == 0 {
            return Err(Error::validation("sequence has no frames"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::validation(format!("fps must be positive, got {fps}")));
        }
        if !(pixel_spacing.is_finite() && pixel_spacing > 0.0) {
            return Err(Error::validation(format!(
                "pixel spacing must be positive, got {pixel_spacing}"
            )));
        }
        let expected = frame_count * height * width;
        if frames.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: frames.len(),
            });
        }
        Ok(Self {
            height,
            width,
            frame_count,
            fps,
            pixel_spacing,
            frames,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn pixel_spacing(&self) -> f32 {
        self.pixel_spacing
    }

    pub fn frames(&self) -> &[u8] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.frames[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize) -> u8 {
        self.frames[(t * self.height + y) * self.width + x]
    }

    /// Temporal signal of one pixel, normalized to `[0, 1]`.
    pub fn pixel_signal(&self, x: usize, y: usize) -> Result<PixelSignal> {
        if x >= self.width || y >= self.height {
            return Err(Error::OutOfBounds {
                x: x as i64,
                y: y as i64,
                width: self.width,
                height: self.height,
            });
        }
        let mut samples = vec![0.0; self.frame_count];
        FrameStack::fill_signal(self, x, y, &mut samples);
        Ok(PixelSignal { samples })
    }

    /// Sub-sequence of frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<UsSequence> {
        if len == 0 || start + len > self.frame_count {
            return Err(Error::validation(format!(
                "frame range {start}..{} outside 0..{}",
                start + len,
                self.frame_count
            )));
        }
        let n = self.height * self.width;
        UsSequence::new(
            self.height,
            self.width,
            len,
            self.fps,
            self.pixel_spacing,
            self.frames[start * n..(start + len) * n].to_vec(),
        )
    }

    /// Left-right mirror of every frame.
    pub fn mirrored_horizontally(&self) -> UsSequence {
        let mut frames = self.frames.clone();
        for row in frames.chunks_exact_mut(self.width) {
            row.reverse();
        }
        UsSequence { frames, ..self.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.frames.len());
        out.extend_from_slice(SEQ_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.frame_count as u32).to_le_bytes());
        out.extend_from_slice(&self.fps.to_le_bytes());
        out.extend_from_slice(&self.pixel_spacing.to_le_bytes());
        out.extend_from_slice(&self.frames);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 8 && &bytes[..8] != SEQ_MAGIC {
                return Err(Error::Format("bad magic, expected VIBSEQ01".into()));
            }
            return Err(Error::Format(format!(
                "header truncated: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        if &bytes[..8] != SEQ_MAGIC {
            return Err(Error::Format("bad magic, expected VIBSEQ01".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let height = u32_at(8) as usize;
        let width = u32_at(12) as usize;
        let frame_count = u32_at(16) as usize;
        let fps = f32_at(20);
        let pixel_spacing = f32_at(24);

        let payload = &bytes[HEADER_LEN..];
        let expected = frame_count
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
        if payload.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: payload.len(),
            });
        }
        UsSequence::new(height, width, frame_count, fps, pixel_spacing, payload.to_vec())
    }
}

impl FrameStack for UsSequence {
    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn fps(&self) -> f64 {
        self.fps as f64
    }

    #[inline]
    fn fill_signal(&self, x: usize, y: usize, out: &mut [f64]) {
        let stride = self.height * self.width;
        let base = y * self.width + x;
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.frames[base + t * stride] as f64 / 255.0;
        }
    }
}

/// Normalized temporal signal of a single pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSignal {
    pub samples: Vec<f64>,
}

impl PixelSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Float frames with the same layout as [`UsSequence`], used where the
/// 8-bit quantization step must be bypassed.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatSequence {
    pub height: usize,
    pub width: usize,
    pub frame_count: usize,
    pub fps: f64,
    pub data: Vec<f64>,
}

impl FloatSequence {
    pub fn from_sequence(seq: &UsSequence) -> Self {
        Self {
            height: seq.height,
            width: seq.width,
            frame_count: seq.frame_count,
            fps: seq.fps as f64,
            data: seq.frames.iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    /// Applies `v -> a*v + b` to every sample.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| a * v + b).collect(),
            ..self.clone()
        }
    }
}

impl FrameStack for FloatSequence {
    fn height(&self) -> usize {
        self.height
    }

    fn width(&self) -> usize {
        self.width
    }

    fn frame_count(&self) -> usize {
        self.frame_count
    }

    fn fps(&self) -> f64 {
        self.fps
    }

    #[inline]
    fn fill_signal(&self, x: usize, y: usize, out: &mut [f64]) {
        let stride = self.height * self.width;
        let base = y * self.width + x;
        for (t, o) in out.iter_mut().enumerate() {
            *o = self.data[base + t * stride];
        }
    }
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<UsSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    UsSequence::from_bytes(&bytes)
}

pub fn save_sequence(seq: &UsSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&seq.to_bytes())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(t: usize) -> UsSequence {
        let frames = (0..t * 16 * 16).map(|i| (i * 7 % 251) as u8).collect();
        UsSequence::new(16, 16, t, 30.0, 0.15, frames).unwrap()
    }

    #[test]
    fn round_trip_minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.vibseq");
        let seq = small(10);
        save_sequence(&seq, &path).unwrap();
        let back = load_sequence(&path).unwrap();
        assert_eq!(back, seq);
        assert_eq!(back.fps(), 30.0);
        assert_eq!(back.pixel_spacing(), 0.15);
    }

    #[test]
    fn two_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.vibseq");
        let b = dir.path().join("b.vibseq");
        let seq = small(10);
        save_sequence(&seq, &a).unwrap();
        save_sequence(&seq, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = small(10).to_bytes();
        bytes[..8].copy_from_slice(b"VIBSEQ00");
        assert!(matches!(UsSequence::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let mut bytes = small(30).to_bytes();
        bytes.truncate(bytes.len() - 16 * 16);
        match UsSequence::from_bytes(&bytes) {
            Err(Error::SizeMismatch { expected, found }) => {
                assert_eq!(expected, 30 * 256);
                assert_eq!(found, 29 * 256);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn zero_fps_or_spacing_rejected() {
        let mut bytes = small(10).to_bytes();
        bytes[20..24].copy_from_slice(&0f32.to_le_bytes());
        assert!(matches!(UsSequence::from_bytes(&bytes), Err(Error::Validation(_))));

        let mut bytes = small(10).to_bytes();
        bytes[24..28].copy_from_slice(&0f32.to_le_bytes());
        assert!(matches!(UsSequence::from_bytes(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn save_to_unwritable_path_is_io_error() {
        let seq = small(10);
        let err = save_sequence(&seq, "/nonexistent-dir/x/y.vibseq").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn pixel_signal_of_zero_frames() {
        let seq = UsSequence::new(16, 16, 12, 30.0, 0.1, vec![0; 12 * 256]).unwrap();
        let s = seq.pixel_signal(3, 4).unwrap();
        assert_eq!(s.samples, vec![0.0; 12]);
    }

    #[test]
    fn pixel_signal_single_bright_frame() {
        let mut frames = vec![0u8; 8 * 256];
        frames[3 * 256..4 * 256].fill(255);
        let seq = UsSequence::new(16, 16, 8, 30.0, 0.1, frames).unwrap();
        let s = seq.pixel_signal(15, 0).unwrap();
        assert_eq!(s.samples, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pixel_signal_out_of_bounds() {
        let seq = small(4);
        assert!(matches!(seq.pixel_signal(16, 0), Err(Error::OutOfBounds { .. })));
        assert!(matches!(seq.pixel_signal(0, 16), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn mirror_is_an_involution() {
        let seq = small(3);
        let m = seq.mirrored_horizontally();
        assert_eq!(m.at(1, 2, 0), seq.at(1, 2, 15));
        assert_eq!(m.mirrored_horizontally(), seq);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(h in 16usize..24, w in 16usize..24, t in 1usize..5, seed in any::<u64>()) {
            let frames: Vec<u8> = (0..h * w * t)
                .map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8)
                .collect();
            let seq = UsSequence::new(h, w, t, 25.0, 0.2, frames).unwrap();
            prop_assert_eq!(UsSequence::from_bytes(&seq.to_bytes()).unwrap(), seq);
        }

        #[test]
        fn pixel_signal_matches_direct_indexing(seed in any::<u64>(), x in 0usize..17, y in 0usize..19) {
            let (h, w, t) = (19, 17, 9);
            let frames: Vec<u8> = (0..h * w * t)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) >> 3) as u8)
                .collect();
            let seq = UsSequence::new(h, w, t, 30.0, 0.1, frames.clone()).unwrap();
            let s = seq.pixel_signal(x, y).unwrap();
            prop_assert_eq!(s.len(), t);
            for (ti, v) in s.samples.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(v));
                prop_assert_eq!(*v, frames[ti * h * w + y * w + x] as f64 / 255.0);
            }
        }
    }
}
