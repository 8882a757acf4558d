//! `VIBMAP01`: multi-channel float maps (spectrograms, energy maps, Hough
//! channels).
//!
//! Layout (little-endian): magic `VIBMAP01`, `u32` rows, `u32` cols,
//! `u32` channels, then `f32` samples, channel-major then row-major.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAP_MAGIC: &[u8; 8] = b"VIBMAP01";
const HEADER_LEN: usize = 8 + 12;

#[derive(Debug, Clone, PartialEq)]
pub struct VibMap {
    pub channels: Vec<Array2<f32>>,
}

impl VibMap {
    pub fn new(channels: Vec<Array2<f32>>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::validation("map needs at least one channel"))?;
        let dim = first.dim();
        if channels.iter().any(|c| c.dim() != dim) {
            return Err(Error::validation("all channels must share one shape"));
        }
        Ok(Self { channels })
    }

    pub fn from_f64(channels: &[&Array2<f64>]) -> Result<Self> {
        Self::new(channels.iter().map(|c| c.mapv(|v| v as f32)).collect())
    }

    /// `(rows, cols, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (r, c) = self.channels[0].dim();
        (r, c, self.channels.len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (rows, cols, chans) = self.dims();
        let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * chans * 4);
        out.extend_from_slice(MAP_MAGIC);
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        out.extend_from_slice(&(chans as u32).to_le_bytes());
        for ch in &self.channels {
            for v in ch.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAP_MAGIC {
            return Err(Error::Format("bad or truncated VIBMAP01 header".into()));
        }
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let (rows, cols, chans) = (u32_at(8), u32_at(12), u32_at(16));
        let expected = rows * cols * chans * 4;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: payload.len(),
            });
        }
        let mut channels = Vec::with_capacity(chans);
        for chunk in payload.chunks_exact((rows * cols * 4).max(1)).take(chans) {
            let vals: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            channels.push(Array2::from_shape_vec((rows, cols), vals).expect("shape checked"));
        }
        Self::new(channels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Binary PGM (P5) preview of one channel, min-max scaled to 8 bits.
pub fn pgm_preview(channel: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = channel.dim();
    let lo = channel.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = channel.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(
        channel
            .iter()
            .map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}
