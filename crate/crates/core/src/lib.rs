//! Detection of a vibrating needle-like line and its tip in grayscale
//! image sequences from per-pixel temporal frequency content.

// `!(x > 0.0)` checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hough;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod scoring;
pub mod sequence;
pub mod spectral;
pub mod vibmap;

pub use error::{Error, Result};
pub use pipeline::{detect, DetectConfig, Detection, StreamState};
