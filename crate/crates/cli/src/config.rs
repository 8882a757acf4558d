//! Flat JSON run configuration shared by all subcommands.
//!
//! Precedence, lowest to highest: built-in defaults, `--preset`, the
//! `--config` file, then command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use needlevib::phantom::{EntrySide, PhantomSpec};
use needlevib::scoring::LossParams;
use needlevib::{DetectConfig, Error};

/// Every key is optional; unset keys keep the value from the layer below.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,

    pub height: Option<usize>,
    pub width: Option<usize>,
    pub frame_count: Option<usize>,
    pub fps: Option<f64>,
    pub pixel_spacing: Option<f64>,
    pub needle_angle: Option<f64>,
    pub needle_entry: Option<(f64, f64)>,
    pub needle_length: Option<f64>,
    pub vib_freq: Option<f64>,
    pub vib_amplitude: Option<f64>,
    pub motion_sigma: Option<f64>,
    pub visibility: Option<f64>,
    pub artifact_count: Option<usize>,
    pub speckle_grain: Option<f64>,
    pub entry_side: Option<EntrySide>,

    pub window_len: Option<usize>,
    pub hop: Option<usize>,
    pub theta_step: Option<f64>,
    pub rho_step: Option<f64>,
    pub top_p: Option<f64>,
    pub profile_threshold: Option<f64>,
    pub profile_smooth: Option<usize>,
    pub confidence_min: Option<f64>,
    pub tip_sigma: Option<f64>,
    pub t_min: Option<usize>,

    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub clamp_eps: Option<f64>,
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))
            .map_err(Into::into)
    }

    /// Keys set in `top` replace those in `self`.
    pub fn overlay(self, top: RunConfig) -> Result<Self> {
        let (Value::Object(mut base), Value::Object(top)) =
            (serde_json::to_value(self)?, serde_json::to_value(top)?)
        else {
            unreachable!("RunConfig serializes to an object");
        };
        for (k, v) in top {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
        Ok(serde_json::from_value(Value::Object(base))?)
    }

    pub fn phantom(&self) -> Result<PhantomSpec> {
        let seed = self.seed.unwrap_or(0);
        let preset = self.preset.as_deref().unwrap_or("paper");
        let mut s = PhantomSpec::preset(preset, seed)?;
        set(&mut s.height, self.height);
        set(&mut s.width, self.width);
        set(&mut s.frame_count, self.frame_count);
        set(&mut s.fps, self.fps);
        set(&mut s.pixel_spacing, self.pixel_spacing);
        set(&mut s.needle_angle, self.needle_angle);
        set(&mut s.needle_entry, self.needle_entry);
        set(&mut s.needle_length, self.needle_length);
        set(&mut s.vib_freq, self.vib_freq);
        set(&mut s.vib_amplitude, self.vib_amplitude);
        set(&mut s.motion_sigma, self.motion_sigma);
        set(&mut s.visibility, self.visibility);
        set(&mut s.artifact_count, self.artifact_count);
        set(&mut s.speckle_grain, self.speckle_grain);
        set(&mut s.entry_side, self.entry_side);
        s.validate().context("invalid phantom configuration")?;
        Ok(s)
    }

    pub fn detect(&self) -> Result<DetectConfig> {
        let mut c = DetectConfig::default();
        set(&mut c.vib_freq, self.vib_freq);
        set(&mut c.window_len, self.window_len);
        set(&mut c.hop, self.hop);
        set(&mut c.theta_step, self.theta_step);
        set(&mut c.rho_step, self.rho_step);
        set(&mut c.top_p, self.top_p);
        set(&mut c.entry_side, self.entry_side);
        set(&mut c.profile_threshold, self.profile_threshold);
        set(&mut c.profile_smooth, self.profile_smooth);
        set(&mut c.confidence_min, self.confidence_min);
        set(&mut c.tip_sigma, self.tip_sigma);
        set(&mut c.t_min, self.t_min);
        c.validate().context("invalid detection configuration")?;
        Ok(c)
    }

    pub fn loss(&self) -> Result<LossParams> {
        let mut p = LossParams::default();
        set(&mut p.alpha, self.alpha);
        set(&mut p.beta, self.beta);
        set(&mut p.gamma, self.gamma);
        set(&mut p.clamp_eps, self.clamp_eps);
        p.validate().context("invalid loss configuration")?;
        Ok(p)
    }
}
