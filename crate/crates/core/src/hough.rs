//! Discrete Hough transform over feature images, Gaussian ground-truth
//! rendering in Hough space, and shaft/tip extraction from two-channel
//! Hough predictions.
//!
//! Conventions: `x` is the column and `y` the row, origin top-left. A line
//! is `rho = x*cos(theta) + y*sin(theta)` with `theta` in `[0, 180)`
//! degrees. A continuous `rho` falls into bin `floor(rho/rho_step + 0.5) +
//! rho_offset`; the same rule drives forward voting and inverse
//! rasterization, so a cell's image-space line is exactly the set of
//! pixels that vote for it.

use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_THETA_STEP: f64 = 1.0;
pub const DEFAULT_RHO_STEP: f64 = 1.0;
/// Gaussian width of rendered ground truth, in bins.
pub const DEFAULT_GT_SIGMA: f64 = 2.0;
/// Percentage of tip-channel cells used for inverse voting.
pub const DEFAULT_TOP_P: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HoughGrid {
    image_h: usize,
    image_w: usize,
    theta_step: f64,
    rho_step: f64,
    theta_bins: usize,
    rho_bins: usize,
    rho_offset: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl HoughGrid {
    pub fn new(image_h: usize, image_w: usize, theta_step: f64, rho_step: f64) -> Result<Self> {
        if image_h == 0 || image_w == 0 {
            return Err(Error::validation("image must be non-empty"));
        }
        if !(theta_step > 0.0 && theta_step <= 180.0) {
            return Err(Error::validation(format!(
                "theta step must be in (0, 180], got {theta_step}"
            )));
        }
        if !(rho_step > 0.0 && rho_step.is_finite()) {
            return Err(Error::validation(format!(
                "rho step must be positive, got {rho_step}"
            )));
        }
        let theta_bins = (180.0 / theta_step - 1e-9).ceil() as usize;
        let diag = ((image_h * image_h + image_w * image_w) as f64).sqrt();
        let rho_offset = (diag / rho_step).ceil() as usize;
        let (sin, cos) = (0..theta_bins)
            .map(|i| (i as f64 * theta_step).to_radians().sin_cos())
            .unzip();
        Ok(Self {
            image_h,
            image_w,
            theta_step,
            rho_step,
            theta_bins,
            rho_bins: 2 * rho_offset + 1,
            rho_offset,
            cos,
            sin,
        })
    }

    pub fn with_defaults(image_h: usize, image_w: usize) -> Result<Self> {
        Self::new(image_h, image_w, DEFAULT_THETA_STEP, DEFAULT_RHO_STEP)
    }

    pub fn image_h(&self) -> usize {
        self.image_h
    }

    pub fn image_w(&self) -> usize {
        self.image_w
    }

    pub fn theta_step(&self) -> f64 {
        self.theta_step
    }

    pub fn rho_step(&self) -> f64 {
        self.rho_step
    }

    pub fn theta_bins(&self) -> usize {
        self.theta_bins
    }

    pub fn rho_bins(&self) -> usize {
        self.rho_bins
    }

    pub fn rho_offset(&self) -> usize {
        self.rho_offset
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.theta_bins, self.rho_bins)
    }

    pub fn cell_count(&self) -> usize {
        self.theta_bins * self.rho_bins
    }

    /// Continuous `rho` of pixel `(x, y)` at theta bin `i`.
    #[inline]
    pub fn rho_at(&self, i: usize, x: f64, y: f64) -> f64 {
        x * self.cos[i] + y * self.sin[i]
    }

    /// Signed bin offset (relative to `rho = 0`) of a continuous `rho`.
    #[inline]
    fn rho_index(&self, rho: f64) -> i64 {
        (rho / self.rho_step + 0.5).floor() as i64
    }

    /// Rho bin that pixel `(x, y)` votes into at theta bin `i`.
    #[inline]
    pub fn rho_bin(&self, i: usize, x: usize, y: usize) -> usize {
        (self.rho_index(self.rho_at(i, x as f64, y as f64)) + self.rho_offset as i64) as usize
    }

    /// Bin-center `(theta_deg, rho_px)` of a cell.
    pub fn line_from_cell(&self, theta_idx: usize, rho_idx: usize) -> Result<(f64, f64)> {
        if theta_idx >= self.theta_bins || rho_idx >= self.rho_bins {
            return Err(Error::validation(format!(
                "cell ({theta_idx}, {rho_idx}) outside {}x{} grid",
                self.theta_bins, self.rho_bins
            )));
        }
        Ok((
            theta_idx as f64 * self.theta_step,
            (rho_idx as f64 - self.rho_offset as f64) * self.rho_step,
        ))
    }

    /// Nearest cell to a line; theta is wrapped into `[0, 180)` (flipping
    /// the sign of rho). `None` when rho falls off the grid.
    pub fn cell_from_line(&self, theta_deg: f64, rho: f64) -> Option<(usize, usize)> {
        let (theta, rho) = normalize_line(theta_deg, rho);
        let mut i = (theta / self.theta_step + 0.5).floor() as usize;
        let mut rho = rho;
        if i >= self.theta_bins {
            i = 0;
            rho = -rho;
        }
        let j = self.rho_index(rho) + self.rho_offset as i64;
        (0..self.rho_bins as i64).contains(&j).then_some((i, j as usize))
    }

    /// Pixels whose vote at theta bin `i` lands in rho bin `j`, i.e. the
    /// 1-px digital line of that cell. Steps along columns when the line is
    /// closer to horizontal, along rows otherwise.
    pub fn line_pixels(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let lo = (j as f64 - self.rho_offset as f64 - 0.5) * self.rho_step;
        let hi = lo + self.rho_step;
        let (c, s) = (self.cos[i], self.sin[i]);
        let mut out = Vec::new();
        if s.abs() >= c.abs() {
            for x in 0..self.image_w {
                let a = (lo - x as f64 * c) / s;
                let b = (hi - x as f64 * c) / s;
                let (y0, y1) = (a.min(b).floor() as i64 - 1, a.max(b).ceil() as i64 + 1);
                for y in y0.max(0)..=y1.min(self.image_h as i64 - 1) {
                    if self.rho_bin(i, x, y as usize) == j {
                        out.push((x, y as usize));
                    }
                }
            }
        } else {
            for y in 0..self.image_h {
                let a = (lo - y as f64 * s) / c;
                let b = (hi - y as f64 * s) / c;
                let (x0, x1) = (a.min(b).floor() as i64 - 1, a.max(b).ceil() as i64 + 1);
                for x in x0.max(0)..=x1.min(self.image_w as i64 - 1) {
                    if self.rho_bin(i, x as usize, y) == j {
                        out.push((x as usize, y));
                    }
                }
            }
        }
        out
    }

    fn check_image(&self, dim: (usize, usize)) -> Result<()> {
        if dim != (self.image_h, self.image_w) {
            return Err(Error::validation(format!(
                "image is {}x{}, grid expects {}x{}",
                dim.0, dim.1, self.image_h, self.image_w
            )));
        }
        Ok(())
    }

    fn check_hough(&self, dim: (usize, usize)) -> Result<()> {
        if dim != self.shape() {
            return Err(Error::validation(format!(
                "hough image is {}x{}, grid expects {}x{}",
                dim.0, dim.1, self.theta_bins, self.rho_bins
            )));
        }
        Ok(())
    }
}

/// Brings `(theta, rho)` to `theta` in `[0, 180)`.
pub fn normalize_line(theta_deg: f64, rho: f64) -> (f64, f64) {
    let turns = (theta_deg / 180.0).floor();
    let theta = theta_deg - 180.0 * turns;
    let rho = if (turns as i64) % 2 == 0 { rho } else { -rho };
    if theta >= 180.0 {
        (0.0, -rho)
    } else {
        (theta, rho)
    }
}

/// Shaft and tip channels in Hough space.
#[derive(Debug, Clone, PartialEq)]
pub struct HoughMap {
    pub shaft: Array2<f64>,
    pub tip: Array2<f64>,
}

/// Soft voting: every pixel adds its value to one rho bin per theta bin.
pub fn hough_transform(feature: &Array2<f64>, grid: &HoughGrid) -> Result<Array2<f64>> {
    grid.check_image(feature.dim())?;
    let votes: Vec<(usize, usize, f64)> = feature
        .indexed_iter()
        .filter(|(_, &v)| v != 0.0)
        .map(|((y, x), &v)| (x, y, v))
        .collect();
    let rows: Vec<Vec<f64>> = (0..grid.theta_bins)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; grid.rho_bins];
            for &(x, y, v) in &votes {
                row[grid.rho_bin(i, x, y)] += v;
            }
            row
        })
        .collect();
    Ok(Array2::from_shape_vec(grid.shape(), rows.concat()).expect("row lengths fixed"))
}

/// Weighted sum of the rasterized lines of `cells` (`theta_idx, rho_idx,
/// weight`).
pub fn inverse_hough_accumulate(
    cells: &[(usize, usize, f64)],
    grid: &HoughGrid,
) -> Result<Array2<f64>> {
    let mut acc = Array2::zeros((grid.image_h, grid.image_w));
    for &(i, j, w) in cells {
        if i >= grid.theta_bins || j >= grid.rho_bins {
            return Err(Error::validation(format!("cell ({i}, {j}) outside grid")));
        }
        if w == 0.0 {
            continue;
        }
        for (x, y) in grid.line_pixels(i, j) {
            acc[[y, x]] += w;
        }
    }
    Ok(acc)
}

/// 2-D Gaussian peak at `(theta, rho)` measured in bin units. Theta wraps
/// at 180 degrees with the matching rho reflection.
pub fn render_shaft_gt(grid: &HoughGrid, theta_deg: f64, rho: f64, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
    }
    let (theta, rho) = normalize_line(theta_deg, rho);
    let off = grid.rho_offset as f64;
    let tb = theta / grid.theta_step;
    let rb = rho / grid.rho_step + off;
    let rb_flip = -rho / grid.rho_step + off;
    let period = grid.theta_bins as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Array2::from_shape_fn(grid.shape(), |(i, j)| {
        let (i, j) = (i as f64, j as f64);
        let direct = (i - tb).powi(2) + (j - rb).powi(2);
        let wrapped = (i - tb - period)
            .powi(2)
            .min((i - tb + period).powi(2))
            + (j - rb_flip).powi(2);
        (-direct.min(wrapped) * inv).exp()
    }))
}

/// Row-wise 1-D Gaussian along rho around the tip's sinusoid. Each row
/// peaks at exactly 1 in the bin the tip pixel votes into.
pub fn render_tip_gt(grid: &HoughGrid, tip_x: f64, tip_y: f64, sigma: f64) -> Result<Array2<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
    }
    let (w, h) = (grid.image_w as f64, grid.image_h as f64);
    if !(tip_x >= 0.0 && tip_y >= 0.0 && tip_x <= w - 1.0 && tip_y <= h - 1.0) {
        return Err(Error::validation(format!(
            "tip ({tip_x}, {tip_y}) outside {}x{} image",
            grid.image_w, grid.image_h
        )));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = Array2::zeros(grid.shape());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let center = (grid.rho_index(grid.rho_at(i, tip_x, tip_y)) + grid.rho_offset as i64) as f64;
        for (j, v) in row.iter_mut().enumerate() {
            *v = (-(j as f64 - center).powi(2) * inv).exp();
        }
    }
    Ok(out)
}

/// Global argmax `(theta_idx, rho_idx, value)`; ties go to the smallest
/// theta index, then the smallest rho index.
pub fn argmax_cell(channel: &Array2<f64>) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for ((i, j), &v) in channel.indexed_iter() {
        if best.is_none_or(|(_, _, b)| v > b) {
            best = Some((i, j, v));
        }
    }
    best
}

/// Shaft line from the brightest cell of the shaft channel.
pub fn shaft_from_hough(shaft: &Array2<f64>, grid: &HoughGrid) -> Result<(f64, f64)> {
    grid.check_hough(shaft.dim())?;
    match argmax_cell(shaft) {
        Some((i, j, v)) if v > 0.0 => grid.line_from_cell(i, j),
        _ => Err(Error::NoDetection("shaft channel has no positive cell".into())),
    }
}

/// Highest `ceil(top_p% * cells)` cells, ordered by value then index.
pub fn top_cells(channel: &Array2<f64>, top_p: f64) -> Result<Vec<(usize, usize, f64)>> {
    if !(top_p > 0.0 && top_p <= 100.0) {
        return Err(Error::validation(format!("top_p must be in (0, 100], got {top_p}")));
    }
    let cols = channel.ncols();
    let n = ((top_p / 100.0) * channel.len() as f64).ceil().max(1.0) as usize;
    let mut cells: Vec<(usize, f64)> = channel.iter().cloned().enumerate().collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| {
        b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
    };
    let n = n.min(cells.len());
    if n < cells.len() {
        cells.select_nth_unstable_by(n - 1, order);
        cells.truncate(n);
    }
    cells.sort_by(order);
    Ok(cells.into_iter().map(|(idx, v)| (idx / cols, idx % cols, v)).collect())
}

/// Tip pixel from the tip channel: probability-weighted inverse Hough
/// voting of the top `top_p` percent cells, then the brightest pixel
/// (ties go to the smallest row, then column).
pub fn tip_from_hough(tip: &Array2<f64>, grid: &HoughGrid, top_p: f64) -> Result<(f64, f64)> {
    grid.check_hough(tip.dim())?;
    let cells = top_cells(tip, top_p)?;
    if cells.first().is_none_or(|c| c.2 <= 0.0) {
        return Err(Error::NoDetection("tip channel has no positive cell".into()));
    }
    let acc = inverse_hough_accumulate(&cells, grid)?;
    match argmax_cell(&acc) {
        Some((y, x, v)) if v > 0.0 => Ok((x as f64, y as f64)),
        _ => Err(Error::NoDetection("inverse Hough image is empty".into())),
    }
}
