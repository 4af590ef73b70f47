//! Multi-scale image pyramid.

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct PyramidConfig {
    /// Level scale factors (level pixels per image pixel), strictly increasing.
    pub scales: Vec<f64>,
    pub stride: usize,
    /// Adds one smaller scale below the first.
    pub zoom: bool,
    pub mask_threshold: f64,
    pub max_proposals: usize,
}

/// `2^-2, 2^-1.5, ..., 2^1`.
pub fn default_scales() -> Vec<f64> {
    (-4..=2).map(|k| (f64::from(k) / 2.0).exp2()).collect()
}

pub const ZOOM_SCALE: f64 = 0.176_776_695_296_636_9; // 2^-2.5

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            scales: default_scales(),
            stride: 16,
            zoom: false,
            mask_threshold: 0.2,
            max_proposals: 1000,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("pyramid scales must be positive".into()));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("pyramid scales must be strictly increasing".into()));
        }
        if self.stride != 16 {
            return Err(Error::Config(format!(
                "stride must equal the trunk downsample factor 16, got {}",
                self.stride
            )));
        }
        if self.zoom && ZOOM_SCALE >= self.scales[0] {
            return Err(Error::Config("zoom scale must lie below the first scale".into()));
        }
        if !(0.0..1.0).contains(&self.mask_threshold) {
            return Err(Error::Config("mask threshold must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Scales in use, including the zoom level.
    pub fn effective_scales(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.scales.len() + 1);
        if self.zoom {
            s.push(ZOOM_SCALE);
        }
        s.extend_from_slice(&self.scales);
        s
    }
}

/// One resampled level.
#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    /// Nominal scale factor.
    pub scale: f64,
    /// Exact per-axis factors after rounding the level size.
    pub sx: f64,
    pub sy: f64,
    pub image: Image,
}

/// Rounds `v` to the nearest positive multiple of 32.
pub fn round32(v: f64) -> usize {
    ((v / 32.0).round() as usize) * 32
}

/// Side lengths of the level at `scale`.
pub fn level_dims(width: usize, height: usize, scale: f64) -> (usize, usize) {
    (round32(width as f64 * scale), round32(height as f64 * scale))
}

/// Resamples the image at every configured scale; levels smaller than
/// `min_side` in either dimension are skipped with a notice.
pub fn build_pyramid(image: &Image, config: &PyramidConfig, min_side: usize) -> Result<Vec<Level>> {
    config.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Data("cannot build a pyramid from an empty image".into()));
    }
    let mut levels = Vec::new();
    for scale in config.effective_scales() {
        let (w, h) = level_dims(image.width(), image.height(), scale);
        if w < min_side.max(1) || h < min_side.max(1) {
            log::info!(
                "skipping scale {scale:.4}: level {w}x{h} is smaller than one {min_side}px patch"
            );
            continue;
        }
        levels.push(Level {
            scale,
            sx: w as f64 / image.width() as f64,
            sy: h as f64 / image.height() as f64,
            image: image.resize(w, h),
        });
    }
    Ok(levels)
}
