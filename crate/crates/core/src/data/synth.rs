//! Synthetic channelized training images.
//!
//! Each image starts as background (-1) and receives a few channels drawn as
//! horizontally propagating random walks: a start row, a per-column vertical
//! step in {-1, 0, +1} with a persistence probability of repeating the last
//! step, and a constant thickness. Channel pixels are set to +1.

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct SynthParams {
    /// Channel count bounds for a 64-row image; the count scales with the
    /// image height so larger reference images keep a similar areal fraction.
    pub min_channels: usize,
    pub max_channels: usize,
    pub min_thickness: usize,
    pub max_thickness: usize,
    /// Probability of repeating the previous vertical step.
    pub persistence: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            min_channels: 2,
            max_channels: 4,
            min_thickness: 3,
            max_thickness: 5,
            persistence: 0.85,
        }
    }
}

impl SynthParams {
    fn channel_bounds(&self, h: usize) -> (usize, usize) {
        // 2..=4 channels at 64 rows, proportionally more on taller grids.
        let scale = (h as f64 / 64.0).max(1.0);
        let lo = ((self.min_channels as f64) * scale).round() as usize;
        let hi = ((self.max_channels as f64) * scale).round() as usize;
        (lo.max(1), hi.max(lo.max(1)))
    }
}

/// Generate `n` binary channel images of `h × w`; deterministic given seed.
pub fn synth_channels(n: usize, h: usize, w: usize, seed: u64, params: &SynthParams) -> Result<Dataset> {
    if h < 16 || w < 16 {
        return Err(Error::usage(format!("image size {h}x{w} below the 16x16 minimum")));
    }
    if n == 0 {
        return Err(Error::usage("image count must be positive"));
    }
    if params.min_thickness == 0 || params.max_thickness < params.min_thickness {
        return Err(Error::usage("invalid thickness range"));
    }
    let mut stream = rng::stream(seed, "synth");
    let (lo, hi) = params.channel_bounds(h);
    let mut images = vec![-1.0f32; n * h * w];
    for img in images.chunks_exact_mut(h * w) {
        let channels = stream.random_range(lo..=hi);
        for _ in 0..channels {
            let thickness = stream.random_range(params.min_thickness..=params.max_thickness);
            let mut row = stream.random_range(0..h) as isize;
            let mut step: isize = stream.random_range(-1i32..=1) as isize;
            for col in 0..w {
                if !stream.random_bool(params.persistence) {
                    step = stream.random_range(-1i32..=1) as isize;
                }
                row = (row + step).clamp(0, h as isize - 1);
                let top = row.clamp(0, h as isize - 1) as usize;
                for t in 0..thickness {
                    let r = top + t;
                    if r < h {
                        img[r * w + col] = 1.0;
                    }
                }
            }
        }
    }
    Dataset::new(h, w, images)
}
