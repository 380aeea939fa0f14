//! Analysis-of-distances scores over multipoint pattern histograms.

use super::morphology::{binarize_for_stats, downsample_cropped, DEFAULT_MIN_SIZE};
use super::patterns::{js_divergence, pattern_histogram, PatternHistogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AnodiRow {
    /// Downsampling factor (1 = original resolution).
    pub resolution: usize,
    /// Mean divergence from the reference image's pattern statistics.
    pub inconsistency: f64,
    /// Mean pairwise divergence between realizations.
    pub diversity: f64,
}

#[derive(Debug, Clone)]
pub struct AnodiReport {
    pub rows: Vec<AnodiRow>,
}

impl AnodiReport {
    pub fn at_resolution(&self, factor: usize) -> Option<&AnodiRow> {
        self.rows.iter().find(|r| r.resolution == factor)
    }
}

/// Pattern histogram of one continuous image at one resolution: downsample
/// (cropping to divisible dims), binarize with small-object removal, count
/// windows.
pub fn stats_histogram(
    image: &[f32],
    (h, w): (usize, usize),
    factor: usize,
    window: usize,
) -> Result<PatternHistogram> {
    let (img, dh, dw) = if factor == 1 {
        (image.to_vec(), h, w)
    } else {
        let cropped = downsample_cropped(image, h, w, factor)?;
        let dh = (h - h % factor) / factor;
        let dw = (w - w % factor) / factor;
        (cropped, dh, dw)
    };
    let binary = binarize_for_stats(&img, dh, dw, DEFAULT_MIN_SIZE)?;
    pattern_histogram(&binary, dh, dw, window)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Per-resolution inconsistency and diversity of a realization set against a
/// reference image. Pairwise divergences are computed in parallel (feature
/// `parallel`) and averaged in a fixed order.
pub fn anodi_scores(
    realizations: &[&[f32]],
    dims: (usize, usize),
    reference: &[f32],
    ref_dims: (usize, usize),
    resolutions: &[usize],
    window: usize,
) -> Result<AnodiReport> {
    if realizations.len() < 2 {
        return Err(Error::usage("ANODI needs at least two realizations"));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for &factor in resolutions {
        let ref_hist = stats_histogram(reference, ref_dims, factor, window)?;
        let hists = histograms_at(realizations, dims, factor, window)?;

        let inconsistency_terms: Vec<f64> = map_pairs(
            &(0..hists.len()).map(|i| (i, usize::MAX)).collect::<Vec<_>>(),
            |&(i, _)| js_divergence(&hists[i], &ref_hist),
        )?;
        let pairs: Vec<(usize, usize)> = (0..hists.len())
            .flat_map(|i| (i + 1..hists.len()).map(move |j| (i, j)))
            .collect();
        let diversity_terms: Vec<f64> =
            map_pairs(&pairs, |&(i, j)| js_divergence(&hists[i], &hists[j]))?;

        rows.push(AnodiRow {
            resolution: factor,
            inconsistency: mean(&inconsistency_terms),
            diversity: mean(&diversity_terms),
        });
    }
    Ok(AnodiReport { rows })
}

pub(crate) fn histograms_at(
    images: &[&[f32]],
    dims: (usize, usize),
    factor: usize,
    window: usize,
) -> Result<Vec<PatternHistogram>> {
    map_pairs(&(0..images.len()).collect::<Vec<_>>(), |&i| {
        stats_histogram(images[i], dims, factor, window)
    })
}

/// Order-preserving (deterministic) parallel map over an index list.
fn map_pairs<I: Sync, O: Send, F>(items: &[I], f: F) -> Result<Vec<O>>
where
    F: Fn(&I) -> Result<O> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    #[allow(unreachable_code)]
    items.iter().map(f).collect()
}
