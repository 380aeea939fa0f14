//! Otsu thresholding over a 256-bin histogram.

use crate::error::{Error, Result};

pub const OTSU_BINS: usize = 256;

/// Histogram of `values` over their own range.
fn histogram(values: &[f32], lo: f64, hi: f64) -> Vec<u64> {
    let mut bins = vec![0u64; OTSU_BINS];
    let width = (hi - lo) / OTSU_BINS as f64;
    for &v in values {
        let b = (((v as f64 - lo) / width) as usize).min(OTSU_BINS - 1);
        bins[b] += 1;
    }
    bins
}

/// Between-class variance of the split `bins[..=t]` vs `bins[t+1..]`, with
/// class means in bin-index units. `None` when one class is empty.
pub fn between_class_variance(bins: &[u64], t: usize) -> Option<f64> {
    let total: u64 = bins.iter().sum();
    let w0: u64 = bins[..=t].iter().sum();
    let w1 = total - w0;
    if w0 == 0 || w1 == 0 {
        return None;
    }
    let m0: f64 = bins[..=t]
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum::<f64>()
        / w0 as f64;
    let m1: f64 = bins[t + 1..]
        .iter()
        .enumerate()
        .map(|(i, &c)| (t + 1 + i) as f64 * c as f64)
        .sum::<f64>()
        / w1 as f64;
    Some(w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1))
}

/// Threshold maximizing the between-class variance over a 256-bin histogram
/// of the value range; ties resolve to the lowest threshold. Values at most
/// the threshold fall in the lower class.
pub fn otsu_threshold(values: &[f32]) -> Result<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    if values.len() < 2 || !(hi > lo) {
        return Err(Error::domain("Otsu needs at least two distinct values"));
    }
    let bins = histogram(values, lo, hi);
    let total: u64 = bins.iter().sum();

    // classic single pass with running sums
    let sum_total: f64 = bins.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0f64;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for t in 0..OTSU_BINS - 1 {
        w0 += bins[t];
        sum0 += t as f64 * bins[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_total - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best.0 {
            best = (var, t);
        }
    }
    let width = (hi - lo) / OTSU_BINS as f64;
    Ok(lo + (best.1 + 1) as f64 * width)
}
