//! Quantitative quality assessment: binarization, multipoint pattern
//! statistics, analysis-of-distances scores, multidimensional scaling,
//! discriminator-score histograms, memorization and interpolation checks.

mod anodi;
mod mds;
mod memorization;
mod morphology;
mod otsu;
mod patterns;

pub use anodi::{anodi_scores, stats_histogram, AnodiReport, AnodiRow};
pub use mds::{procrustes_error, smacof_mds, Embedding2D};
pub use memorization::{
    apply_variant, augmentation_count, gaussian_blur, memorization_check, variants, MemReport,
    MemRow, Variant,
};
pub use morphology::{
    binarize_clean, binarize_for_stats, downsample, downsample_cropped, remove_small_components,
    DEFAULT_MIN_SIZE,
};
pub use otsu::{between_class_variance, otsu_threshold};
pub use patterns::{js_divergence, js_divergence_masses, pattern_histogram, PatternHistogram};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::gan::{score_images, scores_to_probs};
use crate::layers::{DiscKind, DiscriminatorNet, GeneratorNet, Mode};
use std::io::Write;
use std::path::Path;

/// Default analysis resolutions (downsampling factors).
pub const DEFAULT_RESOLUTIONS: [usize; 4] = [1, 2, 4, 8];
/// Default pattern window.
pub const DEFAULT_WINDOW: usize = 4;
/// Default MDS iteration budget and tolerance.
pub const DEFAULT_MDS_ITERS: usize = 300;
pub const DEFAULT_MDS_TOL: f64 = 1e-3;
/// Default blur for the memorization distance.
pub const DEFAULT_BLUR_SIGMA: f64 = 1.0;

// ── Discriminator-score histograms ───────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ScoreHistogram {
    /// Counts over `bins` equal subdivisions of [0, 1].
    pub counts: Vec<u64>,
    pub mean: f64,
    pub variance: f64,
}

impl ScoreHistogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }
}

/// Histogram of sigmoid discriminator scores over `[0, 1]` with mean and
/// variance summaries (plausibility and diversity proxies). Requires a
/// classifier discriminator; critic scores are unbounded and rejected.
pub fn discriminator_histogram(
    disc: &mut DiscriminatorNet<f32>,
    images: &[f32],
    bins: usize,
) -> Result<ScoreHistogram> {
    if disc.kind() != DiscKind::Classifier {
        return Err(Error::usage(
            "score histograms need a classifier discriminator; critic scores are unbounded",
        ));
    }
    if bins == 0 {
        return Err(Error::usage("histogram needs at least one bin"));
    }
    let raw = score_images(disc, images)?;
    if raw.is_empty() {
        return Err(Error::usage("no images to score"));
    }
    let probs = scores_to_probs(&raw);
    let mut counts = vec![0u64; bins];
    for &p in &probs {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    let variance = probs.iter().map(|&p| (p - mean) * (p - mean)).sum::<f64>() / probs.len() as f64;
    Ok(ScoreHistogram { counts, mean, variance })
}

// ── Latent interpolation ─────────────────────────────────────────────────

/// Images along the straight latent segment from `z_a` to `z_b` inclusive.
pub fn latent_interpolation(
    gen: &mut GeneratorNet<f32>,
    z_a: &[f32],
    z_b: &[f32],
    steps: usize,
) -> Result<Vec<Vec<f32>>> {
    let n_z = gen.latent_dim();
    if z_a.len() != n_z || z_b.len() != n_z {
        return Err(Error::shape(format!(
            "latent endpoints must have length {n_z}, got {} and {}",
            z_a.len(),
            z_b.len()
        )));
    }
    if steps < 2 {
        return Err(Error::usage("interpolation needs at least 2 steps"));
    }
    let mut z = Vec::with_capacity(steps * n_z);
    for s in 0..steps {
        let t = s as f32 / (steps - 1) as f32;
        for i in 0..n_z {
            z.push((1.0 - t) * z_a[i] + t * z_b[i]);
        }
    }
    let mut tape = Tape::new();
    let zid = tape.leaf_const(vec![steps, n_z], z)?;
    let (img, _) = gen.forward(&mut tape, zid, Mode::Eval, false)?;
    let px = gen.image_size() * gen.image_size();
    Ok(tape.value(img).chunks_exact(px).map(|c| c.to_vec()).collect())
}

// ── CSV emission ─────────────────────────────────────────────────────────

pub fn write_anodi_csv(path: &Path, reports: &[(String, AnodiReport)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "method,resolution,inconsistency,diversity")?;
    for (method, report) in reports {
        for row in &report.rows {
            writeln!(f, "{method},{},{},{}", row.resolution, row.inconsistency, row.diversity)?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn write_embedding_csv(path: &Path, rows: &[(String, usize, f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "method,index,x,y")?;
    for (method, index, x, y) in rows {
        writeln!(f, "{method},{index},{x},{y}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, hist: &ScoreHistogram) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "bin_lo,bin_hi,count")?;
    let n = hist.bins() as f64;
    for (i, &c) in hist.counts.iter().enumerate() {
        writeln!(f, "{},{},{c}", i as f64 / n, (i + 1) as f64 / n)?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_memorization_csv(path: &Path, report: &MemReport) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "realization,nearest_image,variant,distance")?;
    for r in &report.rows {
        writeln!(f, "{},{},{},{}", r.realization, r.nearest_image, r.variant, r.distance)?;
    }
    f.flush()?;
    Ok(())
}
