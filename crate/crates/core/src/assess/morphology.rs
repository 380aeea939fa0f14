//! Binarization with small-object removal, and block-average downsampling.

use super::otsu::otsu_threshold;
use crate::error::{Error, Result};

/// Components smaller than this many pixels are flipped to the other phase.
pub const DEFAULT_MIN_SIZE: usize = 8;

/// 4-connected components of one phase; returns a label per pixel (usize::MAX
/// for the other phase) and the size of each component.
fn components(binary: &[u8], h: usize, w: usize, phase: u8) -> (Vec<usize>, Vec<usize>) {
    let mut labels = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut queue = Vec::new();
    for start in 0..h * w {
        if binary[start] != phase || labels[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        let mut size = 0usize;
        queue.push(start);
        labels[start] = label;
        while let Some(p) = queue.pop() {
            size += 1;
            let (r, c) = (p / w, p % w);
            let mut visit = |q: usize| {
                if binary[q] == phase && labels[q] == usize::MAX {
                    labels[q] = label;
                    queue.push(q);
                }
            };
            if r > 0 {
                visit(p - w);
            }
            if r + 1 < h {
                visit(p + w);
            }
            if c > 0 {
                visit(p - 1);
            }
            if c + 1 < w {
                visit(p + 1);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Otsu-binarize a continuous image (above-threshold pixels become phase 1),
/// then flip 4-connected components of either phase smaller than `min_size`
/// to the surrounding phase. Component detection runs once on the binarized
/// image; flips are applied simultaneously.
pub fn binarize_clean(image: &[f32], h: usize, w: usize, min_size: usize) -> Result<Vec<u8>> {
    if image.len() != h * w {
        return Err(Error::shape(format!("image length {} vs {h}x{w}", image.len())));
    }
    let threshold = otsu_threshold(image)?;
    let mut binary: Vec<u8> =
        image.iter().map(|&v| u8::from(v as f64 > threshold)).collect();
    remove_small_components(&mut binary, h, w, min_size);
    Ok(binary)
}

/// Flip components (both phases) smaller than `min_size` in place.
pub fn remove_small_components(binary: &mut [u8], h: usize, w: usize, min_size: usize) {
    if min_size <= 1 {
        return;
    }
    let snapshot = binary.to_vec();
    for phase in [0u8, 1u8] {
        let (labels, sizes) = components(&snapshot, h, w, phase);
        for (p, &label) in labels.iter().enumerate() {
            if label != usize::MAX && sizes[label] < min_size {
                binary[p] = 1 - phase;
            }
        }
    }
}

/// Binarize for pattern statistics, tolerating constant images (which Otsu
/// rejects) by mapping them to the phase of their sign.
pub fn binarize_for_stats(image: &[f32], h: usize, w: usize, min_size: usize) -> Result<Vec<u8>> {
    match binarize_clean(image, h, w, min_size) {
        Ok(b) => Ok(b),
        Err(Error::Domain(_)) => Ok(image.iter().map(|&v| u8::from(v > 0.0)).collect()),
        Err(e) => Err(e),
    }
}

/// Block-average pooling by `factor` on continuous values; dimensions must
/// divide evenly.
pub fn downsample(image: &[f32], h: usize, w: usize, factor: usize) -> Result<Vec<f32>> {
    if image.len() != h * w {
        return Err(Error::shape(format!("image length {} vs {h}x{w}", image.len())));
    }
    if factor == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
        return Err(Error::shape(format!("{h}x{w} not divisible by factor {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![0f32; oh * ow];
    let inv = 1.0 / (factor * factor) as f64;
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0f64;
            for dr in 0..factor {
                for dc in 0..factor {
                    acc += image[(r * factor + dr) * w + (c * factor + dc)] as f64;
                }
            }
            out[r * ow + c] = (acc * inv) as f32;
        }
    }
    Ok(out)
}

/// Crop to the largest prefix whose dims divide `factor`, then downsample.
pub fn downsample_cropped(image: &[f32], h: usize, w: usize, factor: usize) -> Result<Vec<f32>> {
    let (ch, cw) = (h - h % factor, w - w % factor);
    if ch == 0 || cw == 0 {
        return Err(Error::shape(format!("{h}x{w} too small for factor {factor}")));
    }
    if (ch, cw) == (h, w) {
        return downsample(image, h, w, factor);
    }
    let mut cropped = Vec::with_capacity(ch * cw);
    for r in 0..ch {
        cropped.extend_from_slice(&image[r * w..r * w + cw]);
    }
    downsample(&cropped, ch, cw, factor)
}
