//! Nearest-neighbor memorization check against an augmented dataset.
//!
//! Each training image spawns the product set of {identity, horizontal,
//! vertical, both flips} × {0°, ±10° rotation} × {0°, ±10° shear} — i.e. 35
//! variants beyond the original. Distances are Euclidean after a Gaussian
//! blur on both sides, which forgives small translations.

use crate::data::Dataset;
use crate::error::{Error, Result};

const ANGLE_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub flip_h: bool,
    pub flip_v: bool,
    /// -1, 0, +1 in units of 10 degrees.
    pub rot: i8,
    pub shear: i8,
}

/// The 36 augmentation variants (index 0 is the identity).
pub fn variants() -> Vec<Variant> {
    let mut out = Vec::with_capacity(36);
    for &(flip_h, flip_v) in &[(false, false), (true, false), (false, true), (true, true)] {
        for rot in [0i8, 1, -1] {
            for shear in [0i8, 1, -1] {
                out.push(Variant { flip_h, flip_v, rot, shear });
            }
        }
    }
    // identity first
    out.sort_by_key(|v| (v.flip_h, v.flip_v, v.rot != 0, v.shear != 0));
    out
}

/// Count of non-identity variants per image.
pub fn augmentation_count() -> usize {
    variants().len() - 1
}

fn reflect(mut x: f64, n: f64) -> f64 {
    // reflect into [0, n-1]
    let period = 2.0 * (n - 1.0).max(1.0);
    x = x.rem_euclid(period);
    if x > n - 1.0 {
        x = period - x;
    }
    x
}

/// Apply a variant with inverse mapping, bilinear interpolation and
/// reflection fill.
pub fn apply_variant(image: &[f32], h: usize, w: usize, v: &Variant) -> Vec<f32> {
    let (ch, cw) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = v.rot as f64 * ANGLE_DEG.to_radians();
    let shear = (v.shear as f64 * ANGLE_DEG.to_radians()).tan();
    // forward transform: flips, then rotation, then shear (x' = x + s·y);
    // invert: y,x centered output coords → input coords
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let mut out = vec![0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let y = r as f64 - ch;
            let x = c as f64 - cw;
            // inverse shear
            let xs = x - shear * y;
            let ys = y;
            // inverse rotation
            let xr = cos_t * xs + sin_t * ys;
            let yr = -sin_t * xs + cos_t * ys;
            // inverse flips
            let xf = if v.flip_h { -xr } else { xr };
            let yf = if v.flip_v { -yr } else { yr };
            let src_r = reflect(yf + ch, h as f64);
            let src_c = reflect(xf + cw, w as f64);
            let (r0, c0) = (src_r.floor() as usize, src_c.floor() as usize);
            let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
            let (fr, fc) = (src_r - r0 as f64, src_c - c0 as f64);
            let v00 = image[r0 * w + c0] as f64;
            let v01 = image[r0 * w + c1] as f64;
            let v10 = image[r1 * w + c0] as f64;
            let v11 = image[r1 * w + c1] as f64;
            let val = v00 * (1.0 - fr) * (1.0 - fc)
                + v01 * (1.0 - fr) * fc
                + v10 * fr * (1.0 - fc)
                + v11 * fr * fc;
            out[r * w + c] = val as f32;
        }
    }
    out
}

/// 5×5 truncated Gaussian blur with reflection padding.
pub fn gaussian_blur(image: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let radius = 2i64;
    let mut kernel = [0f64; 5];
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *k = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);

    // separable passes
    let mut tmp = vec![0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f64;
            for (i, &k) in kernel.iter().enumerate() {
                let cc = reflect(c as f64 + (i as i64 - radius) as f64, w as f64) as usize;
                acc += image[r * w + cc] as f64 * k;
            }
            tmp[r * w + c] = acc as f32;
        }
    }
    let mut out = vec![0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f64;
            for (i, &k) in kernel.iter().enumerate() {
                let rr = reflect(r as f64 + (i as i64 - radius) as f64, h as f64) as usize;
                acc += tmp[rr * w + c] as f64 * k;
            }
            out[r * w + c] = acc as f32;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct MemRow {
    pub realization: usize,
    pub nearest_image: usize,
    pub variant: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct MemReport {
    pub rows: Vec<MemRow>,
}

/// Match each realization to its blurred-Euclidean nearest neighbor in the
/// augmented dataset. The dataset is processed in chunks so the augmented
/// variants never need materializing at once.
pub fn memorization_check(
    realizations: &[&[f32]],
    dataset: &Dataset,
    blur_sigma: f64,
) -> Result<MemReport> {
    let (h, w) = (dataset.height(), dataset.width());
    let px = h * w;
    if realizations.iter().any(|r| r.len() != px) {
        return Err(Error::shape("realization dims differ from dataset dims"));
    }
    let vars = variants();
    let blurred_real: Vec<Vec<f32>> = realizations
        .iter()
        .map(|r| gaussian_blur(r, h, w, blur_sigma))
        .collect();
    let mut best: Vec<MemRow> = (0..realizations.len())
        .map(|i| MemRow { realization: i, nearest_image: 0, variant: 0, distance: f64::INFINITY })
        .collect();

    let chunk = 32usize;
    let mut start = 0usize;
    while start < dataset.count() {
        let end = (start + chunk).min(dataset.count());
        // blur every variant of every image in the chunk
        let variant_images: Vec<(usize, usize, Vec<f32>)> = map_indexed(
            &(start..end)
                .flat_map(|i| (0..vars.len()).map(move |v| (i, v)))
                .collect::<Vec<_>>(),
            |&(i, v)| {
                let img = apply_variant(dataset.image(i), h, w, &vars[v]);
                (i, v, gaussian_blur(&img, h, w, blur_sigma))
            },
        );
        for (i, v, blurred) in &variant_images {
            for (r, row) in best.iter_mut().enumerate() {
                let d: f64 = blurred_real[r]
                    .iter()
                    .zip(blurred)
                    .map(|(&a, &b)| ((a - b) as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d < row.distance {
                    *row = MemRow {
                        realization: r,
                        nearest_image: *i,
                        variant: *v,
                        distance: d,
                    };
                }
            }
        }
        start = end;
    }
    Ok(MemReport { rows: best })
}

fn map_indexed<I: Sync, O: Send, F>(items: &[I], f: F) -> Vec<O>
where
    F: Fn(&I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    #[allow(unreachable_code)]
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_channels, SynthParams};

    #[test]
    fn there_are_35_additional_variants() {
        assert_eq!(augmentation_count(), 35);
        assert_eq!(
            variants()[0],
            Variant { flip_h: false, flip_v: false, rot: 0, shear: 0 }
        );
    }

    #[test]
    fn identity_variant_is_identity() {
        let d = synth_channels(1, 32, 32, 1, &SynthParams::default()).unwrap();
        let v = variants()[0];
        let out = apply_variant(d.image(0), 32, 32, &v);
        assert_eq!(out, d.image(0));
    }

    #[test]
    fn copied_realization_matches_itself() {
        let d = synth_channels(4, 32, 32, 2, &SynthParams::default()).unwrap();
        let report = memorization_check(&[d.image(2)], &d, 1.0).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.nearest_image, 2);
        assert_eq!(row.variant, 0);
        assert!(row.distance < 1e-5, "{}", row.distance);
    }

    #[test]
    fn flipped_image_matches_the_flip_variant() {
        let d = synth_channels(3, 32, 32, 3, &SynthParams::default()).unwrap();
        // horizontal flip of image 1
        let (h, w) = (32usize, 32usize);
        let src = d.image(1);
        let mut flipped = vec![0f32; h * w];
        for r in 0..h {
            for c in 0..w {
                flipped[r * w + c] = src[r * w + (w - 1 - c)];
            }
        }
        let report = memorization_check(&[&flipped], &d, 1.0).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.nearest_image, 1);
        let v = variants()[row.variant];
        assert!(v.flip_h && !v.flip_v && v.rot == 0 && v.shear == 0, "{v:?}");
        assert!(row.distance < 1e-5, "{}", row.distance);
    }

    #[test]
    fn fresh_noise_is_far_from_everything() {
        let d = synth_channels(3, 32, 32, 4, &SynthParams::default()).unwrap();
        let mut s = crate::rng::stream(5, "noise");
        use rand::Rng;
        let noise: Vec<f32> =
            (0..32 * 32).map(|_| if s.random_range(0..2) == 0 { -1.0 } else { 1.0 }).collect();
        let report = memorization_check(&[&noise], &d, 1.0).unwrap();
        assert!(report.rows[0].distance > 1.0);
    }
}
