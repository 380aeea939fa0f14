//! Datasets, synthetic training images, and file formats.
//!
//! The binary dataset format (`GEOD`) is little-endian: magic `GEOD`,
//! `u32` version (= 1), `u32` image count, `u32` height, `u32` width, then
//! `N·H·W` raw 32-bit floats, row-major, image-major. All pixel values live
//! in `[-1, 1]`; +1 is channel material, -1 background.

mod mixture;
mod synth;

pub use mixture::{
    mixture_log_density, mixture_plot_range, normal_cdf, sample_histogram_masses, GaussianMixture,
};
pub use synth::{synth_channels, SynthParams};

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"GEOD";
const VERSION: u32 = 1;
/// Header bytes before the pixel payload.
pub const GEOD_HEADER_LEN: u64 = 20;

/// A bag of equally sized grayscale images with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    h: usize,
    w: usize,
    images: Vec<f32>,
}

impl Dataset {
    pub fn new(h: usize, w: usize, images: Vec<f32>) -> Result<Self> {
        if h == 0 || w == 0 || images.is_empty() || !images.len().is_multiple_of(h * w) {
            return Err(Error::shape(format!(
                "dataset of {} values is not a whole number of {h}x{w} images",
                images.len()
            )));
        }
        if let Some(bad) = images.iter().find(|v| !(**v >= -1.0 && **v <= 1.0)) {
            return Err(Error::domain(format!("pixel value {bad} outside [-1, 1]")));
        }
        Ok(Dataset { h, w, images })
    }

    pub fn count(&self) -> usize {
        self.images.len() / (self.h * self.w)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let px = self.h * self.w;
        &self.images[i * px..(i + 1) * px]
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    /// Batch of images by index, flattened `[B, 1, H, W]`-style.
    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let px = self.h * self.w;
        let mut out = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            out.extend_from_slice(self.image(i));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.count() as u32).to_le_bytes())?;
        w.write_all(&(self.h as u32).to_le_bytes())?;
        w.write_all(&(self.w as u32).to_le_bytes())?;
        for &v in &self.images {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut head = [0u8; GEOD_HEADER_LEN as usize];
        r.read_exact(&mut head).map_err(|_| Error::Format {
            offset: 0,
            msg: "truncated header".into(),
        })?;
        if &head[0..4] != MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: format!("bad magic {:?}, expected GEOD", &head[0..4]),
            });
        }
        let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
        }
        let (n, h, w) = (word(8) as usize, word(12) as usize, word(16) as usize);
        if n == 0 || h == 0 || w == 0 || n.saturating_mul(h).saturating_mul(w) > (1 << 30) {
            return Err(Error::Format {
                offset: 8,
                msg: format!("implausible dimensions N={n} H={h} W={w}"),
            });
        }
        let len = n * h * w;
        let mut images = vec![0f32; len];
        for (i, v) in images.iter_mut().enumerate() {
            let mut b = [0u8; 4];
            let offset = GEOD_HEADER_LEN + 4 * i as u64;
            r.read_exact(&mut b).map_err(|_| Error::Format {
                offset,
                msg: "truncated pixel data".into(),
            })?;
            let x = f32::from_le_bytes(b);
            if !(-1.0..=1.0).contains(&x) {
                return Err(Error::Format {
                    offset,
                    msg: format!("pixel value {x} outside [-1, 1]"),
                });
            }
            *v = x;
        }
        Dataset::new(h, w, images)
    }
}

/// Draw `count` patches of `ph × pw` with uniformly random top-left corners
/// from a reference image.
pub fn sample_patches(
    reference: &[f32],
    (h, w): (usize, usize),
    count: usize,
    (ph, pw): (usize, usize),
    seed: u64,
) -> Result<Dataset> {
    if reference.len() != h * w {
        return Err(Error::shape(format!("reference length {} vs {h}x{w}", reference.len())));
    }
    if ph > h || pw > w {
        return Err(Error::shape(format!("patch {ph}x{pw} exceeds reference {h}x{w}")));
    }
    if count == 0 {
        return Err(Error::usage("patch count must be positive"));
    }
    let mut stream = rng::stream(seed, "patches");
    let mut images = Vec::with_capacity(count * ph * pw);
    for _ in 0..count {
        let r0 = stream.random_range(0..=h - ph);
        let c0 = stream.random_range(0..=w - pw);
        for r in 0..ph {
            let base = (r0 + r) * w + c0;
            images.extend_from_slice(&reference[base..base + pw]);
        }
    }
    Dataset::new(ph, pw, images)
}

/// Write a `[-1, 1]` image as binary PGM (`P5`, maxval 255), mapping
/// `v ↦ round((v+1)·127.5)`.
pub fn write_pgm(image: &[f32], (h, w): (usize, usize), path: &Path) -> Result<()> {
    if image.len() != h * w {
        return Err(Error::shape(format!("image length {} vs {h}x{w}", image.len())));
    }
    if let Some(bad) = image.iter().find(|v| !(**v >= -1.0 && **v <= 1.0)) {
        return Err(Error::usage(format!("pixel value {bad} outside [-1, 1]")));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image.iter().map(|&v| ((v + 1.0) * 127.5).round() as u8).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}
