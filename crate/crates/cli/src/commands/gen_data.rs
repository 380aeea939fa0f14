//! `gen-data`: synthesize a channelized training set plus a reference image.

use crate::config::FileConfig;
use geogen::data::{synth_channels, write_pgm, SynthParams};
use geogen::{rng, Result};
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Number of training images.
    #[arg(long)]
    n: Option<usize>,
    /// Image side length (square grids).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset path (GEOD format).
    #[arg(long)]
    out: PathBuf,
    /// Side length of the separately written reference image.
    #[arg(long)]
    ref_size: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// `train.geod` → `train_ref.geod` etc.
pub fn sibling(path: &std::path::Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Create the directory an output file will land in.
pub fn ensure_parent(path: &std::path::Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let n = cfg.resolve(args.n, "n", 1000)?;
    let size = cfg.resolve(args.size, "size", 64)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let ref_size = cfg.resolve(args.ref_size, "ref_size", 250)?;
    cfg.finish()?;

    let params = SynthParams::default();
    let data = synth_channels(n, size, size, seed, &params)?;
    ensure_parent(&args.out)?;
    data.save(&args.out)?;

    let reference = synth_channels(1, ref_size, ref_size, rng::derive(seed, "reference"), &params)?;
    reference.save(&sibling(&args.out, "_ref.geod"))?;
    write_pgm(reference.image(0), (ref_size, ref_size), &sibling(&args.out, "_ref.pgm"))?;

    let frac = data.images().iter().filter(|&&v| v > 0.0).count() as f64
        / data.images().len() as f64;
    println!(
        "wrote {} images of {size}x{size} to {} (channel fraction {frac:.3}), reference {ref_size}x{ref_size}",
        data.count(),
        args.out.display()
    );
    Ok(())
}
