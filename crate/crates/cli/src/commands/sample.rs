//! `sample`: draw realizations, unconditional or through the inference net.

use crate::config::FileConfig;
use geogen::conditioner::sample_conditional;
use geogen::data::{write_pgm, Dataset};
use geogen::gan::sample_unconditional;
use geogen::layers::{generator_from_checkpoint, inference_from_checkpoint};
use geogen::{Error, Result};
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Generator checkpoint.
    #[arg(long = "g", visible_alias = "gen")]
    gen: PathBuf,
    /// Inference-network checkpoint; when present, sampling runs G∘I.
    #[arg(long = "i", visible_alias = "inference")]
    inference: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for PGM images.
    #[arg(long)]
    out: PathBuf,
    /// Also write the batch as a GEOD dataset at this path.
    #[arg(long)]
    geod: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let count = cfg.resolve(args.count, "count", 30)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    cfg.finish()?;

    let mut gen = generator_from_checkpoint(&args.gen)?;
    let size = gen.image_size();
    let images = match &args.inference {
        None => sample_unconditional(&mut gen, count, seed)?,
        Some(path) => {
            let inet = inference_from_checkpoint(path)?;
            if inet.output_dim() != gen.latent_dim() {
                return Err(Error::usage(format!(
                    "inference network outputs {} but the generator expects {}",
                    inet.output_dim(),
                    gen.latent_dim()
                )));
            }
            sample_conditional(&mut gen, &inet, count, seed)?
        }
    };

    std::fs::create_dir_all(&args.out)?;
    let px = size * size;
    for i in 0..count {
        let img = &images[i * px..(i + 1) * px];
        write_pgm(img, (size, size), &args.out.join(format!("sample_{i:04}.pgm")))?;
    }
    if let Some(path) = &args.geod {
        super::gen_data::ensure_parent(path)?;
        Dataset::new(size, size, images)?.save(path)?;
    }
    println!(
        "wrote {count} {size}x{size} realizations to {} ({})",
        args.out.display(),
        if args.inference.is_some() { "conditional" } else { "unconditional" }
    );
    Ok(())
}
