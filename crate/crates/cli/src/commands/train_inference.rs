//! `train-inference`: fit the conditional sampler for one observation set.

use crate::config::FileConfig;
use geogen::conditioner::{
    train_sampler, write_sampler_trace, Observations, PosteriorSpec, PosteriorTarget,
    SamplerConfig,
};
use geogen::layers::{generator_from_checkpoint, save_network};
use geogen::Result;
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Generator checkpoint.
    #[arg(long, visible_alias = "g")]
    gen: PathBuf,
    /// Observation file (`i j val` per line, val in {0, 1}).
    #[arg(long)]
    obs: PathBuf,
    /// Output directory for the inference checkpoint and trace.
    #[arg(long)]
    out: PathBuf,
    /// Prior weight λ (the squared measurement noise).
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Nearest-neighbor order for the entropy estimate (default ⌊√batch⌋).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Intermediate hidden layers of the inference network.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let lambda = cfg.resolve(args.lambda, "lambda", 0.1)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;
    let mut gen = generator_from_checkpoint(&args.gen)?;
    let size = gen.image_size();

    let sc = {
        let paper = SamplerConfig::paper(gen.latent_dim(), seed);
        SamplerConfig {
            batch: cfg.resolve(args.batch, "batch", paper.batch)?,
            k: cfg.resolve_opt(args.k, "k")?,
            lr: cfg.resolve(args.lr, "lr", paper.lr)?,
            max_iters: cfg.resolve(args.iters, "iters", paper.max_iters)?,
            hidden: cfg.resolve(args.hidden, "hidden", paper.hidden)?,
            intermediate: cfg.resolve(args.depth, "depth", paper.intermediate)?,
            ..paper
        }
    };
    cfg.finish()?;

    let obs = Observations::read(&args.obs, size, size)?;
    println!("parsed {} observations on the {size}x{size} grid", obs.len());
    let spec = PosteriorSpec::new(obs, lambda)?;
    let mut target = PosteriorTarget { gen: &mut gen, spec };
    let (inet, trace) = train_sampler(&mut target, &sc)?;

    std::fs::create_dir_all(&args.out)?;
    save_network(&inet, &args.out.join("inference.ckpt"))?;
    write_sampler_trace(&args.out.join("trace.csv"), &trace)?;
    println!(
        "trained {} iterations; final objective {}",
        trace.len(),
        trace.last().map_or(f64::NAN, |r| r.objective)
    );
    Ok(())
}
