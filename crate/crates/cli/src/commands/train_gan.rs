//! `train-gan`: adversarial training of the unconditional generator.

use crate::config::FileConfig;
use geogen::data::Dataset;
use geogen::gan::{train_gan, GanConfig, GanMode};
use geogen::layers::save_network;
use geogen::{Error, Result};
use std::path::PathBuf;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Training dataset (GEOD).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the loss trace.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `wgan` (weight-clipped critic, the default) or `standard`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    n_critic: Option<usize>,
    #[arg(long)]
    clip: Option<f32>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Channels at the last hidden generator stage (64 = reference scale).
    #[arg(long)]
    width_base: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let mut cfg = FileConfig::load(args.config.as_deref())?;
    let defaults = GanConfig::default();
    let mode = match cfg.resolve(args.mode, "mode", "wgan".into())?.as_str() {
        "wgan" => GanMode::Wgan,
        "standard" => GanMode::Standard,
        other => return Err(Error::usage(format!("unknown mode `{other}`"))),
    };
    let gc = GanConfig {
        mode,
        batch_size: cfg.resolve(args.batch, "batch", defaults.batch_size)?,
        n_critic: cfg.resolve(args.n_critic, "n_critic", defaults.n_critic)?,
        clip: cfg.resolve(args.clip, "clip", defaults.clip)?,
        lr: cfg.resolve(args.lr, "lr", defaults.lr)?,
        beta1: defaults.beta1,
        max_iters: cfg.resolve(args.iters, "iters", defaults.max_iters)?,
        seed: cfg.resolve(args.seed, "seed", 0)?,
        latent_dim: cfg.resolve(args.latent_dim, "latent_dim", defaults.latent_dim)?,
        base_width: cfg.resolve(args.width_base, "width_base", defaults.base_width)?,
        checkpoint_every: cfg.resolve(args.checkpoint_every, "checkpoint_every", 1000)?,
    };
    cfg.finish()?;

    let dataset = Dataset::load(&args.data)?;
    std::fs::create_dir_all(&args.out)?;
    let (gen, disc, stats) = train_gan(&dataset, &gc, Some(&args.out))?;
    save_network(&gen, &args.out.join("gen.ckpt"))?;
    save_network(&disc, &args.out.join("disc.ckpt"))?;
    let last = stats.trace.last();
    println!(
        "trained {} iterations ({} critic updates); final d_loss {}, g_loss {}",
        stats.g_updates,
        stats.d_updates,
        last.map_or(f64::NAN, |r| r.d_loss),
        last.map_or(f64::NAN, |r| r.g_loss),
    );
    Ok(())
}
