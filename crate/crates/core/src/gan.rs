//! Adversarial training of the unconditional generator.
//!
//! The default configuration is the Wasserstein formulation with weight
//! clipping: five critic updates per generator update, clip 0.01, Adam with
//! learning rate 1e-4 and batch size 32. The standard (classifier) loss is
//! available for discriminator-score assessment.

use crate::autodiff::{ElemKind, Tape};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{
    init_parameters, pull_grads, save_network, DiscKind, DiscriminatorNet, GeneratorNet, Mode,
    Network,
};
use crate::optim::{clip_weights, Adam};
use crate::rng;
use rand::Rng;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanMode {
    Standard,
    Wgan,
}

#[derive(Debug, Clone)]
pub struct GanConfig {
    pub mode: GanMode,
    pub batch_size: usize,
    pub n_critic: usize,
    pub clip: f32,
    pub lr: f32,
    pub beta1: f32,
    pub max_iters: usize,
    pub seed: u64,
    pub latent_dim: usize,
    /// Channel count of the last hidden generator stage (64 reproduces the
    /// reference architecture at 64×64: 512 → 256 → 128 → 64 channels).
    pub base_width: usize,
    /// Write intermediate checkpoints every this many iterations (0 = none).
    pub checkpoint_every: usize,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            mode: GanMode::Wgan,
            batch_size: 32,
            n_critic: 5,
            clip: 0.01,
            lr: 1e-4,
            beta1: 0.5,
            max_iters: 20_000,
            seed: 0,
            latent_dim: 30,
            base_width: 64,
            checkpoint_every: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossRow {
    pub iter: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainStats {
    pub trace: Vec<LossRow>,
    pub d_updates: usize,
    pub g_updates: usize,
}

/// Discriminator and generator losses from per-sample scores.
///
/// Standard mode expects probabilities in `(0, 1)`:
/// `d = −[mean ln D(y) + mean ln(1−D(ŷ))]`, `g = mean ln(1−D(ŷ))`.
/// Wasserstein mode takes raw critic scores:
/// `d = −[mean D(y) − mean D(ŷ)]`, `g = −mean D(ŷ)`.
pub fn gan_losses(real_scores: &[f64], fake_scores: &[f64], mode: GanMode) -> Result<(f64, f64)> {
    if real_scores.is_empty() || fake_scores.is_empty() {
        return Err(Error::usage("gan_losses needs nonempty score batches"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    match mode {
        GanMode::Standard => {
            if let Some(&bad) = real_scores
                .iter()
                .chain(fake_scores)
                .find(|&&s| !(s > 0.0 && s < 1.0))
            {
                return Err(Error::domain(format!(
                    "standard-mode score {bad} outside (0, 1)"
                )));
            }
            let d = -(mean(&real_scores.iter().map(|&s| s.ln()).collect::<Vec<_>>())
                + mean(&fake_scores.iter().map(|&s| (1.0 - s).ln()).collect::<Vec<_>>()));
            let g = mean(&fake_scores.iter().map(|&s| (1.0 - s).ln()).collect::<Vec<_>>());
            Ok((d, g))
        }
        GanMode::Wgan => {
            let d = -(mean(real_scores) - mean(fake_scores));
            let g = -mean(fake_scores);
            Ok((d, g))
        }
    }
}

/// Map raw scores to probabilities through a sigmoid (f64).
pub fn scores_to_probs(raw: &[f32]) -> Vec<f64> {
    raw.iter()
        .map(|&s| {
            let s = s as f64;
            if s >= 0.0 {
                1.0 / (1.0 + (-s).exp())
            } else {
                let e = s.exp();
                e / (1.0 + e)
            }
        })
        .collect()
}

fn draw_latents(stream: &mut rng::Stream, batch: usize, dim: usize) -> Vec<f32> {
    (0..batch * dim).map(|_| rng::normal_f64(stream) as f32).collect()
}

/// Mean of a score node after the mode's per-sample transform, as a scalar
/// node to minimize. In standard mode the stable softplus forms of
/// `ln σ(s)` and `ln(1−σ(s))` are used.
struct TapeLosses;

impl TapeLosses {
    /// `−mean ln D` in standard mode (`softplus(−s)`), `−mean s` in wgan.
    fn neg_mean_log_real(
        tape: &mut Tape<f32>,
        scores: crate::autodiff::Id,
        mode: GanMode,
    ) -> Result<crate::autodiff::Id> {
        match mode {
            GanMode::Standard => {
                let neg = tape.scale(scores, -1.0)?;
                let sp = tape.elem(neg, ElemKind::Softplus)?;
                tape.reduce_mean_all(sp)
            }
            GanMode::Wgan => {
                let m = tape.reduce_mean_all(scores)?;
                tape.scale(m, -1.0)
            }
        }
    }

    /// `−mean ln(1−D)` in standard mode (`softplus(s)`), `mean s` in wgan.
    fn neg_mean_log_one_minus_fake(
        tape: &mut Tape<f32>,
        scores: crate::autodiff::Id,
        mode: GanMode,
    ) -> Result<crate::autodiff::Id> {
        match mode {
            GanMode::Standard => {
                let sp = tape.elem(scores, ElemKind::Softplus)?;
                tape.reduce_mean_all(sp)
            }
            GanMode::Wgan => tape.reduce_mean_all(scores),
        }
    }
}

/// Alternating adversarial training. Deterministic given `(seed, config,
/// dataset)`. When `out_dir` is set, a `loss.csv` trace is streamed row by
/// row and periodic checkpoints are written.
pub fn train_gan(
    dataset: &Dataset,
    cfg: &GanConfig,
    out_dir: Option<&Path>,
) -> Result<(GeneratorNet<f32>, DiscriminatorNet<f32>, TrainStats)> {
    if cfg.batch_size < 2 {
        return Err(Error::usage("batch size must be at least 2"));
    }
    if cfg.n_critic < 1 {
        return Err(Error::usage("n_critic must be at least 1"));
    }
    if cfg.mode == GanMode::Wgan && !(cfg.clip > 0.0) {
        return Err(Error::usage("wgan mode requires a positive clip"));
    }
    let size = dataset.height();
    if dataset.width() != size {
        return Err(Error::usage("training images must be square"));
    }

    let mut gen = GeneratorNet::<f32>::new(cfg.latent_dim, size, cfg.base_width)?;
    let kind = match cfg.mode {
        GanMode::Wgan => DiscKind::Critic,
        GanMode::Standard => DiscKind::Classifier,
    };
    let mut disc = DiscriminatorNet::<f32>::new(size, cfg.base_width, kind)?;
    init_parameters(&mut gen, rng::derive(cfg.seed, "init.g"));
    init_parameters(&mut disc, rng::derive(cfg.seed, "init.d"));

    let mut adam_g = Adam::for_params(&gen.params(), cfg.lr, cfg.beta1);
    let mut adam_d = Adam::for_params(&disc.params(), cfg.lr, cfg.beta1);
    let mut data_stream = rng::stream(cfg.seed, "data");
    let mut latent_stream = rng::stream(cfg.seed, "latent");

    let mut csv = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("loss.csv"))?);
            writeln!(f, "iter,d_loss,g_loss")?;
            Some(f)
        }
        None => None,
    };

    let mut stats = TrainStats::default();
    let n = dataset.count();

    for iter in 0..cfg.max_iters {
        let mut d_loss_val = 0.0f64;
        for _ in 0..cfg.n_critic {
            let idx: Vec<usize> = (0..cfg.batch_size)
                .map(|_| data_stream.random_range(0..n))
                .collect();
            let real = dataset.gather(&idx);
            let z = draw_latents(&mut latent_stream, cfg.batch_size, cfg.latent_dim);

            let mut tape = Tape::new();
            let zid = tape.leaf_const(vec![cfg.batch_size, cfg.latent_dim], z)?;
            let (fake, _) = gen.forward(&mut tape, zid, Mode::Train, false)?;
            let rid = tape.leaf_const(vec![cfg.batch_size, 1, size, size], real)?;
            let (real_scores, ids_r) = disc.forward(&mut tape, rid, Mode::Train, true)?;
            let (fake_scores, ids_f) = disc.forward(&mut tape, fake, Mode::Train, true)?;

            let lr_term = TapeLosses::neg_mean_log_real(&mut tape, real_scores, cfg.mode)?;
            let lf_term =
                TapeLosses::neg_mean_log_one_minus_fake(&mut tape, fake_scores, cfg.mode)?;
            let d_loss = match cfg.mode {
                // −[mean s_r − mean s_f] = (−mean s_r) + mean s_f
                GanMode::Wgan => tape.add(lr_term, lf_term)?,
                GanMode::Standard => tape.add(lr_term, lf_term)?,
            };
            d_loss_val = tape.scalar_value(d_loss)?;
            if !d_loss_val.is_finite() {
                return Err(Error::Diverged {
                    iter,
                    msg: format!("discriminator loss {d_loss_val}"),
                });
            }
            tape.backward(d_loss)?;
            disc.zero_grads();
            pull_grads(&mut disc, &tape, &ids_r)?;
            pull_grads(&mut disc, &tape, &ids_f)?;
            adam_d.step(&mut disc.params_mut())?;
            if cfg.mode == GanMode::Wgan {
                clip_weights(&mut disc.params_mut(), cfg.clip)?;
            }
            stats.d_updates += 1;
        }

        // Generator step: discriminator frozen, gradient flows through it.
        let z = draw_latents(&mut latent_stream, cfg.batch_size, cfg.latent_dim);
        let mut tape = Tape::new();
        let zid = tape.leaf_const(vec![cfg.batch_size, cfg.latent_dim], z)?;
        let (fake, ids_g) = gen.forward(&mut tape, zid, Mode::Train, true)?;
        let (fake_scores, _) = disc.forward(&mut tape, fake, Mode::Train, false)?;
        // Generator minimizes mean ln(1−D(ŷ)) (wgan: −mean s).
        let g_obj = TapeLosses::neg_mean_log_one_minus_fake(&mut tape, fake_scores, cfg.mode)?;
        let g_loss = tape.scale(g_obj, -1.0)?;
        let g_loss_val = tape.scalar_value(g_loss)?;
        if !g_loss_val.is_finite() {
            return Err(Error::Diverged { iter, msg: format!("generator loss {g_loss_val}") });
        }
        tape.backward(g_loss)?;
        gen.zero_grads();
        pull_grads(&mut gen, &tape, &ids_g)?;
        adam_g.step(&mut gen.params_mut())?;
        stats.g_updates += 1;

        stats.trace.push(LossRow { iter, d_loss: d_loss_val, g_loss: g_loss_val });
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{iter},{d_loss_val},{g_loss_val}")?;
        }
        if let (Some(dir), true) =
            (out_dir, cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
        {
            save_network(&gen, &dir.join(format!("gen_{:07}.ckpt", iter + 1)))?;
            save_network(&disc, &dir.join(format!("disc_{:07}.ckpt", iter + 1)))?;
        }
    }
    if let Some(f) = csv.as_mut() {
        f.flush()?;
    }
    Ok((gen, disc, stats))
}

/// Draw `count` images from the generator, `z ~ N(0, I)`, in eval mode.
/// Returns a flat `[count, 1, S, S]` buffer.
pub fn sample_unconditional(
    gen: &mut GeneratorNet<f32>,
    count: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    let mut stream = rng::stream(seed, "latent.sample");
    let size = gen.image_size();
    let mut out = Vec::with_capacity(count * size * size);
    let mut remaining = count;
    while remaining > 0 {
        let batch = remaining.min(64);
        let z = draw_latents(&mut stream, batch, gen.latent_dim());
        let mut tape = Tape::new();
        let zid = tape.leaf_const(vec![batch, gen.latent_dim()], z)?;
        let (img, _) = gen.forward(&mut tape, zid, Mode::Eval, false)?;
        out.extend_from_slice(tape.value(img));
        remaining -= batch;
    }
    Ok(out)
}

/// Raw discriminator scores for a flat `[N, 1, S, S]` image buffer.
pub fn score_images(disc: &mut DiscriminatorNet<f32>, images: &[f32]) -> Result<Vec<f32>> {
    let size = disc.image_size();
    let px = size * size;
    if !images.len().is_multiple_of(px) {
        return Err(Error::shape(format!(
            "image buffer length {} is not a multiple of {px}",
            images.len()
        )));
    }
    let n = images.len() / px;
    let mut out = Vec::with_capacity(n);
    let mut at = 0usize;
    while at < n {
        let batch = (n - at).min(64);
        let mut tape = Tape::new();
        let xid =
            tape.leaf_const(vec![batch, 1, size, size], images[at * px..(at + batch) * px].to_vec())?;
        let (scores, _) = disc.forward(&mut tape, xid, Mode::Eval, false)?;
        out.extend_from_slice(tape.value(scores));
        at += batch;
    }
    Ok(out)
}

/// Latent draw used by the samplers; exposed for the conditional path.
pub(crate) fn latents(stream: &mut rng::Stream, batch: usize, dim: usize) -> Vec<f32> {
    draw_latents(stream, batch, dim)
}
