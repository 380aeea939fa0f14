//! Bayesian conditioning of a trained generator.
//!
//! The negative log-posterior of a latent vector given point observations is
//! `L(z) = ‖G(z)_obs − d_obs‖² + λ‖z‖²`. Conditional sampling trains an
//! inference network to minimize the KL divergence from its induced
//! distribution to that posterior: the expected loss is estimated over a
//! batch and the entropy term with the Kozachenko-Leonenko estimator, whose
//! neighbor assignment is frozen per batch while gradients flow through both
//! endpoints of each k-th neighbor distance. Optimization-based conditioning
//! (repeated local minimization from random starts) is provided as the
//! non-parametric alternative, with either the Gaussian-prior loss or the
//! discriminator-based perceptual loss.

mod entropy;

pub use entropy::{
    digamma, entropy_constant, entropy_estimate, kth_nn_distances, kth_nn_with_indices,
    kth_nn_with_indices_seq, ln_unit_ball_volume, EntropyEstimate,
};

use crate::autodiff::{ElemKind, Id, ReduceKind, Scalar, Tape, Tensor};
use crate::data::{mixture_log_density, GaussianMixture};
use crate::error::{Error, Result};
use crate::layers::{init_parameters, pull_grads, DiscKind, DiscriminatorNet, GeneratorNet, InferenceNet, Mode, Network};
use crate::optim::Adam;
use crate::rng;
use std::io::Write;
use std::path::Path;

// ── Observations ─────────────────────────────────────────────────────────

/// Hard data: facies values at grid cells. Values are stored in the
/// generator's output coding (+1 channel, -1 background).
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    points: Vec<(usize, usize, f32)>,
    h: usize,
    w: usize,
}

impl Observations {
    pub fn new(points: Vec<(usize, usize, f32)>, h: usize, w: usize) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(r, c, v) in &points {
            if r >= h || c >= w {
                return Err(Error::usage(format!(
                    "observation ({r}, {c}) outside {h}x{w} grid"
                )));
            }
            if v != 1.0 && v != -1.0 {
                return Err(Error::usage(format!("observation value {v} not in {{-1, +1}}")));
            }
            if !seen.insert((r, c)) {
                return Err(Error::usage(format!("duplicate observation at ({r}, {c})")));
            }
        }
        Ok(Observations { points, h, w })
    }

    /// From facies codes: 1 is channel (+1), 0 is background (-1).
    pub fn from_facies(rows: &[(usize, usize, u8)], h: usize, w: usize) -> Result<Self> {
        let points = rows
            .iter()
            .map(|&(r, c, v)| match v {
                0 => Ok((r, c, -1.0)),
                1 => Ok((r, c, 1.0)),
                other => Err(Error::usage(format!("facies code {other} not in {{0, 1}}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Observations::new(points, h, w)
    }

    /// Parse the observation text format: one `i j val` triple per line with
    /// `val` in {0, 1}; `#` starts a comment. Errors name the line.
    pub fn read(path: &Path, h: usize, w: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, h, w)
    }

    pub fn parse(text: &str, h: usize, w: usize) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| Error::Config { line: lineno + 1, msg };
            if fields.len() != 3 {
                return Err(err(format!("expected `i j val`, got `{line}`")));
            }
            let parse = |s: &str, what: &str| -> Result<usize> {
                s.parse::<usize>()
                    .map_err(|_| err(format!("invalid {what} `{s}`")))
            };
            let (r, c) = (parse(fields[0], "row")?, parse(fields[1], "column")?);
            let v = parse(fields[2], "value")?;
            if v > 1 {
                return Err(err(format!("facies value {v} not in {{0, 1}}")));
            }
            if r >= h || c >= w {
                return Err(err(format!("observation ({r}, {c}) outside {h}x{w} grid")));
            }
            rows.push((r, c, v as u8));
        }
        Self::from_facies(&rows, h, w)
    }

    /// Serialize back to the text format (facies codes 0/1).
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for &(r, c, v) in &self.points {
            let code = if v > 0.0 { 1 } else { 0 };
            out.push_str(&format!("{r} {c} {code}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// The 16-point four-by-four observation layout of conditioning
    /// configuration "Example A" on the 64×64 grid.
    pub fn example_a() -> Self {
        let rows: &[(usize, usize, u8)] = &[
            (12, 12, 0), (12, 25, 0), (12, 38, 1), (12, 51, 1),
            (25, 12, 1), (25, 25, 0), (25, 38, 0), (25, 51, 0),
            (38, 12, 0), (38, 25, 1), (38, 38, 1), (38, 51, 1),
            (51, 12, 0), (51, 25, 0), (51, 38, 0), (51, 51, 1),
        ];
        Observations::from_facies(rows, 64, 64).expect("example A is valid")
    }

    /// Rescale observation coordinates onto another grid (nearest cell).
    pub fn scaled_to(&self, h: usize, w: usize) -> Result<Self> {
        let points = self
            .points
            .iter()
            .map(|&(r, c, v)| {
                let nr = ((r as f64 + 0.5) * h as f64 / self.h as f64).floor() as usize;
                let nc = ((c as f64 + 0.5) * w as f64 / self.w as f64).floor() as usize;
                (nr.min(h - 1), nc.min(w - 1), v)
            })
            .collect();
        Observations::new(points, h, w)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn points(&self) -> &[(usize, usize, f32)] {
        &self.points
    }

    pub fn flat_indices(&self) -> Vec<usize> {
        self.points.iter().map(|&(r, c, _)| r * self.w + c).collect()
    }

    pub fn values(&self) -> Vec<f32> {
        self.points.iter().map(|&(_, _, v)| v).collect()
    }
}

// ── Posterior ────────────────────────────────────────────────────────────

/// The conditioning target: observations plus the prior weight λ (= σ², the
/// squared measurement noise). λ = 0.1 throughout the reference test cases.
#[derive(Debug, Clone)]
pub struct PosteriorSpec {
    pub obs: Observations,
    pub lambda: f64,
}

impl PosteriorSpec {
    pub fn new(obs: Observations, lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return Err(Error::usage(format!("lambda must be nonnegative, got {lambda}")));
        }
        Ok(PosteriorSpec { obs, lambda })
    }
}

/// Per-sample negative log-posterior `L(z) = Σ_obs (G(z)[r,c] − v)² + λ‖z‖²`
/// for a latent batch `[B, n_z]`, differentiable through the generator.
pub fn neg_log_posterior<T: Scalar>(
    tape: &mut Tape<T>,
    z: Id,
    gen: &mut GeneratorNet<T>,
    spec: &PosteriorSpec,
) -> Result<Id> {
    let size = gen.image_size();
    if spec.obs.grid() != (size, size) && !spec.obs.is_empty() {
        let (h, w) = spec.obs.grid();
        return Err(Error::usage(format!(
            "observations on a {h}x{w} grid, generator outputs {size}x{size}"
        )));
    }
    let batch = tape.dims(z)[0];
    let prior = {
        let sq = tape.elem(z, ElemKind::Square)?;
        let sum = tape.reduce(sq, ReduceKind::Sum, Some(1))?;
        tape.scale(sum, T::from_f64_c(spec.lambda))?
    };
    if spec.obs.is_empty() {
        return Ok(prior);
    }
    let (img, _) = gen.forward(tape, z, Mode::Eval, false)?;
    let flat = tape.reshape(img, vec![batch, size * size])?;
    let picked = tape.gather_cols(flat, spec.obs.flat_indices())?;
    let k = spec.obs.len();
    let target: Vec<T> = (0..batch)
        .flat_map(|_| spec.obs.values().into_iter().map(T::from_f64_c_f32))
        .collect();
    let tid = tape.leaf_const(vec![batch, k], target)?;
    let diff = tape.sub(picked, tid)?;
    let sq = tape.elem(diff, ElemKind::Square)?;
    let fit = tape.reduce(sq, ReduceKind::Sum, Some(1))?;
    tape.add(fit, prior)
}

trait FromF32 {
    fn from_f64_c_f32(v: f32) -> Self;
}

impl<T: Scalar> FromF32 for T {
    fn from_f64_c_f32(v: f32) -> Self {
        T::from_f64_c(v as f64)
    }
}

// ── Targets for the neural sampler ───────────────────────────────────────

/// A differentiable negative log-density over latent batches; the sampler
/// trainer is generic in this, serving both image posteriors and the toy
/// Gaussian mixtures.
pub trait TargetDensity<T: Scalar = f32> {
    fn dim(&self) -> usize;
    /// Per-sample negative log-density `[B]` for latents `[B, dim]`.
    fn neg_log_density(&mut self, tape: &mut Tape<T>, z: Id) -> Result<Id>;
}

pub struct PosteriorTarget<'g, T: Scalar = f32> {
    pub gen: &'g mut GeneratorNet<T>,
    pub spec: PosteriorSpec,
}

impl<T: Scalar> TargetDensity<T> for PosteriorTarget<'_, T> {
    fn dim(&self) -> usize {
        self.gen.latent_dim()
    }

    fn neg_log_density(&mut self, tape: &mut Tape<T>, z: Id) -> Result<Id> {
        neg_log_posterior(tape, z, self.gen, &self.spec)
    }
}

pub struct MixtureTarget<'m> {
    pub gm: &'m GaussianMixture,
}

impl<T: Scalar> TargetDensity<T> for MixtureTarget<'_> {
    fn dim(&self) -> usize {
        self.gm.dim()
    }

    fn neg_log_density(&mut self, tape: &mut Tape<T>, z: Id) -> Result<Id> {
        let lp = mixture_log_density(tape, z, self.gm)?;
        tape.scale(lp, T::from_f64_c(-1.0))
    }
}

// ── KL objective ─────────────────────────────────────────────────────────

/// Nodes of one KL-objective evaluation.
pub struct KlGraph {
    pub objective: Id,
    pub mean_loss: Id,
    /// Full entropy estimate (constant included); only `Σ ln ρᵢ` carries
    /// gradient.
    pub entropy: Id,
    pub z: Id,
    pub inet_ids: Vec<Id>,
}

/// Build `mean L(I(w)) − Ĥ({I(wᵢ)})` with the k-th-neighbor assignment
/// frozen at the forward values.
pub fn kl_objective<T: Scalar>(
    tape: &mut Tape<T>,
    w: Id,
    inet: &InferenceNet<T>,
    target: &mut dyn TargetDensity<T>,
    k: usize,
    track: bool,
) -> Result<KlGraph> {
    let dims = tape.dims(w).to_vec();
    let m = dims[0];
    if m < 2 {
        return Err(Error::usage("KL objective needs a batch of at least 2"));
    }
    let (z, inet_ids) = inet.forward(tape, w, track)?;
    let d = tape.dims(z)[1];
    let losses = target.neg_log_density(tape, z)?;
    let mean_loss = tape.reduce_mean_all(losses)?;

    let (_, neighbors) = kth_nn_with_indices(tape.value(z), m, d, k)?;
    let logd = tape.log_kth_dist(z, neighbors)?;
    let sum_logd = tape.reduce_sum_all(logd)?;
    let scaled = tape.scale(sum_logd, T::from_f64_c(d as f64 / m as f64))?;
    let entropy = tape.add_scalar(scaled, T::from_f64_c(entropy_constant(m, k, d)))?;

    let objective = tape.sub(mean_loss, entropy)?;
    Ok(KlGraph { objective, mean_loss, entropy, z, inet_ids })
}

// ── Sampler training (the KL minimization loop) ──────────────────────────

#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub batch: usize,
    /// Nearest-neighbor order; defaults to ⌊√batch⌋.
    pub k: Option<usize>,
    pub lr: f32,
    pub beta1: f32,
    pub max_iters: usize,
    pub seed: u64,
    /// Source dimension n_w (the source law is standard normal).
    pub n_w: usize,
    pub hidden: usize,
    pub intermediate: usize,
    /// Drop the entropy term (MAP-collapse ablation).
    pub use_entropy: bool,
    /// Early stop when the mean objective over the last window changes by
    /// less than this relative amount against the previous window.
    pub early_stop_window: usize,
    pub early_stop_rel: f64,
}

impl SamplerConfig {
    /// Reference settings: batch 64, Adam lr 1e-4, k = ⌊√64⌋ = 8, up to
    /// 10000 iterations, 512-wide five-deep inference network.
    pub fn paper(n_w: usize, seed: u64) -> Self {
        SamplerConfig {
            batch: 64,
            k: None,
            lr: 1e-4,
            beta1: 0.9,
            max_iters: 10_000,
            seed,
            n_w,
            hidden: 512,
            intermediate: 5,
            use_entropy: true,
            early_stop_window: 500,
            early_stop_rel: 1e-3,
        }
    }

    pub fn effective_k(&self) -> usize {
        self.k.unwrap_or_else(|| (self.batch as f64).sqrt().floor() as usize)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerTraceRow {
    pub iter: usize,
    pub objective: f64,
    pub mean_loss: f64,
    pub entropy: f64,
}

/// Write a sampler trace as `iter,objective,mean_loss,entropy` CSV.
pub fn write_sampler_trace(path: &Path, rows: &[SamplerTraceRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "iter,objective,mean_loss,entropy")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.iter, r.objective, r.mean_loss, r.entropy)?;
    }
    f.flush()?;
    Ok(())
}

/// Train an inference network to sample the target density: per iteration a
/// source batch `w ~ N(0, I)` is mapped through the network, the mean target
/// loss and the entropy estimate form the objective, and Adam updates the
/// weights. Deterministic given the seed; aborts with a diagnostic when the
/// objective turns non-finite.
pub fn train_sampler(
    target: &mut dyn TargetDensity<f32>,
    cfg: &SamplerConfig,
) -> Result<(InferenceNet<f32>, Vec<SamplerTraceRow>)> {
    let k = cfg.effective_k();
    if cfg.batch < 2 || k == 0 || k >= cfg.batch {
        return Err(Error::usage(format!(
            "need 1 <= k < batch, got k = {k}, batch = {}",
            cfg.batch
        )));
    }
    let mut inet = InferenceNet::<f32>::new(cfg.n_w, target.dim(), cfg.hidden, cfg.intermediate);
    init_parameters(&mut inet, rng::derive(cfg.seed, "init.i"));
    let mut trace = Vec::with_capacity(cfg.max_iters);
    train_sampler_net(target, cfg, &mut inet, &mut trace)?;
    Ok((inet, trace))
}

/// Inner loop of [`train_sampler`] over a caller-initialized network.
pub fn train_sampler_net(
    target: &mut dyn TargetDensity<f32>,
    cfg: &SamplerConfig,
    inet: &mut InferenceNet<f32>,
    trace: &mut Vec<SamplerTraceRow>,
) -> Result<()> {
    let k = cfg.effective_k();
    let mut adam = Adam::for_params(&inet.params(), cfg.lr, cfg.beta1);
    let mut w_stream = rng::stream(cfg.seed, "w");

    for iter in 0..cfg.max_iters {
        let w = crate::gan::latents(&mut w_stream, cfg.batch, cfg.n_w);
        let mut tape = Tape::new();
        let wid = tape.leaf_const(vec![cfg.batch, cfg.n_w], w)?;
        let graph = kl_objective(&mut tape, wid, inet, target, k, true)?;
        let loss_id = if cfg.use_entropy { graph.objective } else { graph.mean_loss };
        let objective = tape.scalar_value(loss_id)?;
        let mean_loss = tape.scalar_value(graph.mean_loss)?;
        let entropy = tape.scalar_value(graph.entropy)?;
        if !objective.is_finite() {
            return Err(Error::Diverged { iter, msg: format!("objective {objective}") });
        }
        tape.backward(loss_id)?;
        inet.zero_grads();
        pull_grads(inet, &tape, &graph.inet_ids)?;
        adam.step(&mut inet.params_mut())?;
        trace.push(SamplerTraceRow { iter, objective, mean_loss, entropy });

        let win = cfg.early_stop_window;
        if win > 0 && trace.len() >= 2 * win && trace.len().is_multiple_of(win) {
            let mean = |rows: &[SamplerTraceRow]| {
                rows.iter().map(|r| r.objective).sum::<f64>() / rows.len() as f64
            };
            let last = mean(&trace[trace.len() - win..]);
            let prev = mean(&trace[trace.len() - 2 * win..trace.len() - win]);
            if (last - prev).abs() / (prev.abs() + 1e-12) < cfg.early_stop_rel {
                break;
            }
        }
    }
    Ok(())
}

/// Sample the composed conditional parametrization `G(I(w))`, `w ~ N(0, I)`.
/// Returns a flat `[count, 1, S, S]` buffer.
pub fn sample_conditional(
    gen: &mut GeneratorNet<f32>,
    inet: &InferenceNet<f32>,
    count: usize,
    seed: u64,
) -> Result<Vec<f32>> {
    let size = gen.image_size();
    let mut stream = rng::stream(seed, "w.sample");
    let mut out = Vec::with_capacity(count * size * size);
    let mut remaining = count;
    while remaining > 0 {
        let batch = remaining.min(64);
        let w = crate::gan::latents(&mut stream, batch, inet.input_dim());
        let mut tape = Tape::new();
        let wid = tape.leaf_const(vec![batch, inet.input_dim()], w)?;
        let (z, _) = inet.forward(&mut tape, wid, false)?;
        let (img, _) = gen.forward(&mut tape, z, Mode::Eval, false)?;
        out.extend_from_slice(tape.value(img));
        remaining -= batch;
    }
    Ok(out)
}

/// Map a source batch through the inference network only (for diagnostics).
pub fn sample_latents(inet: &InferenceNet<f32>, count: usize, seed: u64) -> Result<Vec<f32>> {
    let mut stream = rng::stream(seed, "w.sample");
    let mut out = Vec::with_capacity(count * inet.output_dim());
    let mut remaining = count;
    while remaining > 0 {
        let batch = remaining.min(256);
        let w = crate::gan::latents(&mut stream, batch, inet.input_dim());
        let mut tape = Tape::new();
        let wid = tape.leaf_const(vec![batch, inet.input_dim()], w)?;
        let (z, _) = inet.forward(&mut tape, wid, false)?;
        out.extend_from_slice(tape.value(z));
        remaining -= batch;
    }
    Ok(out)
}

// ── Optimization-based conditioning ──────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondLoss {
    /// `‖G(z)_obs − d_obs‖² + λ‖z‖²`.
    GaussianPrior,
    /// `‖G(z)_obs − d_obs‖² + λ·ln(1 − D(G(z)))`; requires a classifier
    /// discriminator (sigmoid-squashed scores).
    Perceptual,
}

#[derive(Debug, Clone)]
pub struct Minimizer {
    pub z: Vec<f32>,
    pub loss: f64,
    pub initial_loss: f64,
}

/// Repeated local minimization of the conditioning loss from standard-normal
/// restarts, Adam as the local optimizer, tracking the best iterate per
/// restart.
pub fn optimize_conditional(
    gen: &mut GeneratorNet<f32>,
    mut disc: Option<&mut DiscriminatorNet<f32>>,
    spec: &PosteriorSpec,
    kind: CondLoss,
    n_restarts: usize,
    inner_iters: usize,
    lr: f32,
    seed: u64,
) -> Result<Vec<Minimizer>> {
    if kind == CondLoss::Perceptual {
        match disc.as_deref() {
            None => return Err(Error::usage("perceptual loss requires a discriminator")),
            Some(d) if d.kind() != DiscKind::Classifier => {
                return Err(Error::usage(
                    "perceptual loss requires sigmoid-squashed scores; critic mode is unbounded",
                ))
            }
            _ => {}
        }
    }
    let n_z = gen.latent_dim();
    let mut out = Vec::with_capacity(n_restarts);
    for restart in 0..n_restarts {
        let mut stream = rng::stream(seed, &format!("optim.restart{restart}"));
        let z0 = crate::gan::latents(&mut stream, 1, n_z);
        let mut z = Tensor::<f32>::new(vec![1, n_z], z0)?.with_grad();
        let mut adam = Adam::for_params(&[&z], lr, 0.9);
        let mut best: Option<Minimizer> = None;
        let mut initial = f64::NAN;
        for _ in 0..=inner_iters {
            let mut tape = Tape::new();
            let zid = tape.leaf(&z);
            let loss_id = match kind {
                CondLoss::GaussianPrior => {
                    let l = neg_log_posterior(&mut tape, zid, gen, spec)?;
                    tape.reduce_sum_all(l)?
                }
                CondLoss::Perceptual => {
                    let fit_spec = PosteriorSpec { obs: spec.obs.clone(), lambda: 0.0 };
                    let fit = neg_log_posterior(&mut tape, zid, gen, &fit_spec)?;
                    let fit = tape.reduce_sum_all(fit)?;
                    let (img, _) = gen.forward(&mut tape, zid, Mode::Eval, false)?;
                    let d = disc.as_mut().expect("validated above");
                    let (scores, _) = d.forward(&mut tape, img, Mode::Eval, false)?;
                    // λ·ln(1 − σ(s)) = −λ·softplus(s)
                    let sp = tape.elem(scores, ElemKind::Softplus)?;
                    let sp = tape.reduce_sum_all(sp)?;
                    let prior = tape.scale(sp, -(spec.lambda as f32))?;
                    tape.add(fit, prior)?
                }
            };
            let value = tape.scalar_value(loss_id)?;
            if initial.is_nan() {
                initial = value;
            }
            if best.as_ref().is_none_or(|b| value < b.loss) {
                best = Some(Minimizer { z: tape.value(zid).to_vec(), loss: value, initial_loss: initial });
            }
            tape.backward(loss_id)?;
            z.zero_grad();
            z.accumulate_grad(&tape.grad_or_zeros(zid))?;
            adam.step(&mut [&mut z])?;
        }
        let mut m = best.expect("at least one evaluation");
        m.initial_loss = initial;
        out.push(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
