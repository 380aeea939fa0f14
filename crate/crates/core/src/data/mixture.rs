//! Gaussian mixtures: validated construction, exact log-density, sampling,
//! and a differentiable log-density graph for the neural-sampler trainer.

use crate::autodiff::{ElemKind, Id, ReduceKind, Scalar, Tape};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `d×d` covariances.
    covs: Vec<Vec<f64>>,
    /// Lower Cholesky factors of the covariances.
    chol: Vec<Vec<f64>>,
    /// Inverses of the covariances.
    inv: Vec<Vec<f64>>,
    /// `log wᵢ − ½(d·ln 2π + ln det Σᵢ)` per component (`-inf` for wᵢ = 0).
    log_norm: Vec<f64>,
}

/// Lower Cholesky factor, or a domain error when not positive definite.
fn cholesky(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::domain("covariance is not positive definite"));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// Invert an SPD matrix from its Cholesky factor by solving `L Lᵀ X = I`.
fn spd_inverse(l: &[f64], d: usize) -> Vec<f64> {
    let mut inv = vec![0.0f64; d * d];
    for col in 0..d {
        // forward solve L y = e_col
        let mut y = vec![0.0f64; d];
        for i in 0..d {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
        // back solve Lᵀ x = y
        let mut x = vec![0.0f64; d];
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s -= l[k * d + i] * x[k];
            }
            x[i] = s / l[i * d + i];
        }
        for i in 0..d {
            inv[i * d + col] = x[i];
        }
    }
    inv
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covs.len() {
            return Err(Error::usage("mixture components are inconsistent"));
        }
        if weights.iter().any(|&w| w < 0.0) || !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::usage("mixture weights must be nonnegative with positive mass"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("mixture weights sum to {total}, expected 1")));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::shape("mixture means have inconsistent dimension"));
        }
        let mut chol = Vec::new();
        let mut inv = Vec::new();
        let mut log_norm = Vec::new();
        for (i, c) in covs.iter().enumerate() {
            if c.len() != dim * dim {
                return Err(Error::shape(format!("covariance {i} is not {dim}x{dim}")));
            }
            for r in 0..dim {
                for s in 0..r {
                    if (c[r * dim + s] - c[s * dim + r]).abs() > 1e-12 {
                        return Err(Error::domain(format!("covariance {i} is not symmetric")));
                    }
                }
            }
            let l = cholesky(c, dim)?;
            let log_det: f64 = (0..dim).map(|k| 2.0 * l[k * dim + k].ln()).sum();
            log_norm.push(if weights[i] > 0.0 {
                weights[i].ln() - 0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det)
            } else {
                f64::NEG_INFINITY
            });
            inv.push(spd_inverse(&l, dim));
            chol.push(l);
        }
        Ok(GaussianMixture { dim, weights, means, covs, chol, inv, log_norm })
    }

    /// Isotropic shorthand: 1-D components from `(mean, std)` pairs.
    pub fn univariate(weights: Vec<f64>, comps: &[(f64, f64)]) -> Result<Self> {
        let means = comps.iter().map(|&(m, _)| vec![m]).collect();
        let covs = comps.iter().map(|&(_, s)| vec![s * s]).collect();
        GaussianMixture::new(weights, means, covs)
    }

    /// The three-component 1-D mixture used by the toy sampler experiment:
    /// centers -1, 2, 6 with standard deviations 1, 2, 0.5, equal weights.
    pub fn toy_1d() -> Self {
        GaussianMixture::univariate(
            vec![1.0 / 3.0; 3],
            &[(-1.0, 1.0), (2.0, 2.0), (6.0, 0.5)],
        )
        .expect("valid 1d mixture")
    }

    /// The three-component 2-D mixture used by the toy sampler experiment.
    pub fn toy_2d() -> Self {
        GaussianMixture::new(
            vec![1.0 / 3.0; 3],
            vec![vec![-1.0, -1.0], vec![1.0, 2.0], vec![2.0, -1.0]],
            vec![
                vec![1.0, -0.5, -0.5, 1.0],
                vec![1.5, 0.6, 0.6, 0.8],
                vec![1.0, 0.0, 0.0, 1.0],
            ],
        )
        .expect("valid 2d mixture")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<f64>] {
        &self.covs
    }

    /// Mixture mean `Σᵢ wᵢ μᵢ`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, m) in self.weights.iter().zip(&self.means) {
            for (o, v) in out.iter_mut().zip(m) {
                *o += w * v;
            }
        }
        out
    }

    /// Exact `log p(x)` by direct summation in `f64` (the reference path).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let d = self.dim;
        let logs: Vec<f64> = (0..self.weights.len())
            .map(|i| {
                if self.weights[i] == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let mut quad = 0.0;
                for r in 0..d {
                    for c in 0..d {
                        quad += (x[r] - self.means[i][r])
                            * self.inv[i][r * d + c]
                            * (x[c] - self.means[i][c]);
                    }
                }
                self.log_norm[i] - 0.5 * quad
            })
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        m + logs.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
    }

    /// Draw `count` samples: categorical component choice, then `μ + L·ξ`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut stream = rng::stream(seed, "mixture");
        let mut out = Vec::with_capacity(count * self.dim);
        for _ in 0..count {
            self.sample_into(&mut stream, &mut out);
        }
        out
    }

    fn sample_into(&self, stream: &mut Stream, out: &mut Vec<f64>) {
        let u: f64 = stream.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = i;
                break;
            }
        }
        let d = self.dim;
        let xi: Vec<f64> = (0..d).map(|_| rng::normal_f64(stream)).collect();
        let l = &self.chol[comp];
        for r in 0..d {
            let mut v = self.means[comp][r];
            for c in 0..=r {
                v += l[r * d + c] * xi[c];
            }
            out.push(v);
        }
    }

    /// Probability mass per bin of a 1-D histogram over `[lo, hi]`, with the
    /// two end bins absorbing the tails (matching a clamped sample
    /// histogram).
    pub fn bin_masses_1d(&self, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        assert_eq!(self.dim, 1);
        assert!(bins >= 2 && hi > lo);
        let width = (hi - lo) / bins as f64;
        let cdf = |x: f64| -> f64 {
            self.weights
                .iter()
                .zip(&self.means)
                .zip(&self.covs)
                .map(|((&w, m), c)| w * normal_cdf((x - m[0]) / c[0].sqrt()))
                .sum()
        };
        (0..bins)
            .map(|b| {
                let l = if b == 0 { f64::NEG_INFINITY } else { lo + b as f64 * width };
                let r = if b == bins - 1 { f64::INFINITY } else { lo + (b + 1) as f64 * width };
                let cl = if l.is_finite() { cdf(l) } else { 0.0 };
                let cr = if r.is_finite() { cdf(r) } else { 1.0 };
                (cr - cl).max(0.0)
            })
            .collect()
    }
}

/// Normalized histogram masses of 1-D samples over `[lo, hi]` with samples
/// outside the range clamped into the end bins (the convention matched by
/// [`GaussianMixture::bin_masses_1d`]).
pub fn sample_histogram_masses(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    assert!(bins >= 2 && hi > lo && !samples.is_empty());
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        let b = (((x - lo) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
        counts[b] += 1;
    }
    counts.into_iter().map(|c| c as f64 / samples.len() as f64).collect()
}

/// Range covering every component to four standard deviations (1-D).
pub fn mixture_plot_range(gm: &GaussianMixture) -> (f64, f64) {
    assert_eq!(gm.dim(), 1);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (m, c) in gm.means().iter().zip(gm.covariances()) {
        let s = c[0].sqrt();
        lo = lo.min(m[0] - 4.0 * s);
        hi = hi.max(m[0] + 4.0 * s);
    }
    (lo, hi)
}

/// Standard normal CDF via the Abramowitz–Stegun 7.1.26 rational
/// approximation of erf (absolute error below 1.5e-7).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Differentiable `log p(x)` for a batch `[B, d]`, built from tape
/// primitives so it serves as a neural-sampler target. The log-sum-exp
/// shift is taken from forward values (constant per sample), which leaves
/// the gradient exact.
pub fn mixture_log_density<T: Scalar>(tape: &mut Tape<T>, x: Id, gm: &GaussianMixture) -> Result<Id> {
    let dims = tape.dims(x).to_vec();
    if dims.len() != 2 || dims[1] != gm.dim {
        return Err(Error::shape(format!(
            "mixture log-density expects [B, {}], got {dims:?}",
            gm.dim
        )));
    }
    let (batch, d) = (dims[0], dims[1]);
    let mut log_comps: Vec<Id> = Vec::new();
    for i in 0..gm.weights.len() {
        if gm.weights[i] == 0.0 {
            continue;
        }
        let mu_tile: Vec<T> = (0..batch)
            .flat_map(|_| gm.means[i].iter().map(|&v| T::from_f64_c(v)))
            .collect();
        let mu = tape.leaf_const(vec![batch, d], mu_tile)?;
        let u = tape.sub(x, mu)?;
        let inv: Vec<T> = gm.inv[i].iter().map(|&v| T::from_f64_c(v)).collect();
        let inv_id = tape.leaf_const(vec![d, d], inv)?;
        let v = tape.matmul(u, inv_id)?;
        let uv = tape.mul(u, v)?;
        let quad = tape.reduce(uv, ReduceKind::Sum, Some(1))?;
        let half = tape.scale(quad, T::from_f64_c(-0.5))?;
        log_comps.push(tape.add_scalar(half, T::from_f64_c(gm.log_norm[i]))?);
    }
    // Per-sample shift = max over components of the forward values.
    let mut shift = vec![f64::NEG_INFINITY; batch];
    for &lc in &log_comps {
        for (s, &v) in shift.iter_mut().zip(tape.value(lc)) {
            *s = s.max(v.to_f64_c());
        }
    }
    let neg_shift: Vec<T> = shift.iter().map(|&v| T::from_f64_c(-v)).collect();
    let mut total: Option<Id> = None;
    for &lc in &log_comps {
        let c = tape.add_const(lc, &neg_shift)?;
        let e = tape.elem(c, ElemKind::Exp)?;
        total = Some(match total {
            None => e,
            Some(t) => tape.add(t, e)?,
        });
    }
    let total = total.expect("at least one positive-weight component");
    let logp = tape.elem(total, ElemKind::Log)?;
    let shift_t: Vec<T> = shift.iter().map(|&v| T::from_f64_c(v)).collect();
    tape.add_const(logp, &shift_t)
}
