//! Parameter update rules.

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// `p ← p − lr · g` for every parameter. Errors if any gradient is missing.
pub fn sgd_step<T: Scalar>(params: &mut [&mut Tensor<T>], lr: T) -> Result<()> {
    for (i, p) in params.iter_mut().enumerate() {
        let g: Vec<T> = p.grad_or_err(&format!("#{i}"))?.to_vec();
        for (pv, gv) in p.data_mut().iter_mut().zip(g) {
            *pv = *pv - lr * gv;
        }
    }
    Ok(())
}

/// Clamp every parameter entry to `[-c, c]`.
pub fn clip_weights<T: Scalar>(params: &mut [&mut Tensor<T>], c: T) -> Result<()> {
    if !(c > T::zero()) {
        return Err(Error::usage("clip bound must be positive"));
    }
    for p in params.iter_mut() {
        for v in p.data_mut() {
            if *v > c {
                *v = c;
            } else if *v < -c {
                *v = -c;
            }
        }
    }
    Ok(())
}

/// Adam with bias correction.
///
/// GAN training uses `beta1 = 0.5`; the inference-network trainer uses the
/// usual `0.9`.
pub struct Adam<T: Scalar> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(param_sizes: &[usize], lr: T, beta1: T) -> Self {
        Adam {
            lr,
            beta1,
            beta2: T::from_f64_c(0.999),
            eps: T::from_f64_c(1e-8),
            step: 0,
            m: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(params: &[&Tensor<T>], lr: T, beta1: T) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Adam::new(&sizes, lr, beta1)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters; consumes `p.grad()`.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::usage(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for (i, p) in params.iter_mut().enumerate() {
            let g: Vec<T> = p.grad_or_err(&format!("#{i}"))?.to_vec();
            if g.len() != self.m[i].len() {
                return Err(Error::shape(format!(
                    "parameter #{i} length {} vs optimizer state {}",
                    g.len(),
                    self.m[i].len()
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((pv, gv), (mi, vi)) in
                p.data_mut().iter_mut().zip(&g).zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (one - self.beta1) * *gv;
                *vi = self.beta2 * *vi + (one - self.beta2) * *gv * *gv;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pv = *pv - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
