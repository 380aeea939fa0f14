//! Finite-difference gradient checking.
//!
//! The checks evaluate a scalar objective as a black box (forward passes
//! only) and never touch the reverse-mode path they validate. Graphs under
//! test are promoted to `f64` so the comparison tolerance of `1e-4` at
//! `h = 1e-3` is meaningful.

use crate::error::Result;

/// Central finite differences of `f` at `x0`: `(f(x+h) − f(x−h)) / 2h`
/// coordinate by coordinate.
pub fn central_diff(
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; x0.len()];
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x)?;
        x[i] = orig - h;
        let fm = f(&x)?;
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// `‖ad − fd‖∞ / (‖fd‖∞ + 1e-8)`.
pub fn max_rel_err(ad: &[f64], fd: &[f64]) -> f64 {
    assert_eq!(ad.len(), fd.len());
    let num = ad
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs())
        .fold(0.0f64, f64::max);
    let den = fd.iter().map(|v| v.abs()).fold(0.0f64, f64::max) + 1e-8;
    num / den
}

/// Default step per the gradient-check contract.
pub const FD_STEP: f64 = 1e-3;

/// Default acceptance bound on [`max_rel_err`].
pub const FD_TOL: f64 = 1e-4;

use super::{Id, Tape, Tensor};

/// Max relative error between the reverse-mode gradient and central
/// differences of a scalar objective built by `build` from a single `f64`
/// leaf of shape `dims` at `x0`.
pub fn rel_err_vs_fd(
    dims: &[usize],
    x0: &[f64],
    build: &mut dyn FnMut(&mut Tape<f64>, Id) -> Result<Id>,
) -> Result<f64> {
    let t = Tensor::<f64>::new(dims.to_vec(), x0.to_vec())?.with_grad();
    let mut tape = Tape::new();
    let leaf = tape.leaf(&t);
    let loss = build(&mut tape, leaf)?;
    tape.backward(loss)?;
    let ad = tape.grad_or_zeros(leaf);
    let fd = central_diff(
        &mut |x| {
            let mut tp = Tape::new();
            let leaf = tp.leaf_const(dims.to_vec(), x.to_vec())?;
            let loss = build(&mut tp, leaf)?;
            tp.scalar_value(loss)
        },
        x0,
        FD_STEP,
    )?;
    Ok(max_rel_err(&ad, &fd))
}
