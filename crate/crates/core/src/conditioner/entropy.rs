//! k-th nearest-neighbor distances and the Kozachenko-Leonenko entropy
//! estimator.
//!
//! The estimate is `Ĥ = (d/M) Σᵢ ln ρᵢ + C(M, k, d)` with
//! `C = ln V_d + ψ(M) − ψ(k)`, where `ρᵢ` is the Euclidean distance from
//! sample `i` to its k-th nearest other sample, `V_d` the unit-ball volume
//! and `ψ` the digamma function. The additive constant is spelled out so the
//! estimate is absolutely accurate, not just up to a constant; gradients
//! only ever flow through the `Σ ln ρᵢ` term.

use crate::autodiff::{Scalar, DIST_FLOOR};
use crate::error::{Error, Result};

/// Squared Euclidean distance in f64 between two rows.
fn dist2<T: Scalar>(points: &[T], d: usize, i: usize, j: usize) -> f64 {
    let (a, b) = (&points[i * d..(i + 1) * d], &points[j * d..(j + 1) * d]);
    let mut acc = 0.0f64;
    for t in 0..d {
        let diff = a[t].to_f64_c() - b[t].to_f64_c();
        acc += diff * diff;
    }
    acc
}

fn kth_for_row<T: Scalar>(points: &[T], m: usize, d: usize, k: usize, i: usize) -> (f64, usize) {
    // ties broken by the smaller index, via lexicographic (distance, index)
    let mut cand: Vec<(f64, usize)> = (0..m)
        .filter(|&j| j != i)
        .map(|j| (dist2(points, d, i, j), j))
        .collect();
    let ord = |a: &(f64, usize), b: &(f64, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    cand.select_nth_unstable_by(k - 1, ord);
    let (d2, j) = cand[k - 1];
    (d2.sqrt(), j)
}

/// Distance from every row of `points [M, d]` to its k-th nearest other row,
/// together with that neighbor's index. Ties break toward the smaller index.
pub fn kth_nn_with_indices<T: Scalar>(
    points: &[T],
    m: usize,
    d: usize,
    k: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if m < 2 {
        return Err(Error::usage("k-NN distances need at least two points"));
    }
    if points.len() != m * d || d == 0 {
        return Err(Error::shape(format!("points buffer {} vs {m}x{d}", points.len())));
    }
    if k == 0 || k > m - 1 {
        return Err(Error::usage(format!("k = {k} outside 1..={}", m - 1)));
    }
    let rows: Vec<(f64, usize)>;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        rows = (0..m)
            .into_par_iter()
            .map(|i| kth_for_row(points, m, d, k, i))
            .collect();
    }
    #[cfg(not(feature = "parallel"))]
    {
        rows = (0..m).map(|i| kth_for_row(points, m, d, k, i)).collect();
    }
    Ok(rows.into_iter().unzip())
}

/// Sequential reference of [`kth_nn_with_indices`] (bench baseline).
pub fn kth_nn_with_indices_seq<T: Scalar>(
    points: &[T],
    m: usize,
    d: usize,
    k: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if m < 2 {
        return Err(Error::usage("k-NN distances need at least two points"));
    }
    if points.len() != m * d || d == 0 {
        return Err(Error::shape(format!("points buffer {} vs {m}x{d}", points.len())));
    }
    if k == 0 || k > m - 1 {
        return Err(Error::usage(format!("k = {k} outside 1..={}", m - 1)));
    }
    Ok((0..m).map(|i| kth_for_row(points, m, d, k, i)).unzip())
}

/// The k-th nearest-neighbor distances alone.
pub fn kth_nn_distances<T: Scalar>(points: &[T], m: usize, d: usize, k: usize) -> Result<Vec<f64>> {
    kth_nn_with_indices(points, m, d, k).map(|(rho, _)| rho)
}

/// Digamma via the ascending recurrence and the asymptotic series.
pub fn digamma(mut x: f64) -> f64 {
    assert!(x > 0.0, "digamma domain");
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + x.ln()
        - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))))
}

/// `ln Γ(x)` for `x = half/2`, exact half-integer/integer recursion.
fn ln_gamma_half(half: usize) -> f64 {
    assert!(half >= 1);
    if half.is_multiple_of(2) {
        // Γ(n) = (n−1)!
        let n = half / 2;
        (1..n).map(|j| (j as f64).ln()).sum()
    } else {
        // Γ(n + ½) = √π · Π_{j=1..n} (2j−1)/2
        let n = half / 2;
        0.5 * std::f64::consts::PI.ln()
            + (1..=n).map(|j| ((2 * j - 1) as f64).ln()).sum::<f64>()
            - n as f64 * std::f64::consts::LN_2
    }
}

/// `ln V_d` of the unit ball in `R^d`: `(d/2)·ln π − ln Γ(d/2 + 1)`.
pub fn ln_unit_ball_volume(d: usize) -> f64 {
    assert!(d >= 1);
    (d as f64 / 2.0) * std::f64::consts::PI.ln() - ln_gamma_half(d + 2)
}

/// The additive constant `C(M, k, d) = ln V_d + ψ(M) − ψ(k)`.
pub fn entropy_constant(m: usize, k: usize, d: usize) -> f64 {
    ln_unit_ball_volume(d) + digamma(m as f64) - digamma(k as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct EntropyEstimate {
    pub value: f64,
    /// Distances clamped to the floor before the logarithm.
    pub floored: usize,
}

/// Kozachenko-Leonenko estimate of the differential entropy of the sample
/// `points [M, d]` from k-th neighbor distances.
pub fn entropy_estimate<T: Scalar>(
    points: &[T],
    m: usize,
    d: usize,
    k: usize,
) -> Result<EntropyEstimate> {
    let rho = kth_nn_distances(points, m, d, k)?;
    let mut floored = 0usize;
    let sum_log: f64 = rho
        .iter()
        .map(|&r| {
            if r < DIST_FLOOR {
                floored += 1;
                DIST_FLOOR.ln()
            } else {
                r.ln()
            }
        })
        .sum();
    let value = d as f64 / m as f64 * sum_log + entropy_constant(m, k, d);
    Ok(EntropyEstimate { value, floored })
}
