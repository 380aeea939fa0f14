//! SMACOF multidimensional scaling (stress majorization) in two dimensions.

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone)]
pub struct Embedding2D {
    pub points: Vec<(f64, f64)>,
    pub stress: f64,
    pub iterations: usize,
    /// Raw stress after every Guttman transform (non-increasing).
    pub stress_history: Vec<f64>,
}

fn raw_stress(d: &[f64], x: &[(f64, f64)], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dij = dist(x[i], x[j]);
            let diff = d[i * n + j] - dij;
            acc += diff * diff;
        }
    }
    acc
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Stress-majorization MDS from a seeded random start. The stress sequence
/// is non-increasing (a property of the Guttman transform); iteration stops
/// at `max_iters` or when the relative stress change drops below `tol`.
pub fn smacof_mds(
    d: &[f64],
    n: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<Embedding2D> {
    if d.len() != n * n || n == 0 {
        return Err(Error::usage(format!("distance matrix length {} vs {n}x{n}", d.len())));
    }
    for i in 0..n {
        if d[i * n + i] != 0.0 {
            return Err(Error::usage("distance matrix must have a zero diagonal"));
        }
        for j in 0..n {
            let v = d[i * n + j];
            if !(v >= 0.0) {
                return Err(Error::usage(format!("negative or NaN distance at ({i}, {j})")));
            }
            if (v - d[j * n + i]).abs() > 1e-12 {
                return Err(Error::usage(format!("asymmetric distances at ({i}, {j})")));
            }
        }
    }
    let mut stream = rng::stream(seed, "mds");
    let mut x: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng::normal_f64(&mut stream), rng::normal_f64(&mut stream)))
        .collect();
    if n == 1 {
        return Ok(Embedding2D { points: vec![(0.0, 0.0)], stress: 0.0, iterations: 0, stress_history: vec![] });
    }

    let mut stress = raw_stress(d, &x, n);
    let mut history = Vec::new();
    let mut iterations = 0usize;
    for _ in 0..max_iters {
        // Guttman transform: X ← (1/n) B(X) X
        let mut next = vec![(0.0f64, 0.0f64); n];
        for i in 0..n {
            let mut row_sum = 0.0f64;
            let mut acc = (0.0f64, 0.0f64);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let dij = dist(x[i], x[j]);
                let b = if dij > 1e-300 { -d[i * n + j] / dij } else { 0.0 };
                row_sum -= b;
                acc.0 += b * x[j].0;
                acc.1 += b * x[j].1;
            }
            // (B X)_i with B_ij = b (negative, j ≠ i) and B_ii = row_sum
            next[i] = (
                (row_sum * x[i].0 + acc.0) / n as f64,
                (row_sum * x[i].1 + acc.1) / n as f64,
            );
        }
        x = next;
        iterations += 1;
        let new_stress = raw_stress(d, &x, n);
        history.push(new_stress);
        let rel = (stress - new_stress) / stress.max(1e-300);
        stress = new_stress;
        if rel.abs() < tol {
            break;
        }
    }
    Ok(Embedding2D { points: x, stress, iterations, stress_history: history })
}

/// Relative Frobenius misfit after optimally translating, rotating and
/// possibly reflecting `a` onto `b`.
pub fn procrustes_error(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let centroid = |p: &[(f64, f64)]| {
        let (sx, sy) = p.iter().fold((0.0, 0.0), |acc, q| (acc.0 + q.0, acc.1 + q.1));
        (sx / n, sy / n)
    };
    let (ca, cb) = (centroid(a), centroid(b));
    let ac: Vec<(f64, f64)> = a.iter().map(|p| (p.0 - ca.0, p.1 - ca.1)).collect();
    let bc: Vec<(f64, f64)> = b.iter().map(|p| (p.0 - cb.0, p.1 - cb.1)).collect();
    let norm_b: f64 = bc.iter().map(|p| p.0 * p.0 + p.1 * p.1).sum::<f64>().sqrt();

    let try_fit = |ac: &[(f64, f64)]| -> f64 {
        // cross-covariance M = Σ aᵢ bᵢᵀ; best rotation angle from atan2
        let (mut m00, mut m01, mut m10, mut m11) = (0.0, 0.0, 0.0, 0.0);
        for (p, q) in ac.iter().zip(&bc) {
            m00 += p.0 * q.0;
            m01 += p.0 * q.1;
            m10 += p.1 * q.0;
            m11 += p.1 * q.1;
        }
        let theta = (m01 - m10).atan2(m00 + m11);
        let (cs, sn) = (theta.cos(), theta.sin());
        let mut err = 0.0;
        for (p, q) in ac.iter().zip(&bc) {
            let rx = cs * p.0 - sn * p.1;
            let ry = sn * p.0 + cs * p.1;
            err += (rx - q.0).powi(2) + (ry - q.1).powi(2);
        }
        err.sqrt()
    };

    let direct = try_fit(&ac);
    let reflected: Vec<(f64, f64)> = ac.iter().map(|p| (p.0, -p.1)).collect();
    let mirrored = try_fit(&reflected);
    direct.min(mirrored) / norm_b.max(1e-300)
}
