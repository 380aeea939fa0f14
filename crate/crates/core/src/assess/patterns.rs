//! Multipoint pattern histograms and the Jensen-Shannon divergence.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Frequency table of all overlapping `w×w` binary windows of an image,
/// each window encoded as its `w²` bits read row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternHistogram {
    window: usize,
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl PatternHistogram {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }
}

/// Count all `(H−w+1)(W−w+1)` stride-1 windows of a 0/1 image.
pub fn pattern_histogram(binary: &[u8], h: usize, w: usize, window: usize) -> Result<PatternHistogram> {
    if binary.len() != h * w {
        return Err(Error::shape(format!("image length {} vs {h}x{w}", binary.len())));
    }
    if window == 0 || window > h.min(w) {
        return Err(Error::shape(format!("window {window} exceeds image {h}x{w}")));
    }
    if window * window > 64 {
        return Err(Error::usage(format!("window {window} exceeds the 64-bit pattern code")));
    }
    let mut counts = BTreeMap::new();
    let mut total = 0u64;
    for r in 0..=h - window {
        for c in 0..=w - window {
            let mut code = 0u64;
            for dr in 0..window {
                for dc in 0..window {
                    code = (code << 1) | binary[(r + dr) * w + (c + dc)] as u64;
                }
            }
            *counts.entry(code).or_insert(0) += 1;
            total += 1;
        }
    }
    Ok(PatternHistogram { window, counts, total })
}

/// `JS(P ‖ Q) = ½ KL(P ‖ M) + ½ KL(Q ‖ M)` with `M = ½(P + Q)`, natural
/// logarithm; keys absent from a histogram carry probability zero.
pub fn js_divergence(p: &PatternHistogram, q: &PatternHistogram) -> Result<f64> {
    if p.total == 0 || q.total == 0 {
        return Err(Error::usage("Jensen-Shannon divergence of an empty histogram"));
    }
    let mut acc = 0.0f64;
    let mut qi = q.counts.iter().peekable();
    let mut pi = p.counts.iter().peekable();
    // merge the sorted key sets
    loop {
        let (pp, qq) = match (pi.peek(), qi.peek()) {
            (None, None) => break,
            (Some(&(pk, &pc)), Some(&(qk, &qc))) => {
                use std::cmp::Ordering;
                match pk.cmp(qk) {
                    Ordering::Less => {
                        pi.next();
                        (pc as f64 / p.total as f64, 0.0)
                    }
                    Ordering::Greater => {
                        qi.next();
                        (0.0, qc as f64 / q.total as f64)
                    }
                    Ordering::Equal => {
                        pi.next();
                        qi.next();
                        (pc as f64 / p.total as f64, qc as f64 / q.total as f64)
                    }
                }
            }
            (Some(&(_, &pc)), None) => {
                pi.next();
                (pc as f64 / p.total as f64, 0.0)
            }
            (None, Some(&(_, &qc))) => {
                qi.next();
                (0.0, qc as f64 / q.total as f64)
            }
        };
        let m = 0.5 * (pp + qq);
        if pp > 0.0 {
            acc += 0.5 * pp * (pp / m).ln();
        }
        if qq > 0.0 {
            acc += 0.5 * qq * (qq / m).ln();
        }
    }
    Ok(acc)
}

/// Jensen-Shannon divergence of two dense probability vectors (histogram bin
/// masses); zero bins are allowed.
pub fn js_divergence_masses(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            acc += 0.5 * a * (a / m).ln();
        }
        if b > 0.0 {
            acc += 0.5 * b * (b / m).ln();
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn uniform_image_has_single_pattern() {
        let img = vec![1u8; 8 * 8];
        let h = pattern_histogram(&img, 8, 8, 4).unwrap();
        assert_eq!(h.distinct(), 1);
        assert_eq!(h.total(), 25);
        assert_eq!(h.counts().values().sum::<u64>(), 25);
    }

    #[test]
    fn window_total_is_window_count() {
        let mut s = crate::rng::stream(1, "ph");
        for _ in 0..10 {
            let (h, w) = (12usize, 9usize);
            let img: Vec<u8> = (0..h * w).map(|_| s.random_range(0..2u8)).collect();
            let hist = pattern_histogram(&img, h, w, 4).unwrap();
            assert_eq!(hist.total(), ((h - 3) * (w - 3)) as u64);
        }
        assert!(pattern_histogram(&[0u8; 9], 3, 3, 4).is_err());
    }

    #[test]
    fn matches_naive_double_loop_oracle() {
        let mut s = crate::rng::stream(2, "ph2");
        for _ in 0..10 {
            let (h, w, win) = (12usize, 12usize, 3usize);
            let img: Vec<u8> = (0..h * w).map(|_| s.random_range(0..2u8)).collect();
            let hist = pattern_histogram(&img, h, w, win).unwrap();

            let mut oracle: BTreeMap<u64, u64> = BTreeMap::new();
            for r in 0..h - win + 1 {
                for c in 0..w - win + 1 {
                    let mut bits = Vec::new();
                    for dr in 0..win {
                        for dc in 0..win {
                            bits.push(img[(r + dr) * w + (c + dc)]);
                        }
                    }
                    let code = bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64);
                    *oracle.entry(code).or_insert(0) += 1;
                }
            }
            assert_eq!(hist.counts(), &oracle);
        }
    }

    #[test]
    fn js_identity_and_disjoint_bounds() {
        let a = pattern_histogram(&[1u8; 36], 6, 6, 2).unwrap();
        let b = pattern_histogram(&[0u8; 36], 6, 6, 2).unwrap();
        assert_eq!(js_divergence(&a, &a).unwrap(), 0.0);
        let d = js_divergence(&a, &b).unwrap();
        assert!((d - 2.0f64.ln()).abs() < 1e-12, "{d}");
    }

    #[test]
    fn js_is_symmetric_and_bounded() {
        let mut s = crate::rng::stream(3, "js");
        for _ in 0..50 {
            let (h, w) = (10usize, 10usize);
            let x: Vec<u8> = (0..h * w).map(|_| s.random_range(0..2u8)).collect();
            let y: Vec<u8> = (0..h * w).map(|_| s.random_range(0..2u8)).collect();
            let hx = pattern_histogram(&x, h, w, 3).unwrap();
            let hy = pattern_histogram(&y, h, w, 3).unwrap();
            let d1 = js_divergence(&hx, &hy).unwrap();
            let d2 = js_divergence(&hy, &hx).unwrap();
            assert!((d1 - d2).abs() < 1e-12);
            assert!((0.0..=2.0f64.ln() + 1e-12).contains(&d1));
        }
    }
}
