use super::check::{central_diff, max_rel_err, FD_STEP, FD_TOL};
use super::*;
use crate::error::{Error, Result};

/// Deterministic pseudorandom values in [-1, 1] (splitmix64).
fn randv(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
    (0..n)
        .map(|_| {
            s = s.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Max relative error between reverse-mode and central-difference gradients
/// of a scalar objective built by `build` from one leaf.
fn grad_vs_fd(
    dims: &[usize],
    x0: &[f64],
    build: &mut dyn FnMut(&mut Tape<f64>, Id) -> Result<Id>,
) -> f64 {
    let t = Tensor::<f64>::new(dims.to_vec(), x0.to_vec()).unwrap().with_grad();
    let mut tape = Tape::new();
    let leaf = tape.leaf(&t);
    let loss = build(&mut tape, leaf).unwrap();
    tape.backward(loss).unwrap();
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
    )
    .unwrap();
    max_rel_err(&ad, &fd)
}

// ── matmul ──────────────────────────────────────────────────────────────

#[test]
fn matmul_identity() {
    let mut tape = Tape::<f32>::new();
    let i2 = tape.leaf_const(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let v = tape.leaf_const(vec![2, 1], vec![3.0, 4.0]).unwrap();
    let out = tape.matmul(i2, v).unwrap();
    assert_eq!(tape.value(out), &[3.0, 4.0]);
}

#[test]
fn matmul_by_ones_column() {
    let mut tape = Tape::<f32>::new();
    let a = tape.leaf_const(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let ones = tape.leaf_const(vec![2, 1], vec![1.0, 1.0]).unwrap();
    let out = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(out), &[3.0, 7.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.leaf_const(vec![2, 3], vec![0.0; 6]).unwrap();
    let b = tape.leaf_const(vec![2, 2], vec![0.0; 4]).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_grad_matches_fd_and_row_sums() {
    let b0 = randv(3 * 2, 11);
    // gradient of sum(a·b) w.r.t. a has rows equal to the column sums of b^T
    let a0 = randv(2 * 3, 7);
    let err = grad_vs_fd(&[2, 3], &a0, &mut |tape, a| {
        let b = tape.leaf_const(vec![3, 2], b0.clone())?;
        let m = tape.matmul(a, b)?;
        tape.reduce_sum_all(m)
    });
    assert!(err < FD_TOL, "rel err {err}");

    // analytic: d sum(a·b)/d a[i,k] = Σ_j b[k,j]
    let t = Tensor::<f64>::new(vec![2, 3], a0).unwrap().with_grad();
    let mut tape = Tape::new();
    let a = tape.leaf(&t);
    let b = tape.leaf_const(vec![3, 2], b0.clone()).unwrap();
    let m = tape.matmul(a, b).unwrap();
    let loss = tape.reduce_sum_all(m).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad_or_zeros(a);
    for i in 0..2 {
        for k in 0..3 {
            let expect = b0[k * 2] + b0[k * 2 + 1];
            assert!((g[i * 3 + k] - expect).abs() < 1e-12);
        }
    }
}

// ── conv1d ──────────────────────────────────────────────────────────────

#[test]
fn conv1d_matches_index_formula() {
    // v_i = u_i a_1 + u_{i+1} a_2
    let u = [5.0f32, 7.0, 11.0, 13.0];
    let a = [2.0f32, 3.0];
    let mut tape = Tape::<f32>::new();
    let uid = tape.leaf_const(vec![4], u.to_vec()).unwrap();
    let aid = tape.leaf_const(vec![2], a.to_vec()).unwrap();
    let v = tape.conv1d_valid(uid, aid).unwrap();
    assert_eq!(tape.value(v), &[31.0, 47.0, 61.0]);
}

#[test]
fn conv1d_identity_filter() {
    let mut tape = Tape::<f32>::new();
    let u = tape.leaf_const(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let a = tape.leaf_const(vec![2], vec![1.0, 0.0]).unwrap();
    let v = tape.conv1d_valid(u, a).unwrap();
    assert_eq!(tape.value(v), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv1d_box_filter() {
    let mut tape = Tape::<f32>::new();
    let u = tape.leaf_const(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let a = tape.leaf_const(vec![2], vec![1.0, 1.0]).unwrap();
    let v = tape.conv1d_valid(u, a).unwrap();
    assert_eq!(tape.value(v), &[3.0, 5.0, 7.0]);
}

#[test]
fn conv1d_filter_longer_than_input_errors() {
    let mut tape = Tape::<f32>::new();
    let u = tape.leaf_const(vec![2], vec![1.0, 2.0]).unwrap();
    let a = tape.leaf_const(vec![3], vec![1.0; 3]).unwrap();
    assert!(matches!(tape.conv1d_valid(u, a), Err(Error::Shape(_))));
}

#[test]
fn conv1d_grads_match_fd() {
    let u0 = randv(6, 3);
    let f0 = randv(3, 4);
    let err = grad_vs_fd(&[6], &u0, &mut |tape, u| {
        let f = tape.leaf_const(vec![3], f0.clone())?;
        let v = tape.conv1d_valid(u, f)?;
        let s = tape.elem(v, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "input grad rel err {err}");
    let u_fixed = randv(6, 5);
    let err = grad_vs_fd(&[3], &f0, &mut |tape, f| {
        let u = tape.leaf_const(vec![6], u_fixed.clone())?;
        let v = tape.conv1d_valid(u, f)?;
        let s = tape.elem(v, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "filter grad rel err {err}");
}

// ── conv2d / conv_transpose2d ───────────────────────────────────────────

/// Reference convolution written directly from the index formula; used to
/// build explicit dense matrices for the oracle tests.
fn conv_ref(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    filt: &[f64],
    (co, f): (usize, usize),
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - f) / stride + 1;
    let ow = (w + 2 * padding - f) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for c in 0..ci {
                    for p in 0..f {
                        for q in 0..f {
                            let ii = (i * stride + p) as isize - padding as isize;
                            let jj = (j * stride + q) as isize - padding as isize;
                            if ii >= 0 && ii < h as isize && jj >= 0 && jj < w as isize {
                                acc += x[(c * h + ii as usize) * w + jj as usize]
                                    * filt[((o * ci + c) * f + p) * f + q];
                            }
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_zero_filter_gives_zero() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![1, 1, 4, 4], randv(16, 9).iter().map(|&v| v as f32).collect()).unwrap();
    let f = tape.leaf_const(vec![1, 1, 4, 4], vec![0.0; 16]).unwrap();
    let y = tape.conv2d(x, f, 1, 0).unwrap();
    assert_eq!(tape.dims(y), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y), &[0.0]);
}

#[test]
fn conv2d_delta_input_stamps_filter() {
    // A centered unit impulse convolved (cross-correlation, padding 1) must
    // reproduce the dense-matrix action on that basis vector.
    let (h, w, f) = (5usize, 5usize, 3usize);
    let mut x = vec![0.0f64; h * w];
    x[2 * w + 2] = 1.0;
    let filt = randv(f * f, 21);
    let oracle = conv_ref(&x, (1, h, w), &filt, (1, f), 1, 1);

    let mut tape = Tape::<f64>::new();
    let xid = tape.leaf_const(vec![1, 1, h, w], x).unwrap();
    let fid = tape.leaf_const(vec![1, 1, f, f], filt.clone()).unwrap();
    let y = tape.conv2d(xid, fid, 1, 1).unwrap();
    for (a, b) in tape.value(y).iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    // The stamp is the filter flipped in both axes around the impulse.
    for p in 0..f {
        for q in 0..f {
            let v = tape.value(y)[(p + 1) * w + q + 1];
            assert!((v - filt[(f - 1 - p) * f + (f - 1 - q)]).abs() < 1e-12);
        }
    }
}

#[test]
fn conv2d_nonpositive_output_is_shape_error() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![1, 1, 3, 3], vec![0.0; 9]).unwrap();
    let f = tape.leaf_const(vec![1, 1, 5, 5], vec![0.0; 25]).unwrap();
    assert!(matches!(tape.conv2d(x, f, 1, 0), Err(Error::Shape(_))));
}

#[test]
fn conv2d_grads_match_fd() {
    let x0 = randv(2 * 8 * 8, 31);
    let f0 = randv(3 * 2 * 3 * 3, 32);
    let err = grad_vs_fd(&[1, 2, 8, 8], &x0, &mut |tape, x| {
        let f = tape.leaf_const(vec![3, 2, 3, 3], f0.clone())?;
        let y = tape.conv2d(x, f, 2, 1)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "conv2d input grad rel err {err}");
    let x_fixed = randv(2 * 8 * 8, 33);
    let err = grad_vs_fd(&[3, 2, 3, 3], &f0, &mut |tape, f| {
        let x = tape.leaf_const(vec![1, 2, 8, 8], x_fixed.clone())?;
        let y = tape.conv2d(x, f, 2, 1)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "conv2d filter grad rel err {err}");
}

#[test]
fn conv_transpose_single_entry_stamps_filter() {
    let filt: Vec<f32> = randv(16, 41).iter().map(|&v| v as f32).collect();
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![1, 1, 1, 1], vec![2.5]).unwrap();
    let f = tape.leaf_const(vec![1, 1, 4, 4], filt.clone()).unwrap();
    let y = tape.conv_transpose2d(x, f, 1, 0).unwrap();
    assert_eq!(tape.dims(y), &[1, 1, 4, 4]);
    for (a, b) in tape.value(y).iter().zip(&filt) {
        assert!((a - 2.5 * b).abs() < 1e-6);
    }
}

#[test]
fn conv_transpose_equals_explicit_transposed_matrix() {
    // Build the dense conv matrix A (7x7 -> 4x4, stride 2, padding 1) by
    // probing basis vectors through the reference convolution, then check
    // conv_transpose2d(x) == A^T · flatten(x) for a random 1x4x4 input.
    let (hb, wb, f, stride, padding) = (7usize, 7usize, 3usize, 2usize, 1usize);
    let filt = randv(f * f, 51);
    let n_big = hb * wb;
    let n_small = 16;
    let mut a_mat = vec![0.0f64; n_small * n_big]; // [small x big]
    for k in 0..n_big {
        let mut e = vec![0.0; n_big];
        e[k] = 1.0;
        let col = conv_ref(&e, (1, hb, wb), &filt, (1, f), stride, padding);
        for r in 0..n_small {
            a_mat[r * n_big + k] = col[r];
        }
    }
    let x = randv(n_small, 52);
    let mut want = vec![0.0f64; n_big];
    for k in 0..n_big {
        for r in 0..n_small {
            want[k] += a_mat[r * n_big + k] * x[r];
        }
    }
    let mut tape = Tape::<f64>::new();
    let xid = tape.leaf_const(vec![1, 1, 4, 4], x).unwrap();
    let fid = tape.leaf_const(vec![1, 1, f, f], filt).unwrap();
    let y = tape.conv_transpose2d(xid, fid, stride, padding).unwrap();
    assert_eq!(tape.dims(y), &[1, 1, hb, wb]);
    for (a, b) in tape.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn conv_transpose_generator_head_shape() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![1, 512, 4, 4], vec![0.5; 512 * 16]).unwrap();
    let f = tape.leaf_const(vec![2, 512, 4, 4], vec![0.01; 2 * 512 * 16]).unwrap();
    let y = tape.conv_transpose2d(x, f, 2, 1).unwrap();
    assert_eq!(tape.dims(y), &[1, 2, 8, 8]);
}

#[test]
fn conv_transpose_grads_match_fd() {
    let x0 = randv(2 * 3 * 3, 61);
    let f0 = randv(2 * 2 * 4 * 4, 62);
    let err = grad_vs_fd(&[1, 2, 3, 3], &x0, &mut |tape, x| {
        let f = tape.leaf_const(vec![2, 2, 4, 4], f0.clone())?;
        let y = tape.conv_transpose2d(x, f, 2, 1)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "convT input grad rel err {err}");
    let x_fixed = randv(2 * 3 * 3, 63);
    let err = grad_vs_fd(&[2, 2, 4, 4], &f0, &mut |tape, f| {
        let x = tape.leaf_const(vec![1, 2, 3, 3], x_fixed.clone())?;
        let y = tape.conv_transpose2d(x, f, 2, 1)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "convT filter grad rel err {err}");
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // ⟨conv2d(x), y⟩ == ⟨x, conv_transpose2d(y)⟩ in f32 at 1e-4.
    let (ci, h, w, co, f, stride, padding) = (2usize, 8, 8, 3usize, 4usize, 2usize, 1usize);
    let filt: Vec<f32> = randv(co * ci * f * f, 71).iter().map(|&v| v as f32).collect();
    let x: Vec<f32> = randv(ci * h * w, 72).iter().map(|&v| v as f32).collect();
    let oh = (h + 2 * padding - f) / stride + 1;
    let ow = (w + 2 * padding - f) / stride + 1;
    let y: Vec<f32> = randv(co * oh * ow, 73).iter().map(|&v| v as f32).collect();

    let mut tape = Tape::<f32>::new();
    let xid = tape.leaf_const(vec![1, ci, h, w], x.clone()).unwrap();
    let fid = tape.leaf_const(vec![co, ci, f, f], filt.clone()).unwrap();
    let cx = tape.conv2d(xid, fid, stride, padding).unwrap();
    let lhs: f64 = tape
        .value(cx)
        .iter()
        .zip(&y)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();

    // Transposed side consumes y with the conv's output channels; its filter
    // block is the same array with the leading axes swapped.
    let swapped = kernels::swap01(&filt, co, ci, f);
    let yid = tape.leaf_const(vec![1, co, oh, ow], y).unwrap();
    let sid = tape.leaf_const(vec![ci, co, f, f], swapped).unwrap();
    let ty = tape.conv_transpose2d(yid, sid, stride, padding).unwrap();
    assert_eq!(tape.dims(ty), &[1, ci, h, w]);
    let rhs: f64 = tape
        .value(ty)
        .iter()
        .zip(&x)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum();
    let rel = (lhs - rhs).abs() / (lhs.abs().max(rhs.abs()) + 1e-8);
    assert!(rel < 1e-4, "adjoint identity violated: {lhs} vs {rhs}");
}

// ── elementwise / reduce ────────────────────────────────────────────────

#[test]
fn elementwise_values() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    let r = tape.elem(x, ElemKind::Relu).unwrap();
    assert_eq!(tape.value(r), &[0.0, 0.0, 2.0]);
    let t = tape.elem(x, ElemKind::Tanh).unwrap();
    assert_eq!(tape.value(t)[1], 0.0);
    let s = tape.elem(x, ElemKind::Selu).unwrap();
    assert_eq!(tape.value(s)[1], 0.0);
    let l = tape.elem(x, ElemKind::LeakyRelu).unwrap();
    assert!((tape.value(l)[0] + 0.2).abs() < 1e-7);
}

#[test]
fn selu_slope_approaches_lambda_from_above() {
    // central FD of selu at small positive x
    let fd = central_diff(
        &mut |x| {
            let mut tape = Tape::<f64>::new();
            let xid = tape.leaf_const(vec![1], x.to_vec())?;
            let y = tape.elem(xid, ElemKind::Selu)?;
            tape.scalar_value(y)
        },
        &[0.01],
        1e-3,
    )
    .unwrap();
    assert!((fd[0] - SELU_LAMBDA).abs() < 1e-9, "{}", fd[0]);
}

#[test]
fn log_rejects_nonpositive() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![2], vec![1.0, 0.0]).unwrap();
    assert!(matches!(tape.elem(x, ElemKind::Log), Err(Error::Domain(_))));
}

#[test]
fn elementwise_grads_match_fd() {
    for kind in [
        ElemKind::Relu,
        ElemKind::LeakyRelu,
        ElemKind::Tanh,
        ElemKind::Selu,
        ElemKind::Sigmoid,
        ElemKind::Square,
        ElemKind::Exp,
        ElemKind::Softplus,
    ] {
        // keep points away from the relu kink where FD is one-sided
        let x0: Vec<f64> = randv(9, 81).iter().map(|v| v * 2.0 + 0.11).collect();
        let err = grad_vs_fd(&[9], &x0, &mut |tape, x| {
            let y = tape.elem(x, kind)?;
            let s = tape.elem(y, ElemKind::Square)?;
            tape.reduce_sum_all(s)
        });
        assert!(err < FD_TOL, "{kind:?} rel err {err}");
    }
    // log over positive inputs
    let x0: Vec<f64> = randv(9, 82).iter().map(|v| v.abs() + 0.5).collect();
    let err = grad_vs_fd(&[9], &x0, &mut |tape, x| {
        let y = tape.elem(x, ElemKind::Log)?;
        tape.reduce_sum_all(y)
    });
    assert!(err < FD_TOL, "log rel err {err}");
}

#[test]
fn reduce_values_and_grads() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    let s = tape.reduce_sum_all(x).unwrap();
    assert_eq!(tape.value(s), &[6.0]);

    let c = tape.leaf_const(vec![5], vec![2.5; 5]).unwrap();
    let m = tape.reduce_mean_all(c).unwrap();
    assert_eq!(tape.value(m), &[2.5]);

    let bad = tape.reduce(x, ReduceKind::Sum, Some(3));
    assert!(matches!(bad, Err(Error::Shape(_))));

    // gradient of mean is 1/M per entry
    let t = Tensor::<f64>::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap().with_grad();
    let mut tp = Tape::<f64>::new();
    let leaf = tp.leaf(&t);
    let m = tp.reduce_mean_all(leaf).unwrap();
    tp.backward(m).unwrap();
    for &g in tp.grad_or_zeros(leaf).iter() {
        assert!((g - 0.25).abs() < 1e-15);
    }
}

#[test]
fn reduce_axis_matches_fd() {
    let x0 = randv(2 * 3 * 4, 91);
    for axis in 0..3 {
        let err = grad_vs_fd(&[2, 3, 4], &x0, &mut |tape, x| {
            let r = tape.reduce(x, ReduceKind::Mean, Some(axis))?;
            let s = tape.elem(r, ElemKind::Square)?;
            tape.reduce_sum_all(s)
        });
        assert!(err < FD_TOL, "axis {axis} rel err {err}");
    }
}

// ── gather / reshape / bias / batchnorm ─────────────────────────────────

#[test]
fn gather_and_bias_grads_match_fd() {
    let x0 = randv(3 * 5, 101);
    let err = grad_vs_fd(&[3, 5], &x0, &mut |tape, x| {
        let g = tape.gather_cols(x, vec![4, 0, 2])?;
        let s = tape.elem(g, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "gather rel err {err}");

    let b0 = randv(5, 102);
    let err = grad_vs_fd(&[5], &b0, &mut |tape, b| {
        let x = tape.leaf_const(vec![3, 5], randv(15, 103))?;
        let y = tape.bias_row(x, b)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "bias_row rel err {err}");

    let b0 = randv(2, 104);
    let err = grad_vs_fd(&[2], &b0, &mut |tape, b| {
        let x = tape.leaf_const(vec![2, 2, 3, 3], randv(36, 105))?;
        let y = tape.bias_chan(x, b)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "bias_chan rel err {err}");
}

#[test]
fn batchnorm_train_normalizes_and_matches_fd() {
    let (b, c, s) = (4usize, 3usize, 16usize);
    let x0: Vec<f64> = randv(b * c * s, 111).iter().map(|v| v * 3.0 + 0.7).collect();
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf_const(vec![b, c, 4, 4], x0.clone()).unwrap();
    let gamma = tape.leaf_const(vec![c], vec![1.0; c]).unwrap();
    let beta = tape.leaf_const(vec![c], vec![0.0; c]).unwrap();
    let (y, mean, var) = tape.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
    // output mean ~ 0, variance ~ 1 per channel (gamma=1, beta=0)
    let ys = tape.value(y);
    for ci in 0..c {
        let mut m = 0.0;
        let mut v = 0.0;
        for bi in 0..b {
            for si in 0..s {
                m += ys[(bi * c + ci) * s + si];
            }
        }
        m /= (b * s) as f64;
        for bi in 0..b {
            for si in 0..s {
                let d = ys[(bi * c + ci) * s + si] - m;
                v += d * d;
            }
        }
        v /= (b * s) as f64;
        assert!(m.abs() < 1e-5, "channel mean {m}");
        assert!((v - 1.0).abs() < 1e-4, "channel var {v}");
    }
    assert_eq!(mean.len(), c);
    assert_eq!(var.len(), c);

    // batch of one rejected
    let mut t2 = Tape::<f64>::new();
    let x1 = t2.leaf_const(vec![1, c, 4, 4], vec![0.0; c * s]).unwrap();
    let g1 = t2.leaf_const(vec![c], vec![1.0; c]).unwrap();
    let b1 = t2.leaf_const(vec![c], vec![0.0; c]).unwrap();
    assert!(matches!(t2.batchnorm_train(x1, g1, b1, 1e-5), Err(Error::Usage(_))));

    // gradients w.r.t. input, gamma, beta
    let err = grad_vs_fd(&[b, c, 4, 4], &x0, &mut |tape, x| {
        let gamma = tape.leaf_const(vec![c], vec![1.3, 0.8, 1.1])?;
        let beta = tape.leaf_const(vec![c], vec![0.1, -0.2, 0.3])?;
        let (y, _, _) = tape.batchnorm_train(x, gamma, beta, 1e-5)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "bn input grad rel err {err}");

    let g0 = vec![1.3, 0.8, 1.1];
    let err = grad_vs_fd(&[c], &g0, &mut |tape, gamma| {
        let x = tape.leaf_const(vec![b, c, 4, 4], x0.clone())?;
        let beta = tape.leaf_const(vec![c], vec![0.1, -0.2, 0.3])?;
        let (y, _, _) = tape.batchnorm_train(x, gamma, beta, 1e-5)?;
        let s = tape.elem(y, ElemKind::Square)?;
        tape.reduce_sum_all(s)
    });
    assert!(err < FD_TOL, "bn gamma grad rel err {err}");
}

// ── backward driver ─────────────────────────────────────────────────────

#[test]
fn backward_sum_of_squares() {
    let x = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut tape = Tape::new();
    let leaf = tape.leaf(&x);
    let sq = tape.elem(leaf, ElemKind::Square).unwrap();
    let loss = tape.reduce_sum_all(sq).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(leaf).unwrap(), &[2.0, 4.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
}

#[test]
fn unused_leaf_gets_zero_grad() {
    let x = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
    let unused = Tensor::<f32>::new(vec![3], vec![1.0; 3]).unwrap().with_grad();
    let mut tape = Tape::new();
    let xl = tape.leaf(&x);
    let ul = tape.leaf(&unused);
    let loss = tape.reduce_sum_all(xl).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad_or_zeros(ul), vec![0.0; 3]);
}

#[test]
fn grad_accumulates_across_multiple_uses() {
    // loss = sum(x*x_again) + sum(x) where both factors are the same leaf
    let x = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().with_grad();
    let mut tape = Tape::new();
    let leaf = tape.leaf(&x);
    let prod = tape.mul(leaf, leaf).unwrap();
    let s1 = tape.reduce_sum_all(prod).unwrap();
    let s2 = tape.reduce_sum_all(leaf).unwrap();
    let loss = tape.add(s1, s2).unwrap();
    tape.backward(loss).unwrap();
    let g = tape.grad_or_zeros(leaf);
    for (gi, xi) in g.iter().zip([1.0, 2.0, 3.0]) {
        assert!((gi - (2.0 * xi + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn composed_network_grad_matches_fd() {
    // linear → tanh → linear → softplus → mean
    let w1 = randv(4 * 3, 121);
    let w2 = randv(2 * 4, 122);
    let x_fixed = randv(5 * 3, 123);
    let err = grad_vs_fd(&[4, 3], &w1, &mut |tape, w1| {
        let x = tape.leaf_const(vec![5, 3], x_fixed.clone())?;
        let w2 = tape.leaf_const(vec![2, 4], w2.clone())?;
        let h = tape.matmul_tb(x, w1)?;
        let h = tape.elem(h, ElemKind::Tanh)?;
        let o = tape.matmul_tb(h, w2)?;
        let o = tape.elem(o, ElemKind::Softplus)?;
        tape.reduce_mean_all(o)
    });
    assert!(err < FD_TOL, "composed rel err {err}");
}

#[test]
fn backward_is_bit_deterministic() {
    let x: Vec<f32> = randv(2 * 2 * 8 * 8, 131).iter().map(|&v| v as f32).collect();
    let f: Vec<f32> = randv(3 * 2 * 4 * 4, 132).iter().map(|&v| v as f32).collect();
    let t = Tensor::<f32>::new(vec![3, 2, 4, 4], f).unwrap().with_grad();
    let mut tape = Tape::new();
    let xid = tape.leaf_const(vec![2, 2, 8, 8], x).unwrap();
    let fid = tape.leaf(&t);
    let y = tape.conv2d(xid, fid, 2, 1).unwrap();
    let s = tape.elem(y, ElemKind::Square).unwrap();
    let loss = tape.reduce_sum_all(s).unwrap();
    tape.backward(loss).unwrap();
    let g1 = tape.grad_or_zeros(fid);
    tape.backward(loss).unwrap();
    let g2 = tape.grad_or_zeros(fid);
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn backward_is_linear_in_the_loss() {
    // grad(a·f + b·g) == a·grad(f) + b·grad(g)
    let x0: Vec<f32> = randv(6, 141).iter().map(|&v| v as f32).collect();
    let (a, b) = (1.7f32, -0.6f32);

    let build_f = |tape: &mut Tape<f32>, leaf: Id| {
        let y = tape.elem(leaf, ElemKind::Square).unwrap();
        tape.reduce_sum_all(y).unwrap()
    };
    let build_g = |tape: &mut Tape<f32>, leaf: Id| {
        let y = tape.elem(leaf, ElemKind::Tanh).unwrap();
        tape.reduce_mean_all(y).unwrap()
    };

    let t = Tensor::<f32>::new(vec![6], x0).unwrap().with_grad();

    let mut tape = Tape::new();
    let leaf = tape.leaf(&t);
    let f = build_f(&mut tape, leaf);
    let g = build_g(&mut tape, leaf);
    let fa = tape.scale(f, a).unwrap();
    let gb = tape.scale(g, b).unwrap();
    let loss = tape.add(fa, gb).unwrap();
    tape.backward(loss).unwrap();
    let combined = tape.grad_or_zeros(leaf);

    let mut t1 = Tape::new();
    let l1 = t1.leaf(&t);
    let f1 = build_f(&mut t1, l1);
    t1.backward(f1).unwrap();
    let gf = t1.grad_or_zeros(l1);

    let mut t2 = Tape::new();
    let l2 = t2.leaf(&t);
    let g2 = build_g(&mut t2, l2);
    t2.backward(g2).unwrap();
    let gg = t2.grad_or_zeros(l2);

    for i in 0..combined.len() {
        let want = a * gf[i] + b * gg[i];
        let rel = (combined[i] - want).abs() / (want.abs() + 1e-8);
        assert!(rel < 1e-5, "component {i}: {} vs {want}", combined[i]);
    }
}

#[test]
fn log_kth_dist_grads_match_fd() {
    let x0 = randv(6 * 2, 151);
    // fixed neighbor assignment (any permutation without self-loops works)
    let nb = vec![1usize, 2, 3, 4, 5, 0];
    let err = grad_vs_fd(&[6, 2], &x0, &mut |tape, x| {
        let ld = tape.log_kth_dist(x, nb.clone())?;
        tape.reduce_sum_all(ld)
    });
    assert!(err < FD_TOL, "log_kth_dist rel err {err}");
}

#[test]
fn log_kth_dist_floors_zero_distances() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf_const(vec![2, 2], vec![0.5, 0.5, 0.5, 0.5]).unwrap();
    let ld = tape.log_kth_dist(x, vec![1, 0]).unwrap();
    assert_eq!(tape.floored_distances, 2);
    for &v in tape.value(ld) {
        assert!((v - (DIST_FLOOR as f32).ln()).abs() < 1e-3);
    }
}
