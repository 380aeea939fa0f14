//! Dense convolution and reduction kernels.
//!
//! Convolutions are lowered to one whole-batch im2col + GEMM per call: the
//! column matrices of all batch items sit side by side, so each layer costs
//! a single large matrix product instead of many small ones. The im2col
//! scatter, the layout permutes and the col2im gather run per batch item
//! over disjoint buffers, in parallel under the `parallel` feature (on by
//! default) and sequentially otherwise — bit-identical either way, since
//! every reduction happens inside the fixed-order GEMM.
//!
//! The `seq` submodule is always compiled; it is the fallback body and the
//! baseline for the criterion benches.

use super::scalar::{mm_nn, mm_tn, Scalar};

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub f: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.f) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.f) / self.stride + 1
    }

    /// `true` when no input rows/cols are dropped by the floor in the output
    /// size, i.e. the convolution matrix and its transpose pair up exactly.
    pub fn exact(&self) -> bool {
        (self.h + 2 * self.padding - self.f).is_multiple_of(self.stride)
            && (self.w + 2 * self.padding - self.f).is_multiple_of(self.stride)
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.f * self.f
    }
}

/// Fill one row of the batch im2col matrix. Row `(c, p, q)` gathers the
/// `(p, q)`-shifted pixels of channel `c` from every batch item; item `b`
/// occupies the contiguous column range `[b·oh·ow, (b+1)·oh·ow)`.
fn im2col_row<T: Scalar>(g: &ConvGeom, batch: usize, x: &[T], row: usize, out_row: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ff = g.f * g.f;
    let (c, pq) = (row / ff, row % ff);
    let (p, q) = (pq / g.f, pq % g.f);
    let in_len = g.c_in * g.h * g.w;
    for b in 0..batch {
        let plane = &x[b * in_len + c * g.h * g.w..b * in_len + (c + 1) * g.h * g.w];
        for oi in 0..oh {
            let i = (oi * g.stride + p) as isize - g.padding as isize;
            if i < 0 || i >= g.h as isize {
                continue;
            }
            let src = &plane[i as usize * g.w..(i as usize + 1) * g.w];
            let dst = &mut out_row[b * oh * ow + oi * ow..b * oh * ow + (oi + 1) * ow];
            for oj in 0..ow {
                let j = (oj * g.stride + q) as isize - g.padding as isize;
                if j >= 0 && j < g.w as isize {
                    dst[oj] = src[j as usize];
                }
            }
        }
    }
}

/// Adjoint of [`im2col_item`]: accumulate one column block back into an image.
fn col2im_item<T: Scalar>(g: &ConvGeom, cols: &[T], col_base: usize, ld: usize, x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for p in 0..g.f {
            for q in 0..g.f {
                let row = (c * g.f + p) * g.f + q;
                for oi in 0..oh {
                    let i = (oi * g.stride + p) as isize - g.padding as isize;
                    if i < 0 || i >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[i as usize * g.w..(i as usize + 1) * g.w];
                    let src_base = row * ld + col_base + oi * ow;
                    for oj in 0..ow {
                        let j = (oj * g.stride + q) as isize - g.padding as isize;
                        if j >= 0 && j < g.w as isize {
                            dst[j as usize] = dst[j as usize] + cols[src_base + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Run `f(item, out_chunk)` over disjoint equally sized output chunks.
fn for_each_item<T, F>(out: &mut [T], item_len: usize, batch: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_exact_mut(item_len)
            .take(batch)
            .enumerate()
            .for_each(|(b, chunk)| f(b, chunk));
        return;
    }
    #[allow(unreachable_code)]
    for (b, chunk) in out.chunks_exact_mut(item_len).take(batch).enumerate() {
        let _ = &f;
        f(b, chunk);
    }
}

/// Whole-batch im2col: `x [B, C_in, H, W]` → `cols [K × (B·oh·ow)]`,
/// parallel over the K disjoint rows.
fn im2col_batch<T: Scalar>(g: &ConvGeom, batch: usize, x: &[T]) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let (k, ohw) = (g.col_rows(), oh * ow);
    let ld = batch * ohw;
    let mut cols = vec![T::zero(); k * ld];
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cols.par_chunks_exact_mut(ld)
            .take(k)
            .enumerate()
            .for_each(|(row, out_row)| im2col_row(g, batch, x, row, out_row));
        return cols;
    }
    #[allow(unreachable_code)]
    {
        for (row, out_row) in cols.chunks_exact_mut(ld).take(k).enumerate() {
            im2col_row(g, batch, x, row, out_row);
        }
        cols
    }
}

/// `[B, C, S]` → `[C, B·S]` (and back with `invert = true`).
fn permute_bcs<T: Scalar>(src: &[T], batch: usize, channels: usize, s: usize, invert: bool) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    let ld = batch * s;
    if invert {
        // src [C, B·S] → dst [B, C, S]
        for_each_item(&mut dst, channels * s, batch, |b, chunk| {
            for c in 0..channels {
                let row = &src[c * ld + b * s..c * ld + (b + 1) * s];
                chunk[c * s..(c + 1) * s].copy_from_slice(row);
            }
        });
    } else {
        // src [B, C, S] → dst [C, B·S]; chunk over C rows of length B·S
        // (each row gathers from all items; rows are disjoint)
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            dst.par_chunks_exact_mut(ld).enumerate().for_each(|(c, row)| {
                for b in 0..batch {
                    let item = &src[(b * channels + c) * s..(b * channels + c + 1) * s];
                    row[b * s..(b + 1) * s].copy_from_slice(item);
                }
            });
            return dst;
        }
        #[allow(unreachable_code)]
        for (c, row) in dst.chunks_exact_mut(ld).enumerate() {
            for b in 0..batch {
                let item = &src[(b * channels + c) * s..(b * channels + c + 1) * s];
                row[b * s..(b + 1) * s].copy_from_slice(item);
            }
        }
    }
    dst
}

/// Batched convolution forward: `x [B,C_in,H,W]` ⊛ `filters [C_out,C_in,f,f]`
/// → `out [B,C_out,H',W']` (cross-correlation, zero padding, no bias).
pub fn conv_fwd<T: Scalar>(g: &ConvGeom, batch: usize, x: &[T], filters: &[T], out: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    let cols = im2col_batch(g, batch, x);
    let mut tmp = vec![T::zero(); g.c_out * batch * ohw];
    mm_nn(g.c_out, g.col_rows(), batch * ohw, filters, &cols, T::zero(), &mut tmp);
    let permuted = permute_bcs(&tmp, batch, g.c_out, ohw, true);
    out[..permuted.len()].copy_from_slice(&permuted);
}

/// Gradient of a batched convolution with respect to its input.
pub fn conv_dinput<T: Scalar>(g: &ConvGeom, batch: usize, d_out: &[T], filters: &[T], d_x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    let dop = permute_bcs(d_out, batch, g.c_out, ohw, false);
    let k = g.col_rows();
    let ld = batch * ohw;
    let mut d_cols = vec![T::zero(); k * ld];
    mm_tn(k, g.c_out, ld, filters, &dop, T::zero(), &mut d_cols);
    let in_len = g.c_in * g.h * g.w;
    d_x.iter_mut().for_each(|v| *v = T::zero());
    for_each_item(d_x, in_len, batch, |b, chunk| {
        col2im_item(g, &d_cols, b * ohw, ld, chunk);
    });
}

/// Gradient of a batched convolution with respect to its filters: a single
/// whole-batch GEMM, so the summation order over items is fixed.
pub fn conv_dfilters<T: Scalar>(g: &ConvGeom, batch: usize, x: &[T], d_out: &[T], d_filters: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ohw = oh * ow;
    let cols = im2col_batch(g, batch, x);
    let dop = permute_bcs(d_out, batch, g.c_out, ohw, false);
    let ld = batch * ohw;
    // dF [C_out × K] = dOut [C_out × B·OHW] · cols^T
    T::gemm(
        g.c_out,
        ld,
        g.col_rows(),
        T::one(),
        &dop,
        ld as isize,
        1,
        &cols,
        1,
        ld as isize,
        T::zero(),
        d_filters,
        g.col_rows() as isize,
        1,
    );
}

/// Sequential kernel bodies (identical arithmetic, no thread pool). These are
/// the fallback bodies and the baseline side of the criterion benches.
pub mod seq {
    use super::*;

    fn im2col_seq<T: Scalar>(g: &ConvGeom, batch: usize, x: &[T]) -> Vec<T> {
        let ld = batch * g.out_h() * g.out_w();
        let k = g.col_rows();
        let mut cols = vec![T::zero(); k * ld];
        for (row, out_row) in cols.chunks_exact_mut(ld).take(k).enumerate() {
            im2col_row(g, batch, x, row, out_row);
        }
        cols
    }

    fn permute_seq<T: Scalar>(src: &[T], batch: usize, channels: usize, s: usize, invert: bool) -> Vec<T> {
        let mut dst = vec![T::zero(); src.len()];
        let ld = batch * s;
        for b in 0..batch {
            for c in 0..channels {
                if invert {
                    let row = &src[c * ld + b * s..c * ld + (b + 1) * s];
                    dst[(b * channels + c) * s..(b * channels + c + 1) * s].copy_from_slice(row);
                } else {
                    let item = &src[(b * channels + c) * s..(b * channels + c + 1) * s];
                    dst[c * ld + b * s..c * ld + (b + 1) * s].copy_from_slice(item);
                }
            }
        }
        dst
    }

    pub fn conv_fwd<T: Scalar>(g: &ConvGeom, batch: usize, x: &[T], filters: &[T], out: &mut [T]) {
        let ohw = g.out_h() * g.out_w();
        let cols = im2col_seq(g, batch, x);
        let mut tmp = vec![T::zero(); g.c_out * batch * ohw];
        mm_nn(g.c_out, g.col_rows(), batch * ohw, filters, &cols, T::zero(), &mut tmp);
        let permuted = permute_seq(&tmp, batch, g.c_out, ohw, true);
        out[..permuted.len()].copy_from_slice(&permuted);
    }

    pub fn conv_dinput<T: Scalar>(
        g: &ConvGeom,
        batch: usize,
        d_out: &[T],
        filters: &[T],
        d_x: &mut [T],
    ) {
        let ohw = g.out_h() * g.out_w();
        let ld = batch * ohw;
        let dop = permute_seq(d_out, batch, g.c_out, ohw, false);
        let k = g.col_rows();
        let mut d_cols = vec![T::zero(); k * ld];
        mm_tn(k, g.c_out, ld, filters, &dop, T::zero(), &mut d_cols);
        let in_len = g.c_in * g.h * g.w;
        d_x.iter_mut().for_each(|v| *v = T::zero());
        for (b, chunk) in d_x.chunks_exact_mut(in_len).take(batch).enumerate() {
            col2im_item(g, &d_cols, b * ohw, ld, chunk);
        }
    }

    pub fn conv_dfilters<T: Scalar>(
        g: &ConvGeom,
        batch: usize,
        x: &[T],
        d_out: &[T],
        d_filters: &mut [T],
    ) {
        let ohw = g.out_h() * g.out_w();
        let ld = batch * ohw;
        let cols = im2col_seq(g, batch, x);
        let dop = permute_seq(d_out, batch, g.c_out, ohw, false);
        T::gemm(
            g.c_out,
            ld,
            g.col_rows(),
            T::one(),
            &dop,
            ld as isize,
            1,
            &cols,
            1,
            ld as isize,
            T::zero(),
            d_filters,
            g.col_rows() as isize,
            1,
        );
    }
}

/// Swap the two leading axes of a `[A,B,f,f]` filter block into `[B,A,f,f]`.
///
/// A transposed convolution with filters `[C_out,C_in,f,f]` is exactly the
/// adjoint of the convolution whose filters are the swapped block, which is
/// how the three transposed-convolution passes reuse the kernels above.
pub fn swap01<T: Scalar>(filters: &[T], a: usize, b: usize, f: usize) -> Vec<T> {
    let ff = f * f;
    let mut out = vec![T::zero(); filters.len()];
    for i in 0..a {
        for j in 0..b {
            let src = &filters[(i * b + j) * ff..(i * b + j + 1) * ff];
            out[(j * a + i) * ff..(j * a + i + 1) * ff].copy_from_slice(src);
        }
    }
    out
}

/// Geometry of the convolution adjoint to a transposed convolution with
/// input `[c_in, h, w]` and filters `[c_out, c_in, f, f]`.
pub fn convt_adjoint_geom(
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    f: usize,
    stride: usize,
    padding: usize,
) -> ConvGeom {
    let out_h = (h - 1) * stride + f - 2 * padding;
    let out_w = (w - 1) * stride + f - 2 * padding;
    ConvGeom { c_in: c_out, h: out_h, w: out_w, c_out: c_in, f, stride, padding }
}

/// Per-channel batch statistics over `[B,C,spatial]`, accumulated in `f64`.
/// Returns `(mean, biased_variance)` per channel.
pub fn channel_stats<T: Scalar>(x: &[T], batch: usize, channels: usize, spatial: usize) -> (Vec<f64>, Vec<f64>) {
    let count = (batch * spatial) as f64;
    let mut mean = vec![0.0f64; channels];
    let mut var = vec![0.0f64; channels];
    for c in 0..channels {
        let mut s = 0.0f64;
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in 0..spatial {
                s += x[base + i].to_f64_c();
            }
        }
        mean[c] = s / count;
        let mut v = 0.0f64;
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in 0..spatial {
                let d = x[base + i].to_f64_c() - mean[c];
                v += d * d;
            }
        }
        var[c] = v / count;
    }
    (mean, var)
}
