//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied during a forward pass and owns
//! the intermediate buffers. [`Tape::backward`] replays the record once in
//! reverse, accumulating vector-Jacobian products into every node that can
//! reach a trainable leaf. Tapes are rebuilt each forward pass and confined
//! to one thread; independent tapes may run in parallel.

use super::kernels::{self, ConvGeom};
use super::scalar::{mm_nn, mm_tn, mm_nt, Scalar};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Id(usize);

/// Componentwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Relu,
    /// Slope 0.2 on the negative side.
    LeakyRelu,
    Tanh,
    Selu,
    Sigmoid,
    Square,
    Log,
    Exp,
    Softplus,
    /// Pass-through, for harnesses that bypass a nonlinearity.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;
const LEAKY_SLOPE: f64 = 0.2;

/// Distances below this are clamped before taking logarithms; the clamp is
/// treated as flat for gradients.
pub const DIST_FLOOR: f64 = 1e-12;

enum Op<T: Scalar> {
    Leaf,
    Matmul { a: Id, b: Id },
    /// `a · b^T` with `b` stored `[n×k]`.
    MatmulTB { a: Id, b: Id },
    Conv1d { u: Id, f: Id },
    Conv2d { x: Id, f: Id, geom: ConvGeom },
    ConvT2d { x: Id, f: Id, geom: ConvGeom },
    BiasRow { x: Id, b: Id },
    BiasChan { x: Id, b: Id },
    Elem { x: Id, kind: ElemKind },
    Add { a: Id, b: Id },
    Sub { a: Id, b: Id },
    Mul { a: Id, b: Id },
    Scale { x: Id, c: T },
    AddScalar { x: Id },
    Reduce { x: Id, kind: ReduceKind, axis: Option<usize> },
    Reshape { x: Id },
    Gather { x: Id, cols: Vec<usize> },
    BnTrain { x: Id, gamma: Id, beta: Id, xhat: Vec<T>, inv_std: Vec<f64> },
    ChanAffine { x: Id, scale: Vec<f64> },
    ChanMulAdd { x: Id, gamma: Id, beta: Id },
    LogKthDist { x: Id, neighbors: Vec<usize>, rho: Vec<f64> },
}

struct Node<T: Scalar> {
    dims: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
    needs_grad: bool,
    op: Op<T>,
}

/// Recorded forward pass.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    /// Number of k-th neighbor distances clamped to [`DIST_FLOOR`] so far.
    pub floored_distances: usize,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), floored_distances: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, dims: Vec<usize>, data: Vec<T>, needs_grad: bool, op: Op<T>) -> Id {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        self.nodes.push(Node { dims, data, grad: None, needs_grad, op });
        Id(self.nodes.len() - 1)
    }

    fn needs(&self, id: Id) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn dims(&self, id: Id) -> &[usize] {
        &self.nodes[id.0].dims
    }

    pub fn value(&self, id: Id) -> &[T] {
        &self.nodes[id.0].data
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, id: Id) -> Result<f64> {
        let n = &self.nodes[id.0];
        if n.data.len() != 1 {
            return Err(Error::usage(format!("expected scalar node, got dims {:?}", n.dims)));
        }
        Ok(n.data[0].to_f64_c())
    }

    /// Gradient of a node, if any flowed to it during the last backward pass.
    pub fn grad(&self, id: Id) -> Option<&[T]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradient of a node, zeros when nothing flowed to it.
    pub fn grad_or_zeros(&self, id: Id) -> Vec<T> {
        match self.nodes[id.0].grad.as_deref() {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); self.nodes[id.0].data.len()],
        }
    }

    // ── Leaves ───────────────────────────────────────────────────────────

    /// Register a tensor as a leaf; it participates in gradients iff
    /// `requires_grad` is set on the tensor.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Id {
        self.push(t.dims().to_vec(), t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Leaf that never receives gradients.
    pub fn leaf_const(&mut self, dims: Vec<usize>, data: Vec<T>) -> Result<Id> {
        let len: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) || data.len() != len {
            return Err(Error::shape(format!("leaf dims {dims:?} vs data length {}", data.len())));
        }
        Ok(self.push(dims, data, false, Op::Leaf))
    }

    /// Leaf registered with an explicit gradient flag, regardless of the
    /// tensor's own setting (used to freeze networks).
    pub fn leaf_with_grad(&mut self, t: &Tensor<T>, needs_grad: bool) -> Id {
        self.push(t.dims().to_vec(), t.data().to_vec(), needs_grad, Op::Leaf)
    }

    // ── Primitives ───────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Id, b: Id) -> Result<Id> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da.len() != 2 || db.len() != 2 || da[1] != db[0] {
            return Err(Error::shape(format!("matmul {da:?} · {db:?}")));
        }
        let (m, k, n) = (da[0], da[1], db[1]);
        let mut out = vec![T::zero(); m * n];
        mm_nn(m, k, n, self.value(a), self.value(b), T::zero(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, needs, Op::Matmul { a, b }))
    }

    /// `a · b^T` where `b` is stored `[n×k]`; the layout used by linear layers.
    pub fn matmul_tb(&mut self, a: Id, b: Id) -> Result<Id> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da.len() != 2 || db.len() != 2 || da[1] != db[1] {
            return Err(Error::shape(format!("matmul_tb {da:?} · {db:?}^T")));
        }
        let (m, k, n) = (da[0], da[1], db[0]);
        let mut out = vec![T::zero(); m * n];
        mm_nt(m, k, n, self.value(a), self.value(b), T::zero(), &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, needs, Op::MatmulTB { a, b }))
    }

    /// Valid 1-D cross-correlation, stride 1: `v_i = Σ_j u_{i+j} f_j`.
    pub fn conv1d_valid(&mut self, u: Id, f: Id) -> Result<Id> {
        let (du, df) = (self.dims(u), self.dims(f));
        if du.len() != 1 || df.len() != 1 {
            return Err(Error::shape(format!("conv1d expects vectors, got {du:?}, {df:?}")));
        }
        let (n, flen) = (du[0], df[0]);
        if flen > n {
            return Err(Error::shape(format!("conv1d filter length {flen} exceeds input {n}")));
        }
        let out_len = n - flen + 1;
        let mut out = vec![T::zero(); out_len];
        for i in 0..out_len {
            let mut acc = T::zero();
            for j in 0..flen {
                acc = acc + self.value(u)[i + j] * self.value(f)[j];
            }
            out[i] = acc;
        }
        let needs = self.needs(u) || self.needs(f);
        Ok(self.push(vec![out_len], out, needs, Op::Conv1d { u, f }))
    }

    /// Batched 2-D cross-correlation: `x [B,C_in,H,W]` with
    /// `filters [C_out,C_in,f,f]`, zero padding. Bias is a separate op.
    pub fn conv2d(&mut self, x: Id, f: Id, stride: usize, padding: usize) -> Result<Id> {
        let (dx, df) = (self.dims(x), self.dims(f));
        if dx.len() != 4 || df.len() != 4 || df[2] != df[3] {
            return Err(Error::shape(format!("conv2d input {dx:?} filters {df:?}")));
        }
        if dx[1] != df[1] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input {dx:?} vs filters {df:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::usage("conv2d stride must be >= 1"));
        }
        let geom = ConvGeom {
            c_in: dx[1],
            h: dx[2],
            w: dx[3],
            c_out: df[0],
            f: df[2],
            stride,
            padding,
        };
        if geom.h + 2 * padding < geom.f || geom.w + 2 * padding < geom.f {
            return Err(Error::shape(format!(
                "conv2d output would be empty: input {dx:?}, filter {}, stride {stride}, padding {padding}",
                geom.f
            )));
        }
        let batch = dx[0];
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let mut out = vec![T::zero(); batch * geom.c_out * oh * ow];
        kernels::conv_fwd(&geom, batch, self.value(x), self.value(f), &mut out);
        let needs = self.needs(x) || self.needs(f);
        Ok(self.push(vec![batch, geom.c_out, oh, ow], out, needs, Op::Conv2d { x, f, geom }))
    }

    /// Batched transposed convolution: exactly the adjoint of the matching
    /// [`Tape::conv2d`]. `filters [C_out,C_in,f,f]` with `C_in` the input
    /// channel count of *this* op; output size `(H−1)·stride − 2·padding + f`.
    pub fn conv_transpose2d(&mut self, x: Id, f: Id, stride: usize, padding: usize) -> Result<Id> {
        let (dx, df) = (self.dims(x), self.dims(f));
        if dx.len() != 4 || df.len() != 4 || df[2] != df[3] {
            return Err(Error::shape(format!("conv_transpose2d input {dx:?} filters {df:?}")));
        }
        if dx[1] != df[1] {
            return Err(Error::shape(format!(
                "conv_transpose2d channel mismatch: input {dx:?} vs filters {df:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::usage("conv_transpose2d stride must be >= 1"));
        }
        let fsz = df[2];
        if (dx[2] - 1) * stride + fsz < 2 * padding + 1 || (dx[3] - 1) * stride + fsz < 2 * padding + 1 {
            return Err(Error::shape(format!(
                "conv_transpose2d geometry inconsistent: input {dx:?}, filter {fsz}, stride {stride}, padding {padding}"
            )));
        }
        let geom = kernels::convt_adjoint_geom(dx[1], dx[2], dx[3], df[0], fsz, stride, padding);
        let batch = dx[0];
        let swapped = kernels::swap01(self.value(f), df[0], df[1], fsz);
        let mut out = vec![T::zero(); batch * df[0] * geom.h * geom.w];
        kernels::conv_dinput(&geom, batch, self.value(x), &swapped, &mut out);
        let needs = self.needs(x) || self.needs(f);
        Ok(self.push(vec![batch, df[0], geom.h, geom.w], out, needs, Op::ConvT2d { x, f, geom }))
    }

    /// `x [B,n] + bias [n]`, broadcast over rows.
    pub fn bias_row(&mut self, x: Id, b: Id) -> Result<Id> {
        let (dx, db) = (self.dims(x), self.dims(b));
        if dx.len() != 2 || db.len() != 1 || dx[1] != db[0] {
            return Err(Error::shape(format!("bias_row {dx:?} + {db:?}")));
        }
        let (rows, n) = (dx[0], dx[1]);
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            for j in 0..n {
                out[r * n + j] = out[r * n + j] + self.value(b)[j];
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(dx.to_vec(), out, needs, Op::BiasRow { x, b }))
    }

    /// `x [B,C,...] + bias [C]`, broadcast per channel.
    pub fn bias_chan(&mut self, x: Id, b: Id) -> Result<Id> {
        let (dx, db) = (self.dims(x), self.dims(b));
        if dx.len() < 2 || db.len() != 1 || dx[1] != db[0] {
            return Err(Error::shape(format!("bias_chan {dx:?} + {db:?}")));
        }
        let (batch, c) = (dx[0], dx[1]);
        let spatial: usize = dx[2..].iter().product();
        let mut out = self.value(x).to_vec();
        for bi in 0..batch {
            for ci in 0..c {
                let base = (bi * c + ci) * spatial;
                let bv = self.value(b)[ci];
                for s in 0..spatial {
                    out[base + s] = out[base + s] + bv;
                }
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(dx.to_vec(), out, needs, Op::BiasChan { x, b }))
    }

    pub fn elem(&mut self, x: Id, kind: ElemKind) -> Result<Id> {
        if kind == ElemKind::Log && self.value(x).iter().any(|&v| !(v > T::zero())) {
            return Err(Error::domain("log of nonpositive entry"));
        }
        let out: Vec<T> = self.value(x).iter().map(|&v| elem_fwd(v, kind)).collect();
        let needs = self.needs(x);
        Ok(self.push(self.dims(x).to_vec(), out, needs, Op::Elem { x, kind }))
    }

    pub fn add(&mut self, a: Id, b: Id) -> Result<Id> {
        self.binary(a, b, Op::Add { a, b }, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Result<Id> {
        self.binary(a, b, Op::Sub { a, b }, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Result<Id> {
        self.binary(a, b, Op::Mul { a, b }, |x, y| x * y)
    }

    fn binary(&mut self, a: Id, b: Id, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Id> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::shape(format!(
                "elementwise op on {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        let out: Vec<T> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.dims(a).to_vec(), out, needs, op))
    }

    pub fn scale(&mut self, x: Id, c: T) -> Result<Id> {
        let out: Vec<T> = self.value(x).iter().map(|&v| v * c).collect();
        let needs = self.needs(x);
        Ok(self.push(self.dims(x).to_vec(), out, needs, Op::Scale { x, c }))
    }

    pub fn add_scalar(&mut self, x: Id, c: T) -> Result<Id> {
        let out: Vec<T> = self.value(x).iter().map(|&v| v + c).collect();
        let needs = self.needs(x);
        Ok(self.push(self.dims(x).to_vec(), out, needs, Op::AddScalar { x }))
    }

    /// Add a per-element constant vector (no gradient through `c`).
    pub fn add_const(&mut self, x: Id, c: &[T]) -> Result<Id> {
        let cid = self.leaf_const(self.dims(x).to_vec(), c.to_vec())?;
        self.add(x, cid)
    }

    /// Sum or mean over one axis (`Some`) or all elements (`None`).
    /// Accumulation runs in `f64` regardless of `T`.
    pub fn reduce(&mut self, x: Id, kind: ReduceKind, axis: Option<usize>) -> Result<Id> {
        let dx = self.dims(x).to_vec();
        let (out_dims, outer, mid, inner) = match axis {
            None => (vec![1], 1usize, self.value(x).len(), 1usize),
            Some(ax) => {
                if ax >= dx.len() {
                    return Err(Error::shape(format!("reduce axis {ax} out of rank {}", dx.len())));
                }
                let outer: usize = dx[..ax].iter().product();
                let inner: usize = dx[ax + 1..].iter().product();
                let mut od: Vec<usize> =
                    dx.iter().enumerate().filter(|&(i, _)| i != ax).map(|(_, &d)| d).collect();
                if od.is_empty() {
                    od.push(1);
                }
                (od, outer, dx[ax], inner)
            }
        };
        let xs = self.value(x);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0f64;
                for m in 0..mid {
                    acc += xs[(o * mid + m) * inner + i].to_f64_c();
                }
                if kind == ReduceKind::Mean {
                    acc /= mid as f64;
                }
                out[o * inner + i] = T::from_f64_c(acc);
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out_dims, out, needs, Op::Reduce { x, kind, axis }))
    }

    pub fn reduce_sum_all(&mut self, x: Id) -> Result<Id> {
        self.reduce(x, ReduceKind::Sum, None)
    }

    pub fn reduce_mean_all(&mut self, x: Id) -> Result<Id> {
        self.reduce(x, ReduceKind::Mean, None)
    }

    pub fn reshape(&mut self, x: Id, dims: Vec<usize>) -> Result<Id> {
        let len: usize = dims.iter().product();
        if dims.is_empty() || dims.contains(&0) || len != self.value(x).len() {
            return Err(Error::shape(format!(
                "reshape {:?} (len {}) to {dims:?}",
                self.dims(x),
                self.value(x).len()
            )));
        }
        let data = self.value(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(dims, data, needs, Op::Reshape { x }))
    }

    /// Pick columns of a `[B,n]` node: `out[b,k] = x[b, cols[k]]`.
    pub fn gather_cols(&mut self, x: Id, cols: Vec<usize>) -> Result<Id> {
        let dx = self.dims(x);
        if dx.len() != 2 {
            return Err(Error::shape(format!("gather_cols expects rank-2 input, got {dx:?}")));
        }
        let (batch, n) = (dx[0], dx[1]);
        if cols.is_empty() {
            return Err(Error::usage("gather_cols needs at least one column"));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::usage(format!("gather column {bad} out of range {n}")));
        }
        let xs = self.value(x);
        let k = cols.len();
        let mut out = vec![T::zero(); batch * k];
        for b in 0..batch {
            for (j, &c) in cols.iter().enumerate() {
                out[b * k + j] = xs[b * n + c];
            }
        }
        let needs = self.needs(x);
        Ok(self.push(vec![batch, k], out, needs, Op::Gather { x, cols }))
    }

    /// Training-mode batch normalization over `[B,C,...]`. Returns the output
    /// node plus the per-channel batch mean and biased variance so the layer
    /// can refresh its running statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Id,
        gamma: Id,
        beta: Id,
        eps: f64,
    ) -> Result<(Id, Vec<f64>, Vec<f64>)> {
        let dx = self.dims(x).to_vec();
        if dx.len() < 2 {
            return Err(Error::shape(format!("batchnorm expects rank >= 2, got {dx:?}")));
        }
        let (batch, c) = (dx[0], dx[1]);
        if batch < 2 {
            return Err(Error::usage("batchnorm train mode requires batch size >= 2"));
        }
        let spatial: usize = dx[2..].iter().product();
        if self.dims(gamma) != [c] || self.dims(beta) != [c] {
            return Err(Error::shape(format!(
                "batchnorm gamma/beta must be [{c}], got {:?}/{:?}",
                self.dims(gamma),
                self.dims(beta)
            )));
        }
        let (mean, var) = kernels::channel_stats(self.value(x), batch, c, spatial);
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let xs = self.value(x);
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        let gs = self.value(gamma);
        let bs = self.value(beta);
        for b in 0..batch {
            for ci in 0..c {
                let base = (b * c + ci) * spatial;
                for s in 0..spatial {
                    let xh = (xs[base + s].to_f64_c() - mean[ci]) * inv_std[ci];
                    xhat[base + s] = T::from_f64_c(xh);
                    out[base + s] = T::from_f64_c(xh) * gs[ci] + bs[ci];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let id = self.push(dx, out, needs, Op::BnTrain { x, gamma, beta, xhat, inv_std });
        Ok((id, mean, var))
    }

    /// Per-channel affine with constant coefficients:
    /// `y[b,c,s] = x[b,c,s]·scale[c] + shift[c]`.
    pub fn chan_affine(&mut self, x: Id, scale: Vec<f64>, shift: Vec<f64>) -> Result<Id> {
        let dx = self.dims(x).to_vec();
        if dx.len() < 2 || scale.len() != dx[1] || shift.len() != dx[1] {
            return Err(Error::shape(format!(
                "chan_affine on {dx:?} with {} coefficients",
                scale.len()
            )));
        }
        let (batch, c) = (dx[0], dx[1]);
        let spatial: usize = dx[2..].iter().product();
        let xs = self.value(x);
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..batch {
            for ci in 0..c {
                let base = (b * c + ci) * spatial;
                for s in 0..spatial {
                    out[base + s] = T::from_f64_c(xs[base + s].to_f64_c() * scale[ci] + shift[ci]);
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(dx, out, needs, Op::ChanAffine { x, scale }))
    }

    /// `y[b,c,s] = x[b,c,s]·gamma[c] + beta[c]` with gradients to all inputs.
    pub fn chan_mul_add(&mut self, x: Id, gamma: Id, beta: Id) -> Result<Id> {
        let dx = self.dims(x).to_vec();
        if dx.len() < 2 {
            return Err(Error::shape(format!("chan_mul_add expects rank >= 2, got {dx:?}")));
        }
        let c = dx[1];
        if self.dims(gamma) != [c] || self.dims(beta) != [c] {
            return Err(Error::shape("chan_mul_add gamma/beta shape"));
        }
        let (batch, spatial) = (dx[0], dx[2..].iter().product::<usize>());
        let xs = self.value(x);
        let gs = self.value(gamma);
        let bs = self.value(beta);
        let mut out = vec![T::zero(); xs.len()];
        for b in 0..batch {
            for ci in 0..c {
                let base = (b * c + ci) * spatial;
                for s in 0..spatial {
                    out[base + s] = xs[base + s] * gs[ci] + bs[ci];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(dx, out, needs, Op::ChanMulAdd { x, gamma, beta }))
    }

    /// `out[i] = log ρ_i` where `ρ_i` is the Euclidean distance from row `i`
    /// of `x [M,d]` to row `neighbors[i]`. The neighbor assignment is fixed;
    /// gradients flow through both endpoints of each distance. Distances
    /// below [`DIST_FLOOR`] are clamped (with the clamp flat for gradients)
    /// and counted in [`Tape::floored_distances`].
    pub fn log_kth_dist(&mut self, x: Id, neighbors: Vec<usize>) -> Result<Id> {
        let dx = self.dims(x);
        if dx.len() != 2 {
            return Err(Error::shape(format!("log_kth_dist expects [M,d], got {dx:?}")));
        }
        let (m, d) = (dx[0], dx[1]);
        if neighbors.len() != m || neighbors.iter().enumerate().any(|(i, &j)| j >= m || j == i) {
            return Err(Error::usage("invalid neighbor assignment"));
        }
        let xs = self.value(x);
        let mut rho = vec![0.0f64; m];
        let mut out = vec![T::zero(); m];
        let mut floored = 0usize;
        for i in 0..m {
            let j = neighbors[i];
            let mut acc = 0.0f64;
            for t in 0..d {
                let diff = xs[i * d + t].to_f64_c() - xs[j * d + t].to_f64_c();
                acc += diff * diff;
            }
            let mut r = acc.sqrt();
            if r < DIST_FLOOR {
                r = DIST_FLOOR;
                floored += 1;
            }
            rho[i] = r;
            out[i] = T::from_f64_c(r.ln());
        }
        self.floored_distances += floored;
        let needs = self.needs(x);
        Ok(self.push(vec![m], out, needs, Op::LogKthDist { x, neighbors, rho }))
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every leaf with gradient tracking
    /// that the loss depends on receives `∂loss/∂leaf`; gradients are reset
    /// at the start, so repeated calls from the same tape are idempotent.
    pub fn backward(&mut self, loss: Id) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar loss, got dims {:?}",
                self.nodes[loss.0].dims
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(()); // nothing trainable reaches the loss
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() {
                continue;
            }
            let g = self.nodes[idx].grad.take().expect("checked above");
            let contributions = self.vjp(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (id, delta) in contributions {
                self.accumulate(id, delta);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: Id, delta: Vec<T>) {
        let node = &mut self.nodes[id.0];
        debug_assert_eq!(delta.len(), node.data.len());
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(&delta) {
                    *gi = *gi + *di;
                }
            }
            None => node.grad = Some(delta),
        }
    }

    /// Vector-Jacobian products of node `idx` w.r.t. each differentiable input.
    fn vjp(&self, idx: usize, g: &[T]) -> Vec<(Id, Vec<T>)> {
        let node = &self.nodes[idx];
        let mut out: Vec<(Id, Vec<T>)> = Vec::new();
        let mut push = |id: Id, v: Vec<T>| out.push((id, v));
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (da, db) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k, n) = (da.dims[0], da.dims[1], db.dims[1]);
                if da.needs_grad {
                    let mut d_a = vec![T::zero(); m * k];
                    mm_nt(m, n, k, g, &db.data, T::zero(), &mut d_a);
                    push(*a, d_a);
                }
                if db.needs_grad {
                    let mut d_b = vec![T::zero(); k * n];
                    mm_tn(k, m, n, &da.data, g, T::zero(), &mut d_b);
                    push(*b, d_b);
                }
            }
            Op::MatmulTB { a, b } => {
                let (da, db) = (&self.nodes[a.0], &self.nodes[b.0]);
                let (m, k, n) = (da.dims[0], da.dims[1], db.dims[0]);
                if da.needs_grad {
                    let mut d_a = vec![T::zero(); m * k];
                    mm_nn(m, n, k, g, &db.data, T::zero(), &mut d_a);
                    push(*a, d_a);
                }
                if db.needs_grad {
                    let mut d_b = vec![T::zero(); n * k];
                    mm_tn(n, m, k, g, &da.data, T::zero(), &mut d_b);
                    push(*b, d_b);
                }
            }
            Op::Conv1d { u, f } => {
                let (du, df) = (&self.nodes[u.0], &self.nodes[f.0]);
                let flen = df.data.len();
                if du.needs_grad {
                    let mut d_u = vec![T::zero(); du.data.len()];
                    for i in 0..g.len() {
                        for j in 0..flen {
                            d_u[i + j] = d_u[i + j] + g[i] * df.data[j];
                        }
                    }
                    push(*u, d_u);
                }
                if df.needs_grad {
                    let mut d_f = vec![T::zero(); flen];
                    for (j, item) in d_f.iter_mut().enumerate() {
                        let mut acc = T::zero();
                        for i in 0..g.len() {
                            acc = acc + g[i] * du.data[i + j];
                        }
                        *item = acc;
                    }
                    push(*f, d_f);
                }
            }
            Op::Conv2d { x, f, geom } => {
                let (nx, nf) = (&self.nodes[x.0], &self.nodes[f.0]);
                let batch = nx.dims[0];
                if nx.needs_grad {
                    let mut d_x = vec![T::zero(); nx.data.len()];
                    kernels::conv_dinput(geom, batch, g, &nf.data, &mut d_x);
                    push(*x, d_x);
                }
                if nf.needs_grad {
                    let mut d_f = vec![T::zero(); nf.data.len()];
                    kernels::conv_dfilters(geom, batch, &nx.data, g, &mut d_f);
                    push(*f, d_f);
                }
            }
            Op::ConvT2d { x, f, geom } => {
                let (nx, nf) = (&self.nodes[x.0], &self.nodes[f.0]);
                let batch = nx.dims[0];
                let (c_out, c_in, fsz) = (nf.dims[0], nf.dims[1], nf.dims[2]);
                if nx.needs_grad {
                    let swapped = kernels::swap01(&nf.data, c_out, c_in, fsz);
                    let mut d_x = vec![T::zero(); nx.data.len()];
                    kernels::conv_fwd(geom, batch, g, &swapped, &mut d_x);
                    push(*x, d_x);
                }
                if nf.needs_grad {
                    let mut d_sw = vec![T::zero(); nf.data.len()];
                    kernels::conv_dfilters(geom, batch, g, &nx.data, &mut d_sw);
                    push(*f, kernels::swap01(&d_sw, c_in, c_out, fsz));
                }
            }
            Op::BiasRow { x, b } => {
                let (nx, nb) = (&self.nodes[x.0], &self.nodes[b.0]);
                let n = nb.data.len();
                if nx.needs_grad {
                    push(*x, g.to_vec());
                }
                if nb.needs_grad {
                    let rows = nx.dims[0];
                    let mut d_b = vec![T::zero(); n];
                    for r in 0..rows {
                        for (j, item) in d_b.iter_mut().enumerate() {
                            *item = *item + g[r * n + j];
                        }
                    }
                    push(*b, d_b);
                }
            }
            Op::BiasChan { x, b } => {
                let (nx, nb) = (&self.nodes[x.0], &self.nodes[b.0]);
                if nx.needs_grad {
                    push(*x, g.to_vec());
                }
                if nb.needs_grad {
                    let (batch, c) = (nx.dims[0], nx.dims[1]);
                    let spatial: usize = nx.dims[2..].iter().product();
                    let mut d_b = vec![T::zero(); c];
                    for bi in 0..batch {
                        for ci in 0..c {
                            let base = (bi * c + ci) * spatial;
                            let mut acc = T::zero();
                            for s in 0..spatial {
                                acc = acc + g[base + s];
                            }
                            d_b[ci] = d_b[ci] + acc;
                        }
                    }
                    push(*b, d_b);
                }
            }
            Op::Elem { x, kind } => {
                let nx = &self.nodes[x.0];
                if nx.needs_grad {
                    let d: Vec<T> = nx
                        .data
                        .iter()
                        .zip(&node.data)
                        .zip(g)
                        .map(|((&xv, &yv), &gv)| gv * elem_bwd(xv, yv, *kind))
                        .collect();
                    push(*x, d);
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a.0].needs_grad {
                    push(*a, g.to_vec());
                }
                if self.nodes[b.0].needs_grad {
                    push(*b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.nodes[a.0].needs_grad {
                    push(*a, g.to_vec());
                }
                if self.nodes[b.0].needs_grad {
                    push(*b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
                if na.needs_grad {
                    push(*a, g.iter().zip(&nb.data).map(|(&gv, &bv)| gv * bv).collect());
                }
                if nb.needs_grad {
                    push(*b, g.iter().zip(&na.data).map(|(&gv, &av)| gv * av).collect());
                }
            }
            Op::Scale { x, c } => {
                if self.nodes[x.0].needs_grad {
                    push(*x, g.iter().map(|&v| v * *c).collect());
                }
            }
            Op::AddScalar { x } => {
                if self.nodes[x.0].needs_grad {
                    push(*x, g.to_vec());
                }
            }
            Op::Reduce { x, kind, axis } => {
                let nx = &self.nodes[x.0];
                if nx.needs_grad {
                    let (outer, mid, inner) = match axis {
                        None => (1usize, nx.data.len(), 1usize),
                        Some(ax) => (
                            nx.dims[..*ax].iter().product(),
                            nx.dims[*ax],
                            nx.dims[*ax + 1..].iter().product(),
                        ),
                    };
                    let scale = match kind {
                        ReduceKind::Sum => T::one(),
                        ReduceKind::Mean => T::from_f64_c(1.0 / mid as f64),
                    };
                    let mut d = vec![T::zero(); nx.data.len()];
                    for o in 0..outer {
                        for m in 0..mid {
                            for i in 0..inner {
                                d[(o * mid + m) * inner + i] = g[o * inner + i] * scale;
                            }
                        }
                    }
                    push(*x, d);
                }
            }
            Op::Reshape { x } => {
                if self.nodes[x.0].needs_grad {
                    push(*x, g.to_vec());
                }
            }
            Op::Gather { x, cols } => {
                let nx = &self.nodes[x.0];
                if nx.needs_grad {
                    let (batch, n) = (nx.dims[0], nx.dims[1]);
                    let k = cols.len();
                    let mut d = vec![T::zero(); nx.data.len()];
                    for b in 0..batch {
                        for (j, &c) in cols.iter().enumerate() {
                            d[b * n + c] = d[b * n + c] + g[b * k + j];
                        }
                    }
                    push(*x, d);
                }
            }
            Op::BnTrain { x, gamma, beta, xhat, inv_std } => {
                let (nx, ng) = (&self.nodes[x.0], &self.nodes[gamma.0]);
                let (batch, c) = (nx.dims[0], nx.dims[1]);
                let spatial: usize = nx.dims[2..].iter().product();
                let count = (batch * spatial) as f64;
                // Per-channel sums of dy and dy·x̂, in f64.
                let mut sum_dy = vec![0.0f64; c];
                let mut sum_dy_xhat = vec![0.0f64; c];
                for b in 0..batch {
                    for ci in 0..c {
                        let base = (b * c + ci) * spatial;
                        for s in 0..spatial {
                            let gv = g[base + s].to_f64_c();
                            sum_dy[ci] += gv;
                            sum_dy_xhat[ci] += gv * xhat[base + s].to_f64_c();
                        }
                    }
                }
                if self.nodes[beta.0].needs_grad {
                    push(*beta, sum_dy.iter().map(|&v| T::from_f64_c(v)).collect());
                }
                if ng.needs_grad {
                    push(*gamma, sum_dy_xhat.iter().map(|&v| T::from_f64_c(v)).collect());
                }
                if nx.needs_grad {
                    let mut d = vec![T::zero(); nx.data.len()];
                    for b in 0..batch {
                        for ci in 0..c {
                            let base = (b * c + ci) * spatial;
                            let gam = ng.data[ci].to_f64_c();
                            let coef = gam * inv_std[ci];
                            for s in 0..spatial {
                                let gv = g[base + s].to_f64_c();
                                let xh = xhat[base + s].to_f64_c();
                                let v = coef
                                    * (gv - sum_dy[ci] / count - xh * sum_dy_xhat[ci] / count);
                                d[base + s] = T::from_f64_c(v);
                            }
                        }
                    }
                    push(*x, d);
                }
            }
            Op::ChanAffine { x, scale } => {
                let nx = &self.nodes[x.0];
                if nx.needs_grad {
                    let (batch, c) = (nx.dims[0], nx.dims[1]);
                    let spatial: usize = nx.dims[2..].iter().product();
                    let mut d = vec![T::zero(); nx.data.len()];
                    for b in 0..batch {
                        for ci in 0..c {
                            let base = (b * c + ci) * spatial;
                            let sc = T::from_f64_c(scale[ci]);
                            for s in 0..spatial {
                                d[base + s] = g[base + s] * sc;
                            }
                        }
                    }
                    push(*x, d);
                }
            }
            Op::ChanMulAdd { x, gamma, beta } => {
                let (nx, ng) = (&self.nodes[x.0], &self.nodes[gamma.0]);
                let (batch, c) = (nx.dims[0], nx.dims[1]);
                let spatial: usize = nx.dims[2..].iter().product();
                if nx.needs_grad {
                    let mut d = vec![T::zero(); nx.data.len()];
                    for b in 0..batch {
                        for ci in 0..c {
                            let base = (b * c + ci) * spatial;
                            for s in 0..spatial {
                                d[base + s] = g[base + s] * ng.data[ci];
                            }
                        }
                    }
                    push(*x, d);
                }
                if ng.needs_grad {
                    let mut d = vec![T::zero(); c];
                    for b in 0..batch {
                        for ci in 0..c {
                            let base = (b * c + ci) * spatial;
                            let mut acc = T::zero();
                            for s in 0..spatial {
                                acc = acc + g[base + s] * nx.data[base + s];
                            }
                            d[ci] = d[ci] + acc;
                        }
                    }
                    push(*gamma, d);
                }
                if self.nodes[beta.0].needs_grad {
                    let mut d = vec![T::zero(); c];
                    for b in 0..batch {
                        for ci in 0..c {
                            let base = (b * c + ci) * spatial;
                            let mut acc = T::zero();
                            for s in 0..spatial {
                                acc = acc + g[base + s];
                            }
                            d[ci] = d[ci] + acc;
                        }
                    }
                    push(*beta, d);
                }
            }
            Op::LogKthDist { x, neighbors, rho } => {
                let nx = &self.nodes[x.0];
                if nx.needs_grad {
                    let d = nx.dims[1];
                    let mut dx = vec![0.0f64; nx.data.len()];
                    for (i, &j) in neighbors.iter().enumerate() {
                        let r = rho[i];
                        // Clamped distances are flat: no gradient.
                        if r <= DIST_FLOOR {
                            continue;
                        }
                        let coef = g[i].to_f64_c() / (r * r);
                        for t in 0..d {
                            let diff =
                                nx.data[i * d + t].to_f64_c() - nx.data[j * d + t].to_f64_c();
                            dx[i * d + t] += coef * diff;
                            dx[j * d + t] -= coef * diff;
                        }
                    }
                    push(*x, dx.into_iter().map(T::from_f64_c).collect());
                }
            }
        }
        out
    }
}

fn elem_fwd<T: Scalar>(x: T, kind: ElemKind) -> T {
    let zero = T::zero();
    match kind {
        ElemKind::Relu => {
            if x > zero {
                x
            } else {
                zero
            }
        }
        ElemKind::LeakyRelu => {
            if x > zero {
                x
            } else {
                x * T::from_f64_c(LEAKY_SLOPE)
            }
        }
        ElemKind::Tanh => x.tanh(),
        ElemKind::Selu => {
            let lambda = T::from_f64_c(SELU_LAMBDA);
            if x > zero {
                lambda * x
            } else {
                lambda * T::from_f64_c(SELU_ALPHA) * (x.exp() - T::one())
            }
        }
        ElemKind::Sigmoid => {
            if x >= zero {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        }
        ElemKind::Square => x * x,
        ElemKind::Log => x.ln(),
        ElemKind::Exp => x.exp(),
        ElemKind::Softplus => {
            // max(x,0) + ln(1 + e^{-|x|})
            let m = if x > zero { x } else { zero };
            m + (T::one() + (-x.abs()).exp()).ln()
        }
        ElemKind::Identity => x,
    }
}

/// Derivative of `elem_fwd` given input `x` and output `y`.
fn elem_bwd<T: Scalar>(x: T, y: T, kind: ElemKind) -> T {
    let zero = T::zero();
    let one = T::one();
    match kind {
        ElemKind::Relu => {
            if x > zero {
                one
            } else {
                zero
            }
        }
        ElemKind::LeakyRelu => {
            if x > zero {
                one
            } else {
                T::from_f64_c(LEAKY_SLOPE)
            }
        }
        ElemKind::Tanh => one - y * y,
        ElemKind::Selu => {
            if x > zero {
                T::from_f64_c(SELU_LAMBDA)
            } else {
                // λα e^x = y + λα for x ≤ 0.
                y + T::from_f64_c(SELU_LAMBDA * SELU_ALPHA)
            }
        }
        ElemKind::Sigmoid => y * (one - y),
        ElemKind::Square => (one + one) * x,
        ElemKind::Log => one / x,
        ElemKind::Exp => y,
        ElemKind::Softplus => elem_fwd(x, ElemKind::Sigmoid),
        ElemKind::Identity => one,
    }
}
