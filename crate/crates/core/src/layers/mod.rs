//! Network building blocks and the three concrete architectures.
//!
//! The generator upsamples a latent vector through a stack of transposed
//! convolutions with batch normalization; the discriminator mirrors it with
//! strided convolutions; the inference network is a fully connected stack
//! with SeLU activations. All three are generic over the element type so
//! gradient checks can run the same graphs in `f64`.

mod checkpoint;

pub use checkpoint::{load_tensors, save_tensors};

use crate::autodiff::{ElemKind, Id, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Forward-pass mode; train mode engages batch statistics in normalization
/// layers and refreshes their running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Anything with named parameters and (optionally) named buffers.
///
/// `params()`, `params_mut()` and `param_names()` iterate in one fixed
/// order, which is also the order in which forward passes register leaves.
pub trait Network<T: Scalar> {
    fn param_names(&self) -> Vec<String>;
    fn params(&self) -> Vec<&Tensor<T>>;
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>>;

    /// Non-trainable state (running statistics).
    fn buffer_names(&self) -> Vec<String> {
        Vec::new()
    }
    fn buffers(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Gaussian init scale for weights.
const INIT_STD: f64 = 0.02;

/// Initialize a network in place: weights ~ N(0, 0.02²), biases and beta
/// zero, gamma one, running stats (0, 1). Deterministic given the seed, and
/// marks every parameter trainable.
pub fn init_parameters<T: Scalar, N: Network<T> + ?Sized>(net: &mut N, seed: u64) {
    let names = net.param_names();
    let mut stream = rng::stream(seed, "init");
    for (name, p) in names.iter().zip(net.params_mut()) {
        if name.ends_with(".gamma") {
            p.data_mut().iter_mut().for_each(|v| *v = T::one());
        } else if name.ends_with(".bias") || name.ends_with(".beta") {
            p.data_mut().iter_mut().for_each(|v| *v = T::zero());
        } else {
            for v in p.data_mut() {
                *v = T::from_f64_c(rng::normal_f64(&mut stream) * INIT_STD);
            }
        }
        p.set_requires_grad(true);
        p.clear_grad();
    }
    let buffer_names = net.buffer_names();
    for (name, b) in buffer_names.iter().zip(net.buffers_mut()) {
        let fill = if name.ends_with(".running_var") { T::one() } else { T::zero() };
        b.data_mut().iter_mut().for_each(|v| *v = fill);
    }
}

/// Accumulate the tape gradients of a forward pass into the network's
/// parameter `.grad` buffers. `ids` is the leaf list the forward returned.
pub fn pull_grads<T: Scalar, N: Network<T> + ?Sized>(
    net: &mut N,
    tape: &Tape<T>,
    ids: &[Id],
) -> Result<()> {
    let mut params = net.params_mut();
    if params.len() != ids.len() {
        return Err(Error::usage(format!(
            "parameter/id count mismatch: {} vs {}",
            params.len(),
            ids.len()
        )));
    }
    for (p, &id) in params.iter_mut().zip(ids) {
        p.accumulate_grad(&tape.grad_or_zeros(id))?;
    }
    Ok(())
}

// ── Layers ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LinearLayer<T: Scalar> {
    /// `[out, in]`.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LinearLayer<T> {
    pub fn new(out_dim: usize, in_dim: usize) -> Self {
        LinearLayer { weight: Tensor::zeros(vec![out_dim, in_dim]), bias: Tensor::zeros(vec![out_dim]) }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Id, ids: &mut Vec<Id>, track: bool) -> Result<Id> {
        let w = tape.leaf_with_grad(&self.weight, track);
        ids.push(w);
        let b = tape.leaf_with_grad(&self.bias, track);
        ids.push(b);
        let y = tape.matmul_tb(x, w)?;
        tape.bias_row(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<T: Scalar> {
    /// `[C_out, C_in, f, f]`.
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(c_out: usize, c_in: usize, f: usize, stride: usize, padding: usize) -> Self {
        assert!(f >= 1 && stride >= 1);
        ConvLayer {
            filters: Tensor::zeros(vec![c_out, c_in, f, f]),
            bias: Tensor::zeros(vec![c_out]),
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Id, ids: &mut Vec<Id>, track: bool) -> Result<Id> {
        let f = tape.leaf_with_grad(&self.filters, track);
        ids.push(f);
        let b = tape.leaf_with_grad(&self.bias, track);
        ids.push(b);
        let y = tape.conv2d(x, f, self.stride, self.padding)?;
        tape.bias_chan(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTLayer<T: Scalar> {
    /// `[C_out, C_in, f, f]` where `C_out` is this layer's output channels.
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> ConvTLayer<T> {
    pub fn new(c_out: usize, c_in: usize, f: usize, stride: usize, padding: usize) -> Self {
        assert!(f >= 1 && stride >= 1);
        ConvTLayer {
            filters: Tensor::zeros(vec![c_out, c_in, f, f]),
            bias: Tensor::zeros(vec![c_out]),
            stride,
            padding,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Id, ids: &mut Vec<Id>, track: bool) -> Result<Id> {
        let f = tape.leaf_with_grad(&self.filters, track);
        ids.push(f);
        let b = tape.leaf_with_grad(&self.bias, track);
        ids.push(b);
        let y = tape.conv_transpose2d(x, f, self.stride, self.padding)?;
        tape.bias_chan(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormLayer<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNormLayer<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            gamma: Tensor::full(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: Id,
        ids: &mut Vec<Id>,
        track: bool,
        mode: Mode,
    ) -> Result<Id> {
        let g = tape.leaf_with_grad(&self.gamma, track);
        ids.push(g);
        let b = tape.leaf_with_grad(&self.beta, track);
        ids.push(b);
        match mode {
            Mode::Train => {
                let dims = tape.dims(x).to_vec();
                let count: usize = dims[0] * dims[2..].iter().product::<usize>();
                let (y, mean, var) = tape.batchnorm_train(x, g, b, self.eps)?;
                // Running estimates use the unbiased variance.
                let bessel = count as f64 / (count as f64 - 1.0);
                let mom = self.momentum;
                for (c, rm) in self.running_mean.data_mut().iter_mut().enumerate() {
                    *rm = T::from_f64_c(rm.to_f64_c() * (1.0 - mom) + mean[c] * mom);
                }
                for (c, rv) in self.running_var.data_mut().iter_mut().enumerate() {
                    *rv = T::from_f64_c(rv.to_f64_c() * (1.0 - mom) + var[c] * bessel * mom);
                }
                Ok(y)
            }
            Mode::Eval => {
                let scale: Vec<f64> = self
                    .running_var
                    .data()
                    .iter()
                    .map(|&v| 1.0 / (v.to_f64_c() + self.eps).sqrt())
                    .collect();
                let shift: Vec<f64> = self
                    .running_mean
                    .data()
                    .iter()
                    .zip(&scale)
                    .map(|(&m, &s)| -m.to_f64_c() * s)
                    .collect();
                let xh = tape.chan_affine(x, scale, shift)?;
                tape.chan_mul_add(xh, g, b)
            }
        }
    }
}

// ── Generator ────────────────────────────────────────────────────────────

struct GenBlock<T: Scalar> {
    convt: ConvTLayer<T>,
    bn: Option<BatchNormLayer<T>>,
    act: ElemKind,
}

/// Transposed-convolution generator mapping `[B, n_z]` latents to
/// `[B, 1, S, S]` images in `[-1, 1]`.
///
/// The stage widths double toward the latent end: with `base` channels in
/// the last hidden stage a 64×64 generator runs
/// `n_z×1×1 → 8b×4×4 → 4b×8×8 → 2b×16×16 → b×32×32 → 1×64×64`,
/// and a 32×32 one drops the first upsampling stage.
pub struct GeneratorNet<T: Scalar = f32> {
    n_z: usize,
    image_size: usize,
    base: usize,
    blocks: Vec<GenBlock<T>>,
}

impl<T: Scalar> GeneratorNet<T> {
    pub fn new(n_z: usize, image_size: usize, base: usize) -> Result<Self> {
        let stages = match image_size {
            64 => 4,
            32 => 3,
            _ => {
                return Err(Error::usage(format!(
                    "unsupported image size {image_size} (expected 32 or 64)"
                )))
            }
        };
        // Channel widths from the 4x4 stage down to the last hidden stage.
        let widths: Vec<usize> = (0..stages).map(|i| base << (stages - 1 - i)).collect();
        let mut blocks = Vec::new();
        blocks.push(GenBlock {
            convt: ConvTLayer::new(widths[0], n_z, 4, 1, 0),
            bn: Some(BatchNormLayer::new(widths[0])),
            act: ElemKind::Relu,
        });
        for i in 1..stages {
            blocks.push(GenBlock {
                convt: ConvTLayer::new(widths[i], widths[i - 1], 4, 2, 1),
                bn: Some(BatchNormLayer::new(widths[i])),
                act: ElemKind::Relu,
            });
        }
        blocks.push(GenBlock {
            convt: ConvTLayer::new(1, widths[stages - 1], 4, 2, 1),
            bn: None,
            act: ElemKind::Tanh,
        });
        Ok(GeneratorNet { n_z, image_size, base, blocks })
    }

    /// The architecture used throughout the original experiments:
    /// `R^30 → 1×64×64` with 512 channels at the 4×4 stage.
    pub fn paper() -> Self {
        GeneratorNet::new(30, 64, 64).expect("paper generator config is valid")
    }

    pub fn latent_dim(&self) -> usize {
        self.n_z
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn base_width(&self) -> usize {
        self.base
    }

    /// Forward a latent batch `[B, n_z]` to images `[B, 1, S, S]`. Leaf ids
    /// for the parameters (aligned with `params()`) are returned alongside;
    /// pass `track = false` to freeze the generator in a larger graph.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        z: Id,
        mode: Mode,
        track: bool,
    ) -> Result<(Id, Vec<Id>)> {
        let dims = tape.dims(z).to_vec();
        if dims.len() != 2 || dims[1] != self.n_z {
            return Err(Error::shape(format!(
                "generator expects [B, {}], got {dims:?}",
                self.n_z
            )));
        }
        let mut ids = Vec::new();
        let mut h = tape.reshape(z, vec![dims[0], self.n_z, 1, 1])?;
        for block in &mut self.blocks {
            h = block.convt.forward(tape, h, &mut ids, track)?;
            if let Some(bn) = &mut block.bn {
                h = bn.forward(tape, h, &mut ids, track, mode)?;
            }
            h = tape.elem(h, block.act)?;
        }
        Ok((h, ids))
    }

    /// Analytic parameter count of the architecture (filters + biases +
    /// gamma/beta), for consistency checks.
    pub fn analytic_param_count(&self) -> usize {
        let mut total = 0;
        for b in &self.blocks {
            total += b.convt.filters.len() + b.convt.bias.len();
            if let Some(bn) = &b.bn {
                total += bn.gamma.len() + bn.beta.len();
            }
        }
        total
    }
}

impl<T: Scalar> Network<T> for GeneratorNet<T> {
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            names.push(format!("g.block{i}.convt.filters"));
            names.push(format!("g.block{i}.convt.bias"));
            if b.bn.is_some() {
                names.push(format!("g.block{i}.bn.gamma"));
                names.push(format!("g.block{i}.bn.beta"));
            }
        }
        names
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.convt.filters);
            out.push(&b.convt.bias);
            if let Some(bn) = &b.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.convt.filters);
            out.push(&mut b.convt.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    fn buffer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if b.bn.is_some() {
                names.push(format!("g.block{i}.bn.running_mean"));
                names.push(format!("g.block{i}.bn.running_var"));
            }
        }
        names
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            if let Some(bn) = &b.bn {
                out.push(&bn.running_mean);
                out.push(&bn.running_var);
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }
}

// ── Discriminator ────────────────────────────────────────────────────────

/// Whether the discriminator is an unsquashed critic (no batch norm, as used
/// with weight clipping) or a classifier whose raw scores are probability
/// logits (batch norm after every strided conv but the first).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscKind {
    Critic,
    Classifier,
}

struct DiscBlock<T: Scalar> {
    conv: ConvLayer<T>,
    bn: Option<BatchNormLayer<T>>,
}

/// Strided-convolution mirror of the generator ending in a single raw score
/// per image. LeakyReLU(0.2) activations.
pub struct DiscriminatorNet<T: Scalar = f32> {
    image_size: usize,
    base: usize,
    kind: DiscKind,
    blocks: Vec<DiscBlock<T>>,
    final_conv: ConvLayer<T>,
}

impl<T: Scalar> DiscriminatorNet<T> {
    pub fn new(image_size: usize, base: usize, kind: DiscKind) -> Result<Self> {
        let stages = match image_size {
            64 => 4,
            32 => 3,
            _ => {
                return Err(Error::usage(format!(
                    "unsupported image size {image_size} (expected 32 or 64)"
                )))
            }
        };
        let widths: Vec<usize> = (0..stages).map(|i| base << i).collect();
        let mut blocks = Vec::new();
        blocks.push(DiscBlock { conv: ConvLayer::new(widths[0], 1, 4, 2, 1), bn: None });
        for i in 1..stages {
            let bn = match kind {
                DiscKind::Critic => None,
                DiscKind::Classifier => Some(BatchNormLayer::new(widths[i])),
            };
            blocks.push(DiscBlock { conv: ConvLayer::new(widths[i], widths[i - 1], 4, 2, 1), bn });
        }
        let final_conv = ConvLayer::new(1, widths[stages - 1], 4, 1, 0);
        Ok(DiscriminatorNet { image_size, base, kind, blocks, final_conv })
    }

    pub fn kind(&self) -> DiscKind {
        self.kind
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn base_width(&self) -> usize {
        self.base
    }

    /// Score a batch `[B, 1, S, S]`, producing raw per-sample scores `[B]`.
    pub fn forward(
        &mut self,
        tape: &mut Tape<T>,
        x: Id,
        mode: Mode,
        track: bool,
    ) -> Result<(Id, Vec<Id>)> {
        let dims = tape.dims(x).to_vec();
        if dims.len() != 4 || dims[1] != 1 || dims[2] != self.image_size || dims[3] != self.image_size {
            return Err(Error::shape(format!(
                "discriminator expects [B, 1, {s}, {s}], got {dims:?}",
                s = self.image_size
            )));
        }
        let batch = dims[0];
        let mut ids = Vec::new();
        let mut h = x;
        for block in &mut self.blocks {
            h = block.conv.forward(tape, h, &mut ids, track)?;
            if let Some(bn) = &mut block.bn {
                h = bn.forward(tape, h, &mut ids, track, mode)?;
            }
            h = tape.elem(h, ElemKind::LeakyRelu)?;
        }
        let out = self.final_conv.forward(tape, h, &mut ids, track)?;
        let scores = tape.reshape(out, vec![batch])?;
        Ok((scores, ids))
    }
}

impl<T: Scalar> Network<T> for DiscriminatorNet<T> {
    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            names.push(format!("d.block{i}.conv.filters"));
            names.push(format!("d.block{i}.conv.bias"));
            if b.bn.is_some() {
                names.push(format!("d.block{i}.bn.gamma"));
                names.push(format!("d.block{i}.bn.beta"));
            }
        }
        names.push("d.final.filters".into());
        names.push("d.final.bias".into());
        names
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.filters);
            out.push(&b.conv.bias);
            if let Some(bn) = &b.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out.push(&self.final_conv.filters);
        out.push(&self.final_conv.bias);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.filters);
            out.push(&mut b.conv.bias);
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.final_conv.filters);
        out.push(&mut self.final_conv.bias);
        out
    }

    fn buffer_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if b.bn.is_some() {
                names.push(format!("d.block{i}.bn.running_mean"));
                names.push(format!("d.block{i}.bn.running_var"));
            }
        }
        names
    }

    fn buffers(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            if let Some(bn) = &b.bn {
                out.push(&bn.running_mean);
                out.push(&bn.running_var);
            }
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            if let Some(bn) = &mut b.bn {
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
        }
        out
    }
}

// ── Inference network ────────────────────────────────────────────────────

/// Fully connected sampler network. The default geometry is
/// `30 → 512 → (five 512 → 512 layers) → 30` with SeLU activations
/// everywhere except the output layer.
pub struct InferenceNet<T: Scalar = f32> {
    n_in: usize,
    n_out: usize,
    layers: Vec<LinearLayer<T>>,
    act: ElemKind,
}

impl<T: Scalar> InferenceNet<T> {
    pub fn new(n_in: usize, n_out: usize, hidden: usize, intermediate: usize) -> Self {
        Self::with_activation(n_in, n_out, hidden, intermediate, ElemKind::Selu)
    }

    /// Same geometry with a different (or bypassed) nonlinearity; harnesses
    /// use [`ElemKind::Identity`] to validate the linear path.
    pub fn with_activation(
        n_in: usize,
        n_out: usize,
        hidden: usize,
        intermediate: usize,
        act: ElemKind,
    ) -> Self {
        let mut layers = Vec::with_capacity(intermediate + 2);
        layers.push(LinearLayer::new(hidden, n_in));
        for _ in 0..intermediate {
            layers.push(LinearLayer::new(hidden, hidden));
        }
        layers.push(LinearLayer::new(n_out, hidden));
        InferenceNet { n_in, n_out, layers, act }
    }

    /// The geometry used for all conditioning experiments.
    pub fn paper() -> Self {
        InferenceNet::new(30, 30, 512, 5)
    }

    pub fn input_dim(&self) -> usize {
        self.n_in
    }

    pub fn output_dim(&self) -> usize {
        self.n_out
    }

    /// Map `[B, n_in]` source vectors to `[B, n_out]` latents. No squashing
    /// on the output layer.
    pub fn forward(&self, tape: &mut Tape<T>, w: Id, track: bool) -> Result<(Id, Vec<Id>)> {
        let dims = tape.dims(w).to_vec();
        if dims.len() != 2 || dims[1] != self.n_in {
            return Err(Error::shape(format!(
                "inference net expects [B, {}], got {dims:?}",
                self.n_in
            )));
        }
        let mut ids = Vec::new();
        let mut h = w;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h, &mut ids, track)?;
            if i < last {
                h = tape.elem(h, self.act)?;
            }
        }
        Ok((h, ids))
    }
}

impl<T: Scalar> Network<T> for InferenceNet<T> {
    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("i.fc{i}.weight"), format!("i.fc{i}.bias")])
            .collect()
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

// ── Checkpoint round trips for the concrete networks ─────────────────────

fn named_tensors<T: Scalar, N: Network<T> + ?Sized>(net: &N) -> Vec<(String, Tensor<T>)> {
    let mut out: Vec<(String, Tensor<T>)> = Vec::new();
    for (name, p) in net.param_names().into_iter().zip(net.params()) {
        out.push((name, p.clone()));
    }
    for (name, b) in net.buffer_names().into_iter().zip(net.buffers()) {
        out.push((name, b.clone()));
    }
    out
}

/// Write a network's parameters and buffers to a checkpoint file.
pub fn save_network<N: Network<f32> + ?Sized>(net: &N, path: &std::path::Path) -> Result<()> {
    let tensors = named_tensors(net);
    let refs: Vec<(&str, &Tensor<f32>)> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    save_tensors(path, &refs)
}

/// Load a checkpoint into an existing network. Every stored tensor must
/// match a parameter or buffer by name and dimensions, and none may be
/// missing.
pub fn load_network<N: Network<f32> + ?Sized>(net: &mut N, path: &std::path::Path) -> Result<()> {
    let stored = load_tensors(path)?;
    let mut map: std::collections::HashMap<String, Tensor<f32>> = stored.into_iter().collect();

    fn fill(name: &str, dst: &mut Tensor<f32>, src: Tensor<f32>) -> Result<()> {
        if dst.dims() != src.dims() {
            return Err(Error::shape(format!(
                "checkpoint tensor `{name}` has dims {:?}, expected {:?}",
                src.dims(),
                dst.dims()
            )));
        }
        dst.data_mut().copy_from_slice(src.data());
        Ok(())
    }

    let param_names = net.param_names();
    for (name, p) in param_names.iter().zip(net.params_mut()) {
        let src = map
            .remove(name)
            .ok_or_else(|| Error::usage(format!("checkpoint is missing tensor `{name}`")))?;
        fill(name, p, src)?;
        p.set_requires_grad(true);
        p.clear_grad();
    }
    let buffer_names = net.buffer_names();
    for (name, b) in buffer_names.iter().zip(net.buffers_mut()) {
        let src = map
            .remove(name)
            .ok_or_else(|| Error::usage(format!("checkpoint is missing tensor `{name}`")))?;
        fill(name, b, src)?;
    }
    if let Some(extra) = map.keys().next() {
        return Err(Error::usage(format!("checkpoint has unexpected tensor `{extra}`")));
    }
    Ok(())
}

/// Rebuild a generator from a checkpoint, inferring `(n_z, image size, base
/// width)` from the stored tensor shapes.
pub fn generator_from_checkpoint(path: &std::path::Path) -> Result<GeneratorNet<f32>> {
    let stored = load_tensors(path)?;
    let find = |name: &str| -> Result<&Tensor<f32>> {
        stored
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::usage(format!("checkpoint is missing tensor `{name}`")))
    };
    let block0 = find("g.block0.convt.filters")?;
    let n_z = block0.dims()[1];
    let blocks = (0..)
        .take_while(|i| stored.iter().any(|(n, _)| n == &format!("g.block{i}.convt.filters")))
        .count();
    if blocks < 2 {
        return Err(Error::usage("checkpoint does not contain a generator"));
    }
    let image_size = 4usize << (blocks - 1);
    let last_hidden = find(&format!("g.block{}.convt.filters", blocks - 1))?;
    let base = last_hidden.dims()[1];
    let mut net = GeneratorNet::new(n_z, image_size, base)?;
    load_network(&mut net, path)?;
    Ok(net)
}

/// Rebuild a discriminator from a checkpoint; the kind is inferred from the
/// presence of batch-norm tensors.
pub fn discriminator_from_checkpoint(path: &std::path::Path) -> Result<DiscriminatorNet<f32>> {
    let stored = load_tensors(path)?;
    let find = |name: &str| -> Result<&Tensor<f32>> {
        stored
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::usage(format!("checkpoint is missing tensor `{name}`")))
    };
    let block0 = find("d.block0.conv.filters")?;
    let base = block0.dims()[0];
    let blocks = (0..)
        .take_while(|i| stored.iter().any(|(n, _)| n == &format!("d.block{i}.conv.filters")))
        .count();
    if blocks < 2 {
        return Err(Error::usage("checkpoint does not contain a discriminator"));
    }
    let image_size = 4usize << blocks;
    let kind = if stored.iter().any(|(n, _)| n.contains(".bn.")) {
        DiscKind::Classifier
    } else {
        DiscKind::Critic
    };
    let mut net = DiscriminatorNet::new(image_size, base, kind)?;
    load_network(&mut net, path)?;
    Ok(net)
}

/// Rebuild an inference network from a checkpoint.
pub fn inference_from_checkpoint(path: &std::path::Path) -> Result<InferenceNet<f32>> {
    let stored = load_tensors(path)?;
    let layers = (0..)
        .take_while(|i| stored.iter().any(|(n, _)| n == &format!("i.fc{i}.weight")))
        .count();
    if layers < 2 {
        return Err(Error::usage("checkpoint does not contain an inference network"));
    }
    let first = stored
        .iter()
        .find(|(n, _)| n == "i.fc0.weight")
        .map(|(_, t)| t)
        .unwrap();
    let (hidden, n_in) = (first.dims()[0], first.dims()[1]);
    let last = stored
        .iter()
        .find(|(n, _)| n == &format!("i.fc{}.weight", layers - 1))
        .map(|(_, t)| t)
        .unwrap();
    let n_out = last.dims()[0];
    let mut net = InferenceNet::new(n_in, n_out, hidden, layers - 2);
    load_network(&mut net, path)?;
    Ok(net)
}
