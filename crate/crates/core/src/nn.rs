//! Dense feed-forward networks with explicit forward and backward passes.
//!
//! A [`DenseNet`] is a chain of affine layers `z = W x + b` each followed by an
//! element-wise activation. Weights are row-major with shape `(out, in)`.
//! Gradients are computed analytically by [`DenseNet::backward`]; the same
//! substrate backs the query-generation network and the actor-critic heads.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::codec::{put_f64s, put_u32, put_u8, ByteReader};
use crate::error::{Error, Result};

/// Floor applied to probabilities inside `ln` so that a zero never yields `-inf`.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z`. The ReLU subgradient at 0 is 0.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// Row-major, shape `(out_dim, in_dim)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidInput("layer dimensions must be positive".into()));
        }
        if weights.len() != in_dim * out_dim {
            return Err(Error::dim("layer weights", in_dim * out_dim, weights.len()));
        }
        if bias.len() != out_dim {
            return Err(Error::dim("layer bias", out_dim, bias.len()));
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("layer parameters must be finite".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Result<Self> {
        Self::new(
            in_dim,
            out_dim,
            activation,
            vec![0.0; in_dim * out_dim],
            vec![0.0; out_dim],
        )
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layer = Self::zeros(in_dim, out_dim, activation)?;
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        for w in &mut layer.weights {
            *w = dist.sample(rng);
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn affine(&self, x: &[f64], z: &mut Vec<f64>) {
        z.clear();
        z.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| b + dot(row, x)),
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intermediate values of one forward pass, needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (the first entry is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::dim("layer chaining", pair[0].out_dim, pair[1].in_dim));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized network with `hidden` on every layer but the last.
    pub fn glorot<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidInput("need at least input and output sizes".into()));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::glorot(sizes[i], sizes[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers {
            layer.affine(&x, &mut z);
            x.clear();
            x.extend(z.iter().map(|&v| layer.activation.apply(v)));
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine(&x, &mut z);
            let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Gradients of the scalar loss whose gradient w.r.t. the output is `output_grad`.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(input)?;
        let mut grads = Gradients::zeros_like(self);
        self.backward_trace(&trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// w.r.t. the network input.
    pub fn backward_trace(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::dim("backward output gradient", self.output_dim(), output_grad.len()));
        }
        if trace.pre.len() != self.layers.len() || trace.inputs[0].len() != self.input_dim() {
            return Err(Error::InvalidInput("forward trace does not belong to this network".into()));
        }
        grads.check_congruent(self)?;

        let mut upstream = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[l];
            let delta: Vec<f64> = trace.pre[l]
                .iter()
                .zip(&upstream)
                .map(|(&z, &g)| g * layer.activation.derivative(z))
                .collect();
            let g = &mut grads.layers[l];
            let mut down = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for ((gw, &xi), (&w, dn)) in grow.iter_mut().zip(x).zip(row.iter().zip(&mut down)) {
                    *gw += d * xi;
                    *dn += d * w;
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// Mutable parameter blocks in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), input.len()));
        }
        Ok(())
    }

    /// Header (`DNET`, layer count, per-layer `in, out, activation`) followed by
    /// each layer's weights then biases as little-endian `f64`.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(b"DNET");
        put_u32(out, self.layers.len() as u32);
        for l in &self.layers {
            put_u32(out, l.in_dim as u32);
            put_u32(out, l.out_dim as u32);
            put_u8(out, l.activation.code());
        }
        for l in &self.layers {
            put_f64s(out, &l.weights);
            put_f64s(out, &l.bias);
        }
    }

    pub(crate) fn read_from(reader: &mut ByteReader<'_>) -> std::result::Result<Self, String> {
        if reader.take(4)? != b"DNET" {
            return Err("missing network header".into());
        }
        let n = reader.u32()? as usize;
        if n == 0 || n > 64 {
            return Err(format!("implausible layer count {n}"));
        }
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let i = reader.u32()? as usize;
            let o = reader.u32()? as usize;
            let act = Activation::from_code(reader.u8()?).ok_or("unknown activation code")?;
            shapes.push((i, o, act));
        }
        let mut layers = Vec::with_capacity(n);
        for (i, o, act) in shapes {
            let w = reader.f64s(i * o)?;
            let b = reader.f64s(o)?;
            layers.push(Layer::new(i, o, act, w, b).map_err(|e| e.to_string())?);
        }
        DenseNet::new(layers).map_err(|e| e.to_string())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ByteReader::new(bytes);
        let net = Self::read_from(&mut reader).map_err(Error::InvalidInput)?;
        if reader.remaining() != 0 {
            return Err(Error::InvalidInput("trailing bytes after network payload".into()));
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-layer parameter gradients, shape-congruent with the owning [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn check_congruent(&self, net: &DenseNet) -> Result<()> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::dim("gradient layer count", net.layers.len(), self.layers.len()));
        }
        for (g, l) in self.layers.iter().zip(&net.layers) {
            if g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len() {
                return Err(Error::dim("gradient shape", l.weights.len(), g.weights.len()));
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights.iter_mut().chain(&mut g.bias).for_each(|v| *v *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for g in &mut self.layers {
            g.weights.iter_mut().chain(&mut g.bias).for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(&g.bias).all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(&g.bias).all(|&v| v == 0.0))
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|g| [g.weights.as_slice(), g.bias.as_slice()])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// SGD or Adam state over an ordered list of parameter blocks.
///
/// Moments are allocated on the first step and must stay congruent afterwards.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self {
            kind,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// Applies one update. Returns `Ok(false)` (and leaves everything untouched)
    /// when any gradient entry is non-finite.
    pub fn step_blocks(&mut self, mut params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<bool> {
        if params.len() != grads.len() {
            return Err(Error::dim("optimizer blocks", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(&grads) {
            if p.len() != g.len() {
                return Err(Error::dim("optimizer block", p.len(), g.len()));
            }
        }
        if !grads.iter().all(|g| g.iter().all(|v| v.is_finite())) {
            log::warn!("non-finite gradient; optimizer step skipped");
            return Ok(false);
        }
        if let OptimizerKind::Adam { .. } = self.kind {
            if self.first.is_empty() {
                self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                self.second = self.first.clone();
            } else if self.first.len() != grads.len()
                || self.first.iter().zip(&grads).any(|(m, g)| m.len() != g.len())
            {
                return Err(Error::InvalidInput("optimizer moments not congruent with parameters".into()));
            }
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    for (w, &d) in p.iter_mut().zip(g.iter()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(&grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &d), mi), vi) in p.iter_mut().zip(g.iter()).zip(m).zip(v) {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(true)
    }

    pub fn step_net(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<bool> {
        grads.check_congruent(net)?;
        self.step_blocks(net.param_blocks_mut(), grads.blocks())
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("softmax input must be finite".into()));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// `L = -(1/k) Σ y_i ln p_i` and its gradient w.r.t. the logits that produced `probs`,
/// `(1/k)(p Σy - y)`.
pub fn cross_entropy_loss_and_grad(target: &[f64], probs: &[f64]) -> Result<(f64, Vec<f64>)> {
    if target.len() != probs.len() {
        return Err(Error::dim("cross-entropy", probs.len(), target.len()));
    }
    if target.is_empty() {
        return Err(Error::InvalidInput("cross-entropy over zero options".into()));
    }
    if target.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::InvalidInput("targets must be finite and non-negative".into()));
    }
    let k = target.len() as f64;
    let loss = -target
        .iter()
        .zip(probs)
        .map(|(&y, &p)| if y == 0.0 { 0.0 } else { y * p.max(LOG_EPS).ln() })
        .sum::<f64>()
        / k;
    let total: f64 = target.iter().sum();
    let grad = target
        .iter()
        .zip(probs)
        .map(|(&y, &p)| (p * total - y) / k)
        .collect();
    Ok((loss, grad))
}
