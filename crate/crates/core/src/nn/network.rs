//! Layer stacks, the four ground-segmentation topologies, and
//! forward/backward passes over a whole network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{DenseFrame, LabelGrid, NUM_CHANNELS};
use crate::error::{Error, Result};

use super::loss::{softmax_probs, softmax_xent, ProbabilityMap};
use super::ops::{conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, relu, relu_backward, Stride};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
    Relu,
}

impl LayerKind {
    pub fn to_byte(self) -> u8 {
        match self {
            LayerKind::Conv => 0,
            LayerKind::Deconv => 1,
            LayerKind::Relu => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(LayerKind::Conv),
            1 => Some(LayerKind::Deconv),
            2 => Some(LayerKind::Relu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: Stride,
}

impl LayerSpec {
    pub fn conv(k: usize, cin: usize, cout: usize, stride: Stride) -> Self {
        Self { kind: LayerKind::Conv, kernel: (k, k), in_channels: cin, out_channels: cout, stride }
    }

    pub fn deconv(k: usize, cin: usize, cout: usize, stride: Stride) -> Self {
        Self { kind: LayerKind::Deconv, kernel: (k, k), in_channels: cin, out_channels: cout, stride }
    }

    /// ReLU keeps the channel count of the layer before it.
    pub fn relu(channels: usize) -> Self {
        Self { kind: LayerKind::Relu, kernel: (0, 0), in_channels: channels, out_channels: channels, stride: Stride::ONE }
    }

    pub fn has_weights(&self) -> bool {
        self.kind != LayerKind::Relu
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        let (kh, kw) = self.kernel;
        match self.kind {
            LayerKind::Conv => [self.out_channels, self.in_channels, kh, kw],
            LayerKind::Deconv => [self.in_channels, self.out_channels, kh, kw],
            LayerKind::Relu => [0, 0, 0, 0],
        }
    }

    fn fan_in(&self) -> f64 {
        let (kh, kw) = self.kernel;
        let taps = (self.in_channels * kh * kw) as f64;
        match self.kind {
            // each output of a transposed convolution sees kh·kw/(sv·sh) taps per input channel
            LayerKind::Deconv => taps / (self.stride.vertical * self.stride.horizontal) as f64,
            _ => taps,
        }
    }

    fn validate(&self) -> Result<()> {
        let strides_ok = [self.stride.vertical, self.stride.horizontal].iter().all(|s| *s == 1 || *s == 2);
        match self.kind {
            LayerKind::Relu => Ok(()),
            _ if self.kernel.0 == 0 || self.kernel.1 == 0 || self.in_channels == 0 || self.out_channels == 0 => {
                Err(Error::Config("conv layers need kernel and channel counts".into()))
            }
            _ if !strides_ok => Err(Error::Config("strides must be 1 or 2".into())),
            _ => Ok(()),
        }
    }

    /// Spatial output extent for a given input extent.
    pub fn output_dims(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let Stride { vertical: sv, horizontal: sh } = self.stride;
        match self.kind {
            LayerKind::Relu => Ok((rows, cols)),
            LayerKind::Conv => {
                if !rows.is_multiple_of(sv) || !cols.is_multiple_of(sh) {
                    return Err(Error::Shape(format!("{rows}x{cols} not divisible by stride ({sv}, {sh})")));
                }
                Ok((rows / sv, cols / sh))
            }
            LayerKind::Deconv => Ok((rows * sv, cols * sh)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    L05Deconv,
    L04ConvDec,
    L03DeconvInc,
    L03DeconvIncMultich,
}

impl Topology {
    pub const ALL: [Topology; 4] =
        [Topology::L05Deconv, Topology::L04ConvDec, Topology::L03DeconvInc, Topology::L03DeconvIncMultich];

    pub fn name(self) -> &'static str {
        match self {
            Topology::L05Deconv => "L05_DECONV",
            Topology::L04ConvDec => "L04_CONV_DEC",
            Topology::L03DeconvInc => "L03_DECONV_INC",
            Topology::L03DeconvIncMultich => "L03_DECONV_INC_MULTICH",
        }
    }

    /// Layer stack. A ReLU follows every convolution except the last layer.
    pub fn layers(self) -> Vec<LayerSpec> {
        let s1 = Stride::ONE;
        let s2 = Stride::new(1, 2);
        let c = NUM_CHANNELS;
        let weighted = match self {
            Topology::L05Deconv => vec![
                LayerSpec::conv(5, c, 32, s1),
                LayerSpec::conv(5, 32, 32, s2),
                LayerSpec::conv(3, 32, 64, s1),
                LayerSpec::conv(3, 64, 64, s1),
                LayerSpec::conv(3, 64, 64, s1),
                LayerSpec::deconv(4, 64, 2, s2),
            ],
            Topology::L04ConvDec => vec![
                LayerSpec::conv(7, c, 16, s1),
                LayerSpec::conv(5, 16, 32, s1),
                LayerSpec::conv(3, 32, 32, s1),
                LayerSpec::conv(3, 32, 2, s1),
            ],
            Topology::L03DeconvInc => vec![
                LayerSpec::conv(3, c, 16, s1),
                LayerSpec::conv(5, 16, 24, s2),
                LayerSpec::conv(7, 24, 32, s1),
                LayerSpec::deconv(4, 32, 2, s2),
            ],
            Topology::L03DeconvIncMultich => vec![
                LayerSpec::conv(3, c, 64, s1),
                LayerSpec::conv(5, 64, 96, s2),
                LayerSpec::conv(7, 96, 128, s1),
                LayerSpec::deconv(4, 128, 2, s2),
            ],
        };
        let last = weighted.len() - 1;
        let mut layers = Vec::new();
        for (i, l) in weighted.into_iter().enumerate() {
            layers.push(l);
            if i != last {
                layers.push(LayerSpec::relu(l.out_channels));
            }
        }
        layers
    }
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.to_ascii_uppercase().chars().map(|c| if c == '+' || c == '-' { '_' } else { c }).collect();
        Topology::ALL
            .into_iter()
            .find(|t| t.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown topology `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub topology: Topology,
    pub layers: Vec<LayerSpec>,
    /// One entry per layer; `None` for ReLU.
    pub weights: Vec<Option<LayerWeights>>,
}

/// Build a topology with seeded uniform(±√(3/fan-in)) kernels and zero biases.
pub fn build_topology(topology: Topology, rng_seed: u64) -> NetworkSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let layers = topology.layers();
    let weights = layers
        .iter()
        .map(|l| {
            l.has_weights().then(|| {
                let a = (3.0 / l.fan_in()).sqrt();
                let shape = l.kernel_shape();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-a..a)).collect();
                LayerWeights { kernel: Tensor { shape, data }, bias: vec![0.0; l.out_channels] }
            })
        })
        .collect();
    NetworkSpec { topology, layers, weights }
}

/// Activations cached by a training forward pass: the input of every layer.
pub struct ForwardCache {
    inputs: Vec<Tensor>,
}

impl ForwardCache {
    /// Input of every layer, in layer order.
    pub fn layer_inputs(&self) -> &[Tensor] {
        &self.inputs
    }
}

impl NetworkSpec {
    pub fn zero_weights(&mut self) {
        for w in self.weights.iter_mut().flatten() {
            w.kernel.data.fill(0.0);
            w.bias.fill(0.0);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().flatten().map(|w| w.kernel.len() + w.bias.len()).sum()
    }

    /// Check channel compatibility and the weight shapes.
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != self.weights.len() {
            return Err(Error::Corruption("layer and weight counts differ".into()));
        }
        let mut channels = NUM_CHANNELS;
        for (i, (l, w)) in self.layers.iter().zip(&self.weights).enumerate() {
            l.validate()?;
            if l.in_channels != channels {
                return Err(Error::Config(format!("layer {i} expects {} channels, gets {channels}", l.in_channels)));
            }
            channels = l.out_channels;
            match (l.has_weights(), w) {
                (true, Some(w)) if w.kernel.shape == l.kernel_shape() && w.bias.len() == l.out_channels => {}
                (false, None) => {}
                _ => return Err(Error::Corruption(format!("layer {i} weights do not match its spec"))),
            }
        }
        if channels != 2 {
            return Err(Error::Config(format!("network ends with {channels} channels, expected 2")));
        }
        Ok(())
    }

    /// Spatial output shape for a given input shape.
    pub fn output_dims(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        self.layers.iter().try_fold((rows, cols), |(r, c), l| l.output_dims(r, c))
    }

    fn layer_forward(&self, i: usize, x: &Tensor) -> Result<Tensor> {
        let l = &self.layers[i];
        match (l.kind, &self.weights[i]) {
            (LayerKind::Relu, _) => Ok(relu(x)),
            (LayerKind::Conv, Some(w)) => conv2d_forward(x, &w.kernel, &w.bias, l.stride),
            (LayerKind::Deconv, Some(w)) => deconv2d_forward(x, &w.kernel, &w.bias, l.stride),
            _ => Err(Error::Corruption(format!("layer {i} has no weights"))),
        }
    }

    /// Logits for a `(batch, 3, rows, cols)` input.
    pub fn logits(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.layer_forward(0, input)?;
        for i in 1..self.layers.len() {
            x = self.layer_forward(i, &x)?;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            let y = self.layer_forward(i, &x)?;
            inputs.push(x);
            x = y;
        }
        Ok((x, ForwardCache { inputs }))
    }

    /// Back-propagate `grad_logits`, returning per-layer weight gradients
    /// and the gradient with respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: Tensor) -> Result<(Vec<Option<LayerWeights>>, Tensor)> {
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_logits;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let x = &cache.inputs[i];
            g = match (l.kind, &self.weights[i]) {
                (LayerKind::Relu, _) => relu_backward(&g, x)?,
                (kind, Some(w)) => {
                    let cg = if kind == LayerKind::Conv {
                        conv2d_backward(&g, x, &w.kernel, l.stride)?
                    } else {
                        deconv2d_backward(&g, x, &w.kernel, l.stride)?
                    };
                    grads[i] = Some(LayerWeights { kernel: cg.kernel, bias: cg.bias });
                    cg.input
                }
                _ => return Err(Error::Corruption(format!("layer {i} has no weights"))),
            };
        }
        Ok((grads, g))
    }

    /// Mean masked cross-entropy and its gradients for one batch.
    pub fn loss_and_grad(&self, input: &Tensor, targets: &[&LabelGrid]) -> Result<(f64, Vec<Option<LayerWeights>>, Tensor)> {
        let (logits, cache) = self.forward_cached(input)?;
        let out = softmax_xent(&logits, targets)?;
        let (grads, grad_input) = self.backward(&cache, out.grad)?;
        Ok((out.loss, grads, grad_input))
    }
}

/// Single-item input tensor from a normalized frame.
pub fn frame_tensor(frame: &DenseFrame) -> Result<Tensor> {
    if !frame.normalized {
        return Err(Error::State("network input must be normalized".into()));
    }
    Tensor::from_vec([1, NUM_CHANNELS, frame.rows, frame.cols], frame.values.clone())
}

/// Per-cell ground probabilities for one normalized frame.
pub fn forward(net: &NetworkSpec, frame: &DenseFrame) -> Result<ProbabilityMap> {
    let input = frame_tensor(frame)?;
    let (r, c) = net.output_dims(frame.rows, frame.cols)?;
    if (r, c) != (frame.rows, frame.cols) {
        return Err(Error::Shape(format!("network maps {}x{} to {r}x{c}", frame.rows, frame.cols)));
    }
    let logits = net.logits(&input)?;
    Ok(softmax_probs(&logits)?.remove(0))
}
