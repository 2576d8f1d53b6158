//! Encoder/decoder segmentation network with explicit forward and backward
//! passes.
//!
//! Layout for widths `(c1, c2, c3)`:
//!
//! ```text
//! enc1a, enc1b  3x3 conv + ReLU, c1 maps      -> skip1
//! max pool 2x2
//! enc2a, enc2b  3x3 conv + ReLU, c2 maps      -> skip2
//! max pool 2x2
//! enc3a, enc3b  3x3 conv + ReLU, c3 maps
//! up1           2x2 stride-2 transposed conv, c3 -> c2
//! concat [up1, skip2] -> dec1a, dec1b  3x3 conv + ReLU, c2 maps
//! up2           2x2 stride-2 transposed conv, c2 -> c1
//! concat [up2, skip1] -> dec2a, dec2b  3x3 conv + ReLU, c1 maps
//! out           1x1 conv, 1 map, no activation (logits)
//! ```

pub mod checkpoint;
pub mod layers;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;
use layers::{conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward, upconv2, upconv2_backward};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkConfig {
    pub in_channels: usize,
    /// Feature maps at the three resolution levels.
    pub widths: [usize; 3],
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            widths: [32, 64, 128],
        }
    }
}

impl NetworkConfig {
    pub fn tiny(widths: [usize; 3]) -> Self {
        Self {
            in_channels: 1,
            widths,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Config(format!("channel counts must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// Same-padded convolution, weight `(out, in, k, k)`.
    Conv { kernel: usize },
    /// 2x2 stride-2 transposed convolution, weight `(in, out, 2, 2)`.
    UpConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    fn zeros(kind: LayerKind, inputs: usize, outputs: usize) -> Self {
        let shape = match kind {
            LayerKind::Conv { kernel } => [outputs, inputs, kernel, kernel],
            LayerKind::UpConv => [inputs, outputs, 2, 2],
        };
        Self {
            weight: Tensor4::zeros(shape),
            bias: vec![T::zero(); outputs],
        }
    }
}

/// Static description of one named layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub name: &'static str,
    pub kind: LayerKind,
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerSpec {
    /// Inputs feeding one output value.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel } => self.inputs * kernel * kernel,
            LayerKind::UpConv => self.inputs,
        }
    }
}

pub const LAYER_NAMES: [&str; 13] = [
    "enc1a", "enc1b", "enc2a", "enc2b", "enc3a", "enc3b", "up1", "dec1a", "dec1b", "up2", "dec2a", "dec2b", "out",
];

pub fn layer_specs(config: &NetworkConfig) -> [LayerSpec; 13] {
    let [c1, c2, c3] = config.widths;
    let conv3 = LayerKind::Conv { kernel: 3 };
    let spec = |name, kind, inputs, outputs| LayerSpec {
        name,
        kind,
        inputs,
        outputs,
    };
    [
        spec("enc1a", conv3, config.in_channels, c1),
        spec("enc1b", conv3, c1, c1),
        spec("enc2a", conv3, c1, c2),
        spec("enc2b", conv3, c2, c2),
        spec("enc3a", conv3, c2, c3),
        spec("enc3b", conv3, c3, c3),
        spec("up1", LayerKind::UpConv, c3, c2),
        spec("dec1a", conv3, 2 * c2, c2),
        spec("dec1b", conv3, c2, c2),
        spec("up2", LayerKind::UpConv, c2, c1),
        spec("dec2a", conv3, 2 * c1, c1),
        spec("dec2b", conv3, c1, c1),
        spec("out", LayerKind::Conv { kernel: 1 }, c1, 1),
    ]
}

/// All learnable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub enc1a: ConvLayer<T>,
    pub enc1b: ConvLayer<T>,
    pub enc2a: ConvLayer<T>,
    pub enc2b: ConvLayer<T>,
    pub enc3a: ConvLayer<T>,
    pub enc3b: ConvLayer<T>,
    pub up1: ConvLayer<T>,
    pub dec1a: ConvLayer<T>,
    pub dec1b: ConvLayer<T>,
    pub up2: ConvLayer<T>,
    pub dec2a: ConvLayer<T>,
    pub dec2b: ConvLayer<T>,
    pub out: ConvLayer<T>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        let l = layer_specs(config).map(|s| ConvLayer::zeros(s.kind, s.inputs, s.outputs));
        let [enc1a, enc1b, enc2a, enc2b, enc3a, enc3b, up1, dec1a, dec1b, up2, dec2a, dec2b, out] = l;
        Self {
            enc1a,
            enc1b,
            enc2a,
            enc2b,
            enc3a,
            enc3b,
            up1,
            dec1a,
            dec1b,
            up2,
            dec2a,
            dec2b,
            out,
        }
    }

    /// He initialization: zero-mean normal weights with variance
    /// `2 / fan_in`, zero biases. Layers are drawn in [`LAYER_NAMES`] order
    /// from double-precision normals, so `f32` and `f64` parameters built
    /// from one seed agree up to rounding.
    pub fn init<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zeros(config);
        let specs = layer_specs(config);
        for (spec, layer) in specs.iter().zip(params.layers_mut()) {
            let std = (2.0 / spec.fan_in() as f64).sqrt();
            for w in layer.weight.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *w = T::from_f64(z * std);
            }
        }
        Ok(params)
    }

    /// Recover the configuration from tensor shapes.
    pub fn config(&self) -> NetworkConfig {
        NetworkConfig {
            in_channels: self.enc1a.weight.shape()[1],
            widths: [
                self.enc1a.weight.shape()[0],
                self.enc2a.weight.shape()[0],
                self.enc3a.weight.shape()[0],
            ],
        }
    }

    pub fn layers(&self) -> [&ConvLayer<T>; 13] {
        [
            &self.enc1a,
            &self.enc1b,
            &self.enc2a,
            &self.enc2b,
            &self.enc3a,
            &self.enc3b,
            &self.up1,
            &self.dec1a,
            &self.dec1b,
            &self.up2,
            &self.dec2a,
            &self.dec2b,
            &self.out,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut ConvLayer<T>; 13] {
        [
            &mut self.enc1a,
            &mut self.enc1b,
            &mut self.enc2a,
            &mut self.enc2b,
            &mut self.enc3a,
            &mut self.enc3b,
            &mut self.up1,
            &mut self.dec1a,
            &mut self.dec1b,
            &mut self.up2,
            &mut self.dec2a,
            &mut self.dec2b,
            &mut self.out,
        ]
    }

    /// Flat views in a fixed order: each layer's weight, then its bias.
    pub fn slices(&self) -> Vec<&[T]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn scale(&mut self, factor: T) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let mut out = NetworkParams::<U>::zeros(&self.config());
        for (dst, src) in out.slices_mut().into_iter().zip(self.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::from_f64(s.as_f64());
            }
        }
        out
    }

    /// Shape check against a freshly built parameter set for `config`.
    pub fn matches_config(&self, config: &NetworkConfig) -> bool {
        let reference = Self::zeros(config);
        let same = self
            .layers()
            .iter()
            .zip(reference.layers())
            .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len());
        same
    }
}

/// Activations retained by [`forward`] for [`backward`]. ReLU layers keep
/// only their output; the derivative mask is `output > 0`.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    input: Tensor4<T>,
    e1a: Tensor4<T>,
    e1b: Tensor4<T>,
    p1: Tensor4<T>,
    p1_argmax: Vec<u32>,
    e2a: Tensor4<T>,
    e2b: Tensor4<T>,
    p2: Tensor4<T>,
    p2_argmax: Vec<u32>,
    e3a: Tensor4<T>,
    e3b: Tensor4<T>,
    cat1: Tensor4<T>,
    d1a: Tensor4<T>,
    d1b: Tensor4<T>,
    cat2: Tensor4<T>,
    d2a: Tensor4<T>,
    d2b: Tensor4<T>,
}

impl<T: Real> ForwardCache<T> {
    pub fn input_shape(&self) -> [usize; 4] {
        self.input.shape()
    }

    /// Which ReLUs are active and which pool inputs won. The network is
    /// smooth in a neighborhood where this pattern is constant.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let relus = [
            &self.e1a, &self.e1b, &self.e2a, &self.e2b, &self.e3a, &self.e3b, &self.d1a, &self.d1b, &self.d2a,
            &self.d2b,
        ];
        relus
            .iter()
            .flat_map(|t| t.data().iter().map(|v| u32::from(*v > T::zero())))
            .chain(self.p1_argmax.iter().copied())
            .chain(self.p2_argmax.iter().copied())
            .collect()
    }
}

fn conv_relu<T: Real>(x: &Tensor4<T>, layer: &ConvLayer<T>) -> Result<Tensor4<T>> {
    Ok(relu(&conv2d(x, &layer.weight, &layer.bias)?))
}

/// Logits of shape `(n, 1, h, w)` for input `(n, c, h, w)` with `h` and `w`
/// divisible by 4.
pub fn forward<T: Real>(params: &NetworkParams<T>, x: &Tensor4<T>) -> Result<(Tensor4<T>, ForwardCache<T>)> {
    let [_, c, h, w] = x.shape();
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("input spatial size {h}x{w} is not a positive multiple of 4")));
    }
    let expected = params.config().in_channels;
    if c != expected {
        return Err(Error::shape(format!("network expects {expected} input channels, got {c}")));
    }

    let e1a = conv_relu(x, &params.enc1a)?;
    let e1b = conv_relu(&e1a, &params.enc1b)?;
    let (p1, p1_argmax) = maxpool2(&e1b)?;
    let e2a = conv_relu(&p1, &params.enc2a)?;
    let e2b = conv_relu(&e2a, &params.enc2b)?;
    let (p2, p2_argmax) = maxpool2(&e2b)?;
    let e3a = conv_relu(&p2, &params.enc3a)?;
    let e3b = conv_relu(&e3a, &params.enc3b)?;

    let u1 = upconv2(&e3b, &params.up1.weight, &params.up1.bias)?;
    let cat1 = u1.concat_channels(&e2b)?;
    let d1a = conv_relu(&cat1, &params.dec1a)?;
    let d1b = conv_relu(&d1a, &params.dec1b)?;
    let u2 = upconv2(&d1b, &params.up2.weight, &params.up2.bias)?;
    let cat2 = u2.concat_channels(&e1b)?;
    let d2a = conv_relu(&cat2, &params.dec2a)?;
    let d2b = conv_relu(&d2a, &params.dec2b)?;
    let logits = conv2d(&d2b, &params.out.weight, &params.out.bias)?;

    let cache = ForwardCache {
        input: x.clone(),
        e1a,
        e1b,
        p1,
        p1_argmax,
        e2a,
        e2b,
        p2,
        p2_argmax,
        e3a,
        e3b,
        cat1,
        d1a,
        d1b,
        cat2,
        d2a,
        d2b,
    };
    Ok((logits, cache))
}

/// Logits only, without keeping a cache.
pub fn predict_logits<T: Real>(params: &NetworkParams<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    forward(params, x).map(|(logits, _)| logits)
}

/// Reverse pass through a ReLU conv: returns the gradient w.r.t. the conv
/// input and stores the parameter gradients into `slot`.
fn conv_relu_back<T: Real>(
    input: &Tensor4<T>,
    activated: &Tensor4<T>,
    layer: &ConvLayer<T>,
    grad: &Tensor4<T>,
    slot: &mut ConvLayer<T>,
) -> Result<Tensor4<T>> {
    let pre = relu_backward(activated, grad)?;
    let g = conv2d_backward(input, &layer.weight, &pre)?;
    slot.weight = g.weight;
    slot.bias = g.bias;
    Ok(g.input)
}

fn add_into<T: Real>(acc: &mut Tensor4<T>, other: &Tensor4<T>) {
    for (a, &b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

/// Gradients of a scalar loss with respect to every parameter and the input,
/// given the loss gradient with respect to the logits.
pub fn backward<T: Real>(
    params: &NetworkParams<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor4<T>,
) -> Result<(NetworkParams<T>, Tensor4<T>)> {
    let [n, _, h, w] = cache.input.shape();
    if grad_logits.shape() != [n, 1, h, w] {
        return Err(Error::shape(format!(
            "upstream gradient {:?} does not match cached forward input {:?}",
            grad_logits.shape(),
            cache.input.shape()
        )));
    }
    if cache.cat1.channels() != params.dec1a.weight.shape()[1] {
        return Err(Error::shape("forward cache was produced by a different network"));
    }
    let config = params.config();
    let [c1, c2, _] = config.widths;
    let mut grads = NetworkParams::zeros(&config);

    let g = conv2d_backward(&cache.d2b, &params.out.weight, grad_logits)?;
    grads.out = ConvLayer {
        weight: g.weight,
        bias: g.bias,
    };
    let g = conv_relu_back(&cache.d2a, &cache.d2b, &params.dec2b, &g.input, &mut grads.dec2b)?;
    let g = conv_relu_back(&cache.cat2, &cache.d2a, &params.dec2a, &g, &mut grads.dec2a)?;
    let (g_u2, g_skip1) = g.split_channels(c1)?;

    let up = upconv2_backward(&cache.d1b, &params.up2.weight, &g_u2)?;
    grads.up2 = ConvLayer {
        weight: up.weight,
        bias: up.bias,
    };
    let g = conv_relu_back(&cache.d1a, &cache.d1b, &params.dec1b, &up.input, &mut grads.dec1b)?;
    let g = conv_relu_back(&cache.cat1, &cache.d1a, &params.dec1a, &g, &mut grads.dec1a)?;
    let (g_u1, g_skip2) = g.split_channels(c2)?;

    let up = upconv2_backward(&cache.e3b, &params.up1.weight, &g_u1)?;
    grads.up1 = ConvLayer {
        weight: up.weight,
        bias: up.bias,
    };
    let g = conv_relu_back(&cache.e3a, &cache.e3b, &params.enc3b, &up.input, &mut grads.enc3b)?;
    let g = conv_relu_back(&cache.p2, &cache.e3a, &params.enc3a, &g, &mut grads.enc3a)?;

    let mut g_e2b = maxpool2_backward(&g, &cache.p2_argmax, cache.e2b.shape())?;
    add_into(&mut g_e2b, &g_skip2);
    let g = conv_relu_back(&cache.e2a, &cache.e2b, &params.enc2b, &g_e2b, &mut grads.enc2b)?;
    let g = conv_relu_back(&cache.p1, &cache.e2a, &params.enc2a, &g, &mut grads.enc2a)?;

    let mut g_e1b = maxpool2_backward(&g, &cache.p1_argmax, cache.e1b.shape())?;
    add_into(&mut g_e1b, &g_skip1);
    let g = conv_relu_back(&cache.e1a, &cache.e1b, &params.enc1b, &g_e1b, &mut grads.enc1b)?;
    let grad_input = conv_relu_back(&cache.input, &cache.e1a, &params.enc1a, &g, &mut grads.enc1a)?;

    Ok((grads, grad_input))
}
