//! Layer primitives with cached forward state for the backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    activation, activation_backward, affine, affine_backward, batch_norm2d, batch_norm2d_backward,
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, Activation,
    BatchNormCache, BnMode, ConvParams, Rng, RunningStats, Shape, Tensor, BN_EPS, BN_MOMENTUM,
};

/// Standard deviation of the normal initializer for conv and affine weights.
pub const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Fractionally strided convolution; `upsample` is the inverse stride.
    ConvTranspose {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        upsample: usize,
        pad: usize,
        out_pad: usize,
    },
    Batchnorm {
        channels: usize,
    },
    Activation {
        function: Activation,
    },
    Flatten,
    Affine {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerSpec {
    /// Channel count after this layer, given the incoming one.
    pub fn out_channels(&self, incoming: usize) -> usize {
        match *self {
            LayerSpec::Conv { filters, .. } | LayerSpec::ConvTranspose { filters, .. } => filters,
            LayerSpec::Affine { out_features, .. } => out_features,
            LayerSpec::Flatten => incoming,
            LayerSpec::Batchnorm { .. } | LayerSpec::Activation { .. } => incoming,
        }
    }

    /// Channel count this layer expects, if it constrains it.
    pub fn in_channels(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv { in_channels, .. } | LayerSpec::ConvTranspose { in_channels, .. } => {
                Some(in_channels)
            }
            LayerSpec::Batchnorm { channels } => Some(channels),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    spec: LayerSpec,
    /// Trainable tensors in a fixed order: weight/bias or gamma/beta.
    params: Vec<Tensor>,
    running: Option<RunningStats>,
    cache: Cache,
}

#[derive(Clone, Debug, Default)]
enum Cache {
    #[default]
    Empty,
    Input(Tensor),
    Output(Tensor),
    Norm(BatchNormCache),
    Shape(Shape),
}

impl Layer {
    /// Builds a layer with zeroed weights, unit gamma and zero beta.
    pub fn from_spec(spec: LayerSpec) -> Self {
        let (params, running) = match spec {
            LayerSpec::Conv {
                in_channels,
                filters,
                kernel,
                ..
            } => (
                vec![
                    Tensor::zeros(Shape::new(filters, in_channels, kernel, kernel)).with_grad(),
                    Tensor::vector(vec![0.0; filters]).with_grad(),
                ],
                None,
            ),
            LayerSpec::ConvTranspose {
                in_channels,
                filters,
                kernel,
                ..
            } => (
                vec![
                    Tensor::zeros(Shape::new(in_channels, filters, kernel, kernel)).with_grad(),
                    Tensor::vector(vec![0.0; filters]).with_grad(),
                ],
                None,
            ),
            LayerSpec::Batchnorm { channels } => (
                vec![
                    Tensor::vector(vec![1.0; channels]).with_grad(),
                    Tensor::vector(vec![0.0; channels]).with_grad(),
                ],
                Some(RunningStats::new(channels)),
            ),
            LayerSpec::Affine {
                in_features,
                out_features,
            } => (
                vec![
                    Tensor::zeros(Shape::new(1, 1, in_features, out_features)).with_grad(),
                    Tensor::vector(vec![0.0; out_features]).with_grad(),
                ],
                None,
            ),
            LayerSpec::Activation { .. } | LayerSpec::Flatten => (Vec::new(), None),
        };
        Layer {
            spec,
            params,
            running,
            cache: Cache::Empty,
        }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self.spec {
            LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. } | LayerSpec::Affine { .. } => {
                &["weight", "bias"]
            }
            LayerSpec::Batchnorm { .. } => &["gamma", "beta"],
            _ => &[],
        }
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn running_stats(&self) -> Option<&RunningStats> {
        self.running.as_ref()
    }

    pub fn running_stats_mut(&mut self) -> Option<&mut RunningStats> {
        self.running.as_mut()
    }

    /// Normal(0, std) weights and zero biases for conv/affine layers; unit
    /// gamma and zero beta for batch norm.
    pub fn init(&mut self, rng: &mut Rng, std: f32) {
        match self.spec {
            LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. } | LayerSpec::Affine { .. } => {
                let w = &mut self.params[0];
                for v in w.data_mut() {
                    *v = rng.normal(0.0, std);
                }
                self.params[1].data_mut().fill(0.0);
            }
            LayerSpec::Batchnorm { channels } => {
                self.params[0].data_mut().fill(1.0);
                self.params[1].data_mut().fill(0.0);
                self.running = Some(RunningStats::new(channels));
            }
            _ => {}
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = Cache::Empty;
    }

    pub fn forward(&mut self, input: Tensor, mode: BnMode) -> Result<Tensor> {
        match self.spec {
            LayerSpec::Conv { stride, pad, .. } => {
                let out = conv2d(
                    &input,
                    &self.params[0],
                    self.params[1].data(),
                    ConvParams::new(stride, pad),
                )?;
                self.cache = Cache::Input(input);
                Ok(out)
            }
            LayerSpec::ConvTranspose {
                upsample,
                pad,
                out_pad,
                ..
            } => {
                let out = conv_transpose2d(
                    &input,
                    &self.params[0],
                    self.params[1].data(),
                    ConvParams::new(upsample, pad).with_out_pad(out_pad),
                )?;
                self.cache = Cache::Input(input);
                Ok(out)
            }
            LayerSpec::Batchnorm { .. } => {
                let running = self.running.as_mut().expect("batch norm layers own running stats");
                let (out, cache) = batch_norm2d(
                    &input,
                    self.params[0].data(),
                    self.params[1].data(),
                    running,
                    mode,
                    BN_MOMENTUM,
                    BN_EPS,
                )?;
                self.cache = Cache::Norm(cache);
                Ok(out)
            }
            LayerSpec::Activation { function } => {
                let out = activation(&input, function);
                self.cache = Cache::Output(out.clone());
                Ok(out)
            }
            LayerSpec::Flatten => {
                let s = input.shape();
                self.cache = Cache::Shape(s);
                input.reshape(Shape::new(s.n(), s.item_len(), 1, 1))
            }
            LayerSpec::Affine { .. } => {
                let out = affine(&input, &self.params[0], self.params[1].data())?;
                self.cache = Cache::Input(input);
                Ok(out)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let missing = || Error::State("backward called without a matching forward pass".into());
        match (&self.spec, &self.cache) {
            (LayerSpec::Conv { stride, pad, .. }, Cache::Input(x)) => {
                let g = conv2d_backward(x, &self.params[0], grad_out, ConvParams::new(*stride, *pad))?;
                self.params[0].accumulate_grad(&g.kernel)?;
                self.params[1].accumulate_grad(&g.bias)?;
                Ok(g.input)
            }
            (
                LayerSpec::ConvTranspose {
                    upsample,
                    pad,
                    out_pad,
                    ..
                },
                Cache::Input(x),
            ) => {
                let params = ConvParams::new(*upsample, *pad).with_out_pad(*out_pad);
                let g = conv_transpose2d_backward(x, &self.params[0], grad_out, params)?;
                self.params[0].accumulate_grad(&g.kernel)?;
                self.params[1].accumulate_grad(&g.bias)?;
                Ok(g.input)
            }
            (LayerSpec::Batchnorm { .. }, Cache::Norm(cache)) => {
                let g = batch_norm2d_backward(grad_out, self.params[0].data(), cache)?;
                self.params[0].accumulate_grad(&g.gamma)?;
                self.params[1].accumulate_grad(&g.beta)?;
                Ok(g.input)
            }
            (LayerSpec::Activation { function }, Cache::Output(y)) => {
                activation_backward(y, grad_out, *function)
            }
            (LayerSpec::Flatten, Cache::Shape(s)) => grad_out.detach().reshape(*s),
            (LayerSpec::Affine { .. }, Cache::Input(x)) => {
                let g = affine_backward(x, &self.params[0], grad_out)?;
                self.params[0].accumulate_grad(&g.weight)?;
                self.params[1].accumulate_grad(&g.bias)?;
                Ok(g.input)
            }
            _ => Err(missing()),
        }
    }
}

/// Ordered chain of layers.
#[derive(Clone, Debug)]
pub struct Sequential {
    in_channels: usize,
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn from_specs(in_channels: usize, specs: Vec<LayerSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        let mut channels = in_channels;
        for (i, spec) in specs.iter().enumerate() {
            if let Some(expected) = spec.in_channels() {
                if expected != channels {
                    return Err(Error::config(format!(
                        "layer {i} ({spec:?}) expects {expected} channels but receives {channels}"
                    )));
                }
            }
            channels = spec.out_channels(channels);
        }
        Ok(Sequential {
            in_channels,
            layers: specs.into_iter().map(Layer::from_spec).collect(),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn init(&mut self, rng: &mut Rng) {
        for layer in &mut self.layers {
            layer.init(rng, INIT_STD);
        }
    }

    pub fn forward(&mut self, input: &Tensor, mode: BnMode) -> Result<Tensor> {
        self.forward_with(input, mode, |_, _| {})
    }

    /// Forward pass calling `hook(layer_index, output)` after every layer;
    /// the hook may modify the activation in place.
    pub fn forward_with<F>(&mut self, input: &Tensor, mode: BnMode, mut hook: F) -> Result<Tensor>
    where
        F: FnMut(usize, &mut Tensor),
    {
        if input.shape().c() != self.in_channels {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {}",
                self.in_channels,
                input.shape()
            )));
        }
        let mut x = input.detach();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            x = layer.forward(x, mode)?;
            hook(i, &mut x);
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.detach();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    /// `(name, tensor)` pairs, e.g. `3.weight`.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.param_names()
                    .iter()
                    .zip(&l.params)
                    .map(move |(n, t)| (format!("{i}.{n}"), t))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }
}
