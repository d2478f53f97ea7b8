//! Generator and discriminator networks.
//!
//! The generator is an encoder/decoder without skip connections: one
//! stride-2 convolution down, one fractionally strided convolution back up,
//! 5x5 kernels throughout. The discriminator halves the resolution at every
//! convolution and ends in a single sigmoid probability.

mod checkpoint;
mod layers;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{Layer, LayerSpec, Sequential, INIT_STD};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Activation, BnMode, Rng, Shape, Tensor};

pub const IMAGE_SIZE: usize = 64;
pub const KERNEL: usize = 5;
pub const LEAKY_SLOPE: f32 = 0.2;
pub const DEPTH_CHANNELS: usize = 1;
pub const RGB_CHANNELS: usize = 3;

const ENCODER_FILTERS: [usize; 4] = [64, 128, 256, 512];
const DECODER_FILTERS: [usize; 3] = [256, 128, 64];
const UPSAMPLE_FILTERS: usize = 32;
const DISCRIMINATOR_FILTERS: [usize; 4] = [64, 128, 256, 512];

/// Network width. `width_divisor = 1` gives the full 64..512 filter schedule;
/// larger powers of two shrink every hidden layer by that factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub width_divisor: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { width_divisor: 1 }
    }
}

impl Architecture {
    pub fn new(width_divisor: usize) -> Result<Self> {
        let arch = Architecture { width_divisor };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width_divisor;
        if d == 0 || !d.is_power_of_two() || d > UPSAMPLE_FILTERS {
            return Err(Error::config(format!(
                "width divisor must be a power of two between 1 and {UPSAMPLE_FILTERS}, got {d}"
            )));
        }
        Ok(())
    }

    fn scale(&self, filters: usize) -> usize {
        filters / self.width_divisor
    }
}

fn conv(in_channels: usize, filters: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv {
        in_channels,
        filters,
        kernel: KERNEL,
        stride,
        pad: KERNEL / 2,
    }
}

fn act(function: Activation) -> LayerSpec {
    LayerSpec::Activation { function }
}

fn leaky() -> LayerSpec {
    act(Activation::LeakyRelu { alpha: LEAKY_SLOPE })
}

pub fn generator_specs(arch: Architecture) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let mut encoder = Vec::new();
    let mut channels = DEPTH_CHANNELS;
    for (i, &f) in ENCODER_FILTERS.iter().enumerate() {
        let filters = arch.scale(f);
        let stride = if i + 1 == ENCODER_FILTERS.len() { 2 } else { 1 };
        encoder.push(conv(channels, filters, stride));
        encoder.push(LayerSpec::Batchnorm { channels: filters });
        encoder.push(leaky());
        channels = filters;
    }

    let mut decoder = Vec::new();
    for &f in &DECODER_FILTERS {
        let filters = arch.scale(f);
        decoder.push(conv(channels, filters, 1));
        decoder.push(LayerSpec::Batchnorm { channels: filters });
        decoder.push(act(Activation::Relu));
        channels = filters;
    }
    let up = arch.scale(UPSAMPLE_FILTERS);
    decoder.push(LayerSpec::ConvTranspose {
        in_channels: channels,
        filters: up,
        kernel: KERNEL,
        upsample: 2,
        pad: KERNEL / 2,
        out_pad: 1,
    });
    decoder.push(LayerSpec::Batchnorm { channels: up });
    decoder.push(act(Activation::Relu));
    decoder.push(conv(up, RGB_CHANNELS, 1));
    decoder.push(act(Activation::Tanh));
    (encoder, decoder)
}

pub fn discriminator_specs(arch: Architecture) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let mut features = Vec::new();
    let mut channels = RGB_CHANNELS;
    let mut size = IMAGE_SIZE;
    for (i, &f) in DISCRIMINATOR_FILTERS.iter().enumerate() {
        let filters = arch.scale(f);
        features.push(conv(channels, filters, 2));
        if i > 0 {
            features.push(LayerSpec::Batchnorm { channels: filters });
        }
        features.push(leaky());
        channels = filters;
        size /= 2;
    }
    let head = vec![
        LayerSpec::Flatten,
        LayerSpec::Affine {
            in_features: channels * size * size,
            out_features: 1,
        },
        act(Activation::Sigmoid),
    ];
    (features, head)
}

fn check_input(input: &Tensor, channels: usize, what: &str) -> Result<()> {
    let s = input.shape();
    if s.c() != channels || s.h() != IMAGE_SIZE || s.w() != IMAGE_SIZE || s.n() == 0 {
        return Err(Error::shape(format!(
            "{what} expects (n, {channels}, {IMAGE_SIZE}, {IMAGE_SIZE}) input, got {s}"
        )));
    }
    Ok(())
}

/// Depth map `(n, 1, 64, 64)` to RGB `(n, 3, 64, 64)` in `(-1, 1)`.
#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub encoder: Sequential,
    pub decoder: Sequential,
}

impl GeneratorNet {
    /// Zero-weight network with the given architecture; see [`build_generator`].
    pub fn uninitialized(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (enc, dec) = generator_specs(arch);
        let encoder = Sequential::from_specs(DEPTH_CHANNELS, enc)?;
        let channels = encoder
            .specs()
            .iter()
            .fold(DEPTH_CHANNELS, |c, s| s.out_channels(c));
        let decoder = Sequential::from_specs(channels, dec)?;
        Ok(GeneratorNet { encoder, decoder })
    }

    pub fn from_parts(encoder: Sequential, decoder: Sequential) -> Result<Self> {
        if encoder.in_channels() != DEPTH_CHANNELS {
            return Err(Error::config("generator encoder must take one depth channel"));
        }
        let enc_out = encoder
            .specs()
            .iter()
            .fold(encoder.in_channels(), |c, s| s.out_channels(c));
        if decoder.in_channels() != enc_out {
            return Err(Error::config(format!(
                "decoder takes {} channels but encoder emits {enc_out}",
                decoder.in_channels()
            )));
        }
        match decoder.specs().last() {
            Some(LayerSpec::Activation {
                function: Activation::Tanh,
            }) => {}
            _ => return Err(Error::config("generator must end in a tanh activation")),
        }
        Ok(GeneratorNet { encoder, decoder })
    }

    pub fn init(&mut self, rng: &mut Rng) {
        self.encoder.init(rng);
        self.decoder.init(rng);
    }

    pub fn forward(&mut self, depth: &Tensor, mode: BnMode) -> Result<Tensor> {
        check_input(depth, DEPTH_CHANNELS, "generator")?;
        let code = self.encoder.forward(depth, mode)?;
        self.decoder.forward(&code, mode)
    }

    /// Forward pass with a hook over every layer output, indexed across
    /// encoder then decoder.
    pub fn forward_with<F>(&mut self, depth: &Tensor, mode: BnMode, mut hook: F) -> Result<Tensor>
    where
        F: FnMut(usize, &mut Tensor),
    {
        check_input(depth, DEPTH_CHANNELS, "generator")?;
        let offset = self.encoder.layers().len();
        let code = self.encoder.forward_with(depth, mode, &mut hook)?;
        self.decoder
            .forward_with(&code, mode, |i, t| hook(offset + i, t))
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.decoder.backward(grad_out)?;
        self.encoder.backward(&g)
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    pub fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.decoder.clear_cache();
    }

    pub fn layer_count(&self) -> usize {
        self.encoder.layers().len() + self.decoder.layers().len()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut p: Vec<_> = self
            .encoder
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("encoder.{n}"), t))
            .collect();
        p.extend(
            self.decoder
                .named_params()
                .into_iter()
                .map(|(n, t)| (format!("decoder.{n}"), t)),
        );
        p
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn running_stats_ready(&self) -> bool {
        self.encoder
            .layers()
            .iter()
            .chain(self.decoder.layers())
            .filter_map(|l| l.running_stats())
            .all(|s| s.is_initialized())
    }
}

/// RGB image `(n, 3, 64, 64)` to probability of being real, shape `(n, 1, 1, 1)`.
#[derive(Clone, Debug)]
pub struct DiscriminatorNet {
    pub features: Sequential,
    pub head: Sequential,
}

impl DiscriminatorNet {
    pub fn uninitialized(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let (feat, head) = discriminator_specs(arch);
        let features = Sequential::from_specs(RGB_CHANNELS, feat)?;
        let channels = features
            .specs()
            .iter()
            .fold(RGB_CHANNELS, |c, s| s.out_channels(c));
        let head = Sequential::from_specs(channels, head)?;
        Ok(DiscriminatorNet { features, head })
    }

    pub fn from_parts(features: Sequential, head: Sequential) -> Result<Self> {
        if features.in_channels() != RGB_CHANNELS {
            return Err(Error::config("discriminator must take three RGB channels"));
        }
        match head.specs().last() {
            Some(LayerSpec::Activation {
                function: Activation::Sigmoid,
            }) => {}
            _ => return Err(Error::config("discriminator must end in a sigmoid activation")),
        }
        Ok(DiscriminatorNet { features, head })
    }

    pub fn init(&mut self, rng: &mut Rng) {
        self.features.init(rng);
        self.head.init(rng);
    }

    pub fn forward(&mut self, rgb: &Tensor, mode: BnMode) -> Result<Tensor> {
        check_input(rgb, RGB_CHANNELS, "discriminator")?;
        let f = self.features.forward(rgb, mode)?;
        self.head.forward(&f, mode)
    }

    pub fn forward_with<F>(&mut self, rgb: &Tensor, mode: BnMode, mut hook: F) -> Result<Tensor>
    where
        F: FnMut(usize, &mut Tensor),
    {
        check_input(rgb, RGB_CHANNELS, "discriminator")?;
        let offset = self.features.layers().len();
        let f = self.features.forward_with(rgb, mode, &mut hook)?;
        self.head.forward_with(&f, mode, |i, t| hook(offset + i, t))
    }

    /// Returns the gradient w.r.t. the input image.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let g = self.head.backward(grad_out)?;
        self.features.backward(&g)
    }

    pub fn zero_grad(&mut self) {
        self.features.zero_grad();
        self.head.zero_grad();
    }

    pub fn clear_cache(&mut self) {
        self.features.clear_cache();
        self.head.clear_cache();
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.features.params();
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.features.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut p: Vec<_> = self
            .features
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("features.{n}"), t))
            .collect();
        p.extend(
            self.head
                .named_params()
                .into_iter()
                .map(|(n, t)| (format!("head.{n}"), t)),
        );
        p
    }

    pub fn param_count(&self) -> usize {
        self.features.param_count() + self.head.param_count()
    }
}

pub fn build_generator(arch: Architecture, rng: &mut Rng) -> Result<GeneratorNet> {
    let mut g = GeneratorNet::uninitialized(arch)?;
    init_weights(&mut g.encoder, rng);
    init_weights(&mut g.decoder, rng);
    Ok(g)
}

pub fn build_discriminator(arch: Architecture, rng: &mut Rng) -> Result<DiscriminatorNet> {
    let mut d = DiscriminatorNet::uninitialized(arch)?;
    init_weights(&mut d.features, rng);
    init_weights(&mut d.head, rng);
    Ok(d)
}

/// Conv/affine weights ~ Normal(0, 0.02), biases 0, batch-norm gamma 1 and beta 0.
pub fn init_weights(net: &mut Sequential, rng: &mut Rng) {
    net.init(rng);
}

/// Shape helper for a batch of depth maps.
pub fn depth_shape(n: usize) -> Shape {
    Shape::new(n, DEPTH_CHANNELS, IMAGE_SIZE, IMAGE_SIZE)
}

pub fn rgb_shape(n: usize) -> Shape {
    Shape::new(n, RGB_CHANNELS, IMAGE_SIZE, IMAGE_SIZE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_params(k: usize, ci: usize, co: usize) -> usize {
        k * k * ci * co + co
    }

    #[test]
    fn generator_parameter_count_matches_hand_sum() {
        let g = GeneratorNet::uninitialized(Architecture::default()).unwrap();
        let bn = |c: usize| 2 * c;
        let want = conv_params(5, 1, 64) + bn(64)
            + conv_params(5, 64, 128) + bn(128)
            + conv_params(5, 128, 256) + bn(256)
            + conv_params(5, 256, 512) + bn(512)
            + conv_params(5, 512, 256) + bn(256)
            + conv_params(5, 256, 128) + bn(128)
            + conv_params(5, 128, 64) + bn(64)
            + conv_params(5, 64, 32) + bn(32)
            + conv_params(5, 32, 3);
        assert_eq!(g.param_count(), want);
    }

    #[test]
    fn discriminator_parameter_count_matches_hand_sum() {
        let d = DiscriminatorNet::uninitialized(Architecture::default()).unwrap();
        let want = conv_params(5, 3, 64)
            + conv_params(5, 64, 128) + 2 * 128
            + conv_params(5, 128, 256) + 2 * 256
            + conv_params(5, 256, 512) + 2 * 512
            + 512 * 4 * 4 + 1;
        assert_eq!(d.param_count(), want);
    }

    #[test]
    fn generator_has_one_down_and_one_up_stage() {
        let (enc, dec) = generator_specs(Architecture::default());
        let strided = enc
            .iter()
            .filter(|s| matches!(s, LayerSpec::Conv { stride: 2, .. }))
            .count();
        let up = dec
            .iter()
            .filter(|s| matches!(s, LayerSpec::ConvTranspose { upsample: 2, .. }))
            .count();
        assert_eq!((strided, up), (1, 1));
        assert!(dec.iter().all(|s| !matches!(s, LayerSpec::Conv { stride: 2, .. })));
    }

    #[test]
    fn width_divisor_validation() {
        assert!(Architecture::new(0).is_err());
        assert!(Architecture::new(3).is_err());
        assert!(Architecture::new(64).is_err());
        assert!(Architecture::new(16).is_ok());
    }

    #[test]
    fn discriminator_spatial_sizes() {
        let mut rng = Rng::new(5);
        let mut d = build_discriminator(Architecture::new(16).unwrap(), &mut rng).unwrap();
        let x = Tensor::rand_uniform(rgb_shape(2), -1.0, 1.0, &mut rng);
        let mut sizes = Vec::new();
        let specs = d.features.specs();
        d.forward_with(&x, BnMode::Train, |i, t| {
            if i < specs.len() && matches!(specs[i], LayerSpec::Conv { .. }) {
                sizes.push(t.shape().h());
            }
        })
        .unwrap();
        assert_eq!(sizes, vec![32, 16, 8, 4]);
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut rng = Rng::new(6);
        let mut d = build_discriminator(Architecture::new(16).unwrap(), &mut rng).unwrap();
        for p in d.head.params_mut() {
            p.data_mut().fill(0.0);
        }
        let x = Tensor::rand_uniform(rgb_shape(3), -1.0, 1.0, &mut rng);
        let y = d.forward(&x, BnMode::Train).unwrap();
        assert_eq!(y.shape(), Shape::new(3, 1, 1, 1));
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn init_statistics_and_biases() {
        let mut rng = Rng::new(7);
        let g = build_generator(Architecture::default(), &mut rng).unwrap();
        // encoder layer 3 is the 64 -> 128 conv: 5*5*64*128 weights
        let w = &g.encoder.layers()[3].params()[0];
        assert_eq!(w.len(), 5 * 5 * 64 * 128);
        let n = w.len() as f64;
        let mean = w.mean();
        assert!(mean.abs() < 3.0 * INIT_STD as f64 / n.sqrt(), "mean {mean}");
        let var = w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - INIT_STD as f64).abs() < 1e-3);
        for layer in g.encoder.layers().iter().chain(g.decoder.layers()) {
            match layer.spec() {
                LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. } => {
                    assert!(layer.params()[1].data().iter().all(|&b| b == 0.0));
                }
                LayerSpec::Batchnorm { .. } => {
                    assert!(layer.params()[0].data().iter().all(|&v| v == 1.0));
                    assert!(layer.params()[1].data().iter().all(|&v| v == 0.0));
                }
                _ => {}
            }
        }
    }

    #[test]
    fn seeds_control_weights() {
        let arch = Architecture::new(16).unwrap();
        let a = build_generator(arch, &mut Rng::new(1)).unwrap();
        let b = build_generator(arch, &mut Rng::new(1)).unwrap();
        let c = build_generator(arch, &mut Rng::new(2)).unwrap();
        let data = |g: &GeneratorNet| -> Vec<u32> {
            g.params().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(data(&a), data(&b));
        assert_ne!(data(&a), data(&c));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let mut rng = Rng::new(8);
        let mut g = build_generator(Architecture::new(16).unwrap(), &mut rng).unwrap();
        let x = Tensor::zeros(Shape::new(1, 1, 32, 32));
        assert!(g.forward(&x, BnMode::Train).is_err());
        let x = Tensor::zeros(Shape::new(1, 3, 64, 64));
        assert!(g.forward(&x, BnMode::Train).is_err());
    }
}
