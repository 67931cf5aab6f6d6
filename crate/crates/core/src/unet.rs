//! Configurable U-Net: an encoder of conv blocks and 2x2 max pooling, a
//! bottleneck, and a decoder that upsamples (nearest neighbour, then conv),
//! concatenates the matching encoder features and convolves again. A final
//! 1x1 conv feeds a sigmoid that gives per-pixel lung probability.
//!
//! All convolutions use zero "same" padding, so skip tensors never need
//! cropping.

use std::borrow::Cow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Eager, Graph, Padding, Tape, Var};
use crate::error::{Result, SegError};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Number of pooling stages.
    pub depth: usize,
    /// Channels at the first level; level `i` has `base_channels << i`.
    pub base_channels: usize,
    pub convs_per_block: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// `(height, width)` the model is trained at.
    pub input_size: (usize, usize),
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl UNetConfig {
    /// The classic U-Net layout at 512x512.
    pub fn full_scale() -> Self {
        UNetConfig {
            depth: 4,
            base_channels: 64,
            convs_per_block: 2,
            kernel_size: 3,
            in_channels: 1,
            out_channels: 1,
            input_size: (512, 512),
        }
    }

    /// Small network for 64x64 synthetic data.
    pub fn desk_scale() -> Self {
        UNetConfig {
            depth: 3,
            base_channels: 16,
            input_size: (64, 64),
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.depth == 0 {
            problems.push("depth must be >= 1".to_string());
        }
        if self.depth > 16 {
            problems.push(format!("depth {} is unreasonably large", self.depth));
        }
        if self.base_channels == 0 {
            problems.push("base_channels must be >= 1".to_string());
        }
        if self.convs_per_block == 0 {
            problems.push("convs_per_block must be >= 1".to_string());
        }
        if self.kernel_size.is_multiple_of(2) {
            problems.push(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            problems.push("in_channels and out_channels must be >= 1".to_string());
        }
        let (h, w) = self.input_size;
        if self.depth <= 16 {
            let m = 1usize << self.depth;
            if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
                problems.push(format!(
                    "input_size {h}x{w} must be positive and divisible by 2^depth = {m}"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SegError::Config(problems.join("; ")))
        }
    }

    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Every conv layer in forward order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let k = self.kernel_size;
        let mut out = Vec::new();
        let block = |out: &mut Vec<LayerSpec>, prefix: &str, cin: usize, cout: usize| {
            for j in 0..self.convs_per_block {
                out.push(LayerSpec {
                    name: format!("{prefix}.conv{j}"),
                    in_channels: if j == 0 { cin } else { cout },
                    out_channels: cout,
                    kernel: k,
                });
            }
        };
        for i in 0..self.depth {
            let cin = if i == 0 {
                self.in_channels
            } else {
                self.channels_at(i - 1)
            };
            block(&mut out, &format!("enc{i}"), cin, self.channels_at(i));
        }
        block(
            &mut out,
            "bottleneck",
            self.channels_at(self.depth - 1),
            self.channels_at(self.depth),
        );
        for i in (0..self.depth).rev() {
            out.push(LayerSpec {
                name: format!("dec{i}.up"),
                in_channels: self.channels_at(i + 1),
                out_channels: self.channels_at(i),
                kernel: k,
            });
            block(
                &mut out,
                &format!("dec{i}"),
                2 * self.channels_at(i),
                self.channels_at(i),
            );
        }
        out.push(LayerSpec {
            name: "head".to_string(),
            in_channels: self.base_channels,
            out_channels: self.out_channels,
            kernel: 1,
        });
        out
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        if s.c != self.in_channels {
            return Err(SegError::shape("unet forward", "input channels", s.c, self.in_channels));
        }
        let m = 1usize << self.depth;
        if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) {
            return Err(SegError::invalid(
                "unet forward",
                format!("input {}x{} is not divisible by 2^depth = {m}", s.h, s.w),
            ));
        }
        Ok(())
    }
}

/// Shape description of one conv layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl LayerSpec {
    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Learned parameters, one [`ConvLayer`] per entry of [`UNetConfig::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    config: UNetConfig,
    layers: Vec<ConvLayer<T>>,
}

impl<T: Real> ModelParams<T> {
    /// He-initialized weights (`std = sqrt(2 / fan_in)`) and zero biases,
    /// reproducible from `seed`.
    pub fn build(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layers()
            .into_iter()
            .map(|spec| {
                let fan_in = spec.in_channels * spec.kernel * spec.kernel;
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let ws = spec.weight_shape();
                let weight = Tensor::from_fn(ws, |_, _, _, _| T::of(normal.sample(&mut rng)));
                ConvLayer {
                    bias: Tensor::zeros(spec.bias_shape()),
                    weight,
                    name: spec.name,
                }
            })
            .collect();
        Ok(ModelParams { config, layers })
    }

    /// Assembles parameters from existing layers, checking names and shapes
    /// against `config`.
    pub fn from_layers(config: UNetConfig, layers: Vec<ConvLayer<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.layers();
        if specs.len() != layers.len() {
            return Err(SegError::ModelFile(format!(
                "expected {} conv layers for this config, found {}",
                specs.len(),
                layers.len()
            )));
        }
        for (spec, layer) in specs.iter().zip(&layers) {
            if spec.name != layer.name {
                return Err(SegError::ModelFile(format!(
                    "expected layer {}, found {}",
                    spec.name, layer.name
                )));
            }
            if layer.weight.shape() != spec.weight_shape() || layer.bias.shape() != spec.bias_shape() {
                return Err(SegError::ModelFile(format!(
                    "layer {} has weight {} / bias {}, expected {} / {}",
                    spec.name,
                    layer.weight.shape(),
                    layer.bias.shape(),
                    spec.weight_shape(),
                    spec.bias_shape()
                )));
            }
        }
        Ok(ModelParams { config, layers })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.numel() + l.bias.numel()).sum()
    }

    /// Weights and biases interleaved, in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    name: l.name.clone(),
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Gradient-free forward pass: `(n, 1, h, w)` probabilities.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Eager::new();
        let params: Vec<_> = self
            .layers
            .iter()
            .map(|l| (Cow::Borrowed(&l.weight), Cow::Borrowed(&l.bias)))
            .collect();
        let out = forward_graph(&self.config, &mut g, &params, Cow::Borrowed(x))?;
        Ok(out.into_owned())
    }

    /// Records a forward pass on `tape`. Returns the probability map and the
    /// `(weight, bias)` leaf of every layer, in layer order.
    pub fn forward_tape(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<(Var, Var)>)> {
        let params: Vec<(Var, Var)> = self
            .layers
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let out = forward_graph(&self.config, tape, &params, x)?;
        Ok((out, params))
    }
}

/// The U-Net forward computation over any [`Graph`]. `params` must follow
/// [`UNetConfig::layers`] order.
pub fn forward_graph<T: Real, G: Graph<T>>(
    config: &UNetConfig,
    g: &mut G,
    params: &[(G::Node, G::Node)],
    x: G::Node,
) -> Result<G::Node> {
    config.check_input(g.shape(&x))?;
    if params.len() != config.layers().len() {
        return Err(SegError::invalid(
            "unet forward",
            "parameter count does not match config",
        ));
    }
    let mut next = params.iter();
    let mut conv = |g: &mut G, x: &G::Node, activate: bool| -> Result<G::Node> {
        let (w, b) = next.next().expect("layer count checked above");
        let y = g.conv2d(x, w, b, Padding::Same)?;
        Ok(if activate { g.relu(&y) } else { y })
    };
    let block = |g: &mut G, conv: &mut dyn FnMut(&mut G, &G::Node, bool) -> Result<G::Node>, x: G::Node| {
        let mut h = x;
        for _ in 0..config.convs_per_block {
            h = conv(g, &h, true)?;
        }
        Ok::<_, SegError>(h)
    };

    let mut skips = Vec::with_capacity(config.depth);
    let mut h = x;
    for _ in 0..config.depth {
        let feat = block(g, &mut conv, h)?;
        h = g.maxpool2x2(&feat)?;
        skips.push(feat);
    }
    h = block(g, &mut conv, h)?;
    for _ in 0..config.depth {
        let skip = skips.pop().expect("one skip per level");
        let up = g.upsample_nearest2x(&h);
        let up = conv(g, &up, true)?;
        let (su, ss) = (g.shape(&up), g.shape(&skip));
        if (su.n, su.h, su.w) != (ss.n, ss.h, ss.w) {
            return Err(SegError::invalid(
                "unet skip connection",
                format!("decoder tensor {su} does not align with encoder tensor {ss}"),
            ));
        }
        let cat = g.concat_channels(&skip, &up)?;
        h = block(g, &mut conv, cat)?;
    }
    let logits = conv(g, &h, false)?;
    Ok(g.sigmoid(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> UNetConfig {
        UNetConfig {
            depth: 1,
            base_channels: 2,
            input_size: (8, 8),
            ..UNetConfig::desk_scale()
        }
    }

    #[test]
    fn layer_shapes_follow_the_config() {
        let cfg = UNetConfig {
            base_channels: 16,
            ..UNetConfig::desk_scale()
        };
        let p = ModelParams::<f32>::build(cfg, 1).unwrap();
        assert_eq!(p.layers()[0].weight.shape(), Shape::new(16, 1, 3, 3));
        assert_eq!(p.layers().last().unwrap().weight.shape(), Shape::new(1, 16, 1, 1));

        // channel bookkeeping derived independently of layers()
        for l in p.layers() {
            let level = |s: &str| s[3..4].parse::<usize>().unwrap();
            let b = cfg.base_channels;
            let expect = if l.name.starts_with("enc") {
                let i = level(&l.name);
                let cin = if l.name.ends_with("conv0") {
                    if i == 0 {
                        1
                    } else {
                        b << (i - 1)
                    }
                } else {
                    b << i
                };
                (b << i, cin)
            } else if l.name.starts_with("bottleneck") {
                let d = cfg.depth;
                (
                    b << d,
                    if l.name.ends_with("conv0") {
                        b << (d - 1)
                    } else {
                        b << d
                    },
                )
            } else if l.name.ends_with(".up") {
                let i = level(&l.name);
                (b << i, b << (i + 1))
            } else if l.name.starts_with("dec") {
                let i = level(&l.name);
                (
                    b << i,
                    if l.name.ends_with("conv0") {
                        (b << i) + (b << i)
                    } else {
                        b << i
                    },
                )
            } else {
                (1, b)
            };
            let s = l.weight.shape();
            assert_eq!((s.n, s.c), expect, "{}", l.name);
            assert_eq!(l.bias.shape(), Shape::new(1, s.n, 1, 1));
        }
        // 3 encoder blocks + bottleneck + 3 decoder blocks (up + 2) + head
        assert_eq!(p.layers().len(), 3 * 2 + 2 + 3 * 3 + 1);
    }

    #[test]
    fn names_are_unique() {
        let cfg = UNetConfig::desk_scale();
        let names: std::collections::HashSet<_> = cfg.layers().into_iter().map(|l| l.name).collect();
        assert_eq!(names.len(), cfg.layers().len());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = ModelParams::<f64>::build(tiny(), 42).unwrap();
        let b = ModelParams::<f64>::build(tiny(), 42).unwrap();
        let c = ModelParams::<f64>::build(tiny(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers().iter().all(|l| l.bias.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = UNetConfig {
            kernel_size: 4,
            input_size: (60, 64),
            ..UNetConfig::desk_scale()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("kernel_size") && msg.contains("divisible"), "{msg}");
        assert!(ModelParams::<f32>::build(UNetConfig { depth: 0, ..tiny() }, 0).is_err());
    }

    #[test]
    fn forward_keeps_shape_and_range() {
        let p = ModelParams::<f32>::build(
            UNetConfig {
                base_channels: 4,
                ..UNetConfig::desk_scale()
            },
            3,
        )
        .unwrap();
        let x = Tensor::from_fn(Shape::new(2, 1, 64, 64), |n, _, y, x| ((n + y * x) % 7) as f32 / 7.0);
        let y = p.forward(&x).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 1, 64, 64));
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(y, p.forward(&x).unwrap());

        let bad = Tensor::zeros(Shape::new(1, 1, 60, 64));
        assert!(p.forward(&bad).is_err());
    }

    #[test]
    fn tape_and_eager_forward_agree() {
        let p = ModelParams::<f64>::build(tiny(), 5).unwrap();
        let x = Tensor::from_fn(Shape::new(1, 1, 8, 8), |_, _, y, x| (y as f64 - x as f64) / 8.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (out, params) = p.forward_tape(&mut tape, xv).unwrap();
        assert_eq!(params.len(), p.layers().len());
        assert_eq!(tape.value(out), &p.forward(&x).unwrap());
    }
}
