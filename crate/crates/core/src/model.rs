//! The miniature densely connected network.
//!
//! Layout: a 3×3 stem convolution with ReLU and 2×2 max pooling, then dense
//! blocks separated by transition layers, then global average pooling and a
//! two-logit fully connected head. A dense layer is
//! `1×1 conv → ReLU → 3×3 conv → ReLU` and its output is concatenated to the
//! layer's input. A transition is a 1×1 compression conv followed by 2×2
//! average pooling. The PA score is the softmax probability of class 1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, PoolMode};
use crate::tensor::Tensor;

/// Index of the presentation-attack logit.
pub const PA_CLASS: usize = 1;
pub const BONAFIDE_CLASS: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Side length of the square grayscale input.
    pub input_size: usize,
    pub stem_filters: usize,
    /// Channels appended by every dense layer.
    pub growth_rate: usize,
    /// Dense layers per block; one entry per block.
    pub block_layers: Vec<usize>,
    /// Fraction of channels kept by each transition layer.
    pub compression: f64,
    /// Width of the 1×1 bottleneck conv as a multiple of the growth rate.
    pub bottleneck_factor: usize,
    pub num_classes: usize,
    /// Inputs are standardized as `(x − input_mean) / input_std` before the stem.
    #[serde(default = "default_input_mean")]
    pub input_mean: f64,
    #[serde(default = "default_input_std")]
    pub input_std: f64,
}

fn default_input_mean() -> f64 {
    0.45
}

fn default_input_std() -> f64 {
    0.2
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            stem_filters: 16,
            growth_rate: 8,
            block_layers: vec![2, 2, 2, 2],
            compression: 0.5,
            bottleneck_factor: 2,
            num_classes: 2,
            input_mean: default_input_mean(),
            input_std: default_input_std(),
        }
    }
}

/// Channel and resolution bookkeeping for one dense block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial side length inside the block.
    pub size: usize,
    /// Output channels of the following transition, if any.
    pub transition_channels: Option<usize>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_layers.is_empty() {
            return Err(Error::config("at least one dense block is required"));
        }
        if self.block_layers.contains(&0) {
            return Err(Error::config("every dense block needs at least one layer"));
        }
        if self.growth_rate == 0 || self.stem_filters == 0 || self.bottleneck_factor == 0 {
            return Err(Error::config("growth_rate, stem_filters and bottleneck_factor must be >= 1"));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::config(format!("compression {} outside (0, 1]", self.compression)));
        }
        if !self.input_mean.is_finite() || !(self.input_std > 0.0) || !self.input_std.is_finite() {
            return Err(Error::config("input_mean must be finite and input_std positive"));
        }
        if self.num_classes != 2 {
            return Err(Error::config("only the binary bonafide/PA head is supported"));
        }
        // Stem pooling plus one pooling per transition each halve the resolution.
        let halvings = self.block_layers.len() as u32;
        if self.input_size >> halvings == 0 || self.input_size < 2 {
            return Err(Error::config(format!(
                "input_size {} too small for {} pooling stages",
                self.input_size, halvings
            )));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.bottleneck_factor * self.growth_rate
    }

    pub fn block_shapes(&self) -> Result<Vec<BlockShape>> {
        self.validate()?;
        let mut shapes = Vec::with_capacity(self.block_layers.len());
        let mut channels = self.stem_filters;
        let mut size = self.input_size / 2;
        for (b, &layers) in self.block_layers.iter().enumerate() {
            let out = channels + layers * self.growth_rate;
            let last = b + 1 == self.block_layers.len();
            let transition = (!last).then(|| ((out as f64 * self.compression).floor() as usize).max(1));
            shapes.push(BlockShape {
                in_channels: channels,
                out_channels: out,
                size,
                transition_channels: transition,
            });
            if let Some(t) = transition {
                channels = t;
                size /= 2;
            }
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone)]
struct Conv {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn he(out_c: usize, in_c: usize, k: usize, pad: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / (in_c * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        Self {
            weight: Tensor::from_fn(&[out_c, in_c, k, k], |_| normal.sample(rng)),
            bias: Tensor::zeros(&[out_c]),
            stride: 1,
            pad,
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        nn::conv2d(x, &self.weight, &self.bias, self.stride, self.pad)
    }

    /// Returns the input gradient and pushes `bias`, `weight` gradients onto `grads`.
    fn backward(&self, x: &Tensor, grad_out: &Tensor, grads: &mut Vec<Tensor>) -> Result<Tensor> {
        let mut g = nn::conv2d_backward(x, &self.weight, self.stride, self.pad, grad_out)?;
        grads.push(g.take_param("bias"));
        grads.push(g.take_param("weight"));
        Ok(g.input)
    }
}

#[derive(Debug, Clone)]
struct DenseLayer {
    bottleneck: Conv,
    conv: Conv,
}

/// A built network: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    stem: Conv,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Conv>,
    head_weight: Tensor,
    head_bias: Tensor,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Tensor,
    bottleneck_pre: Tensor,
    bottleneck_act: Tensor,
    conv_pre: Tensor,
}

#[derive(Debug, Clone)]
struct BlockCache {
    layers: Vec<LayerCache>,
    output: Tensor,
}

/// Every intermediate needed to run the backward pass for one batch.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Tensor,
    stem_pre: Tensor,
    stem_act: Tensor,
    blocks: Vec<BlockCache>,
    transition_pre: Vec<Tensor>,
    pooled_features: Tensor,
    logits: Tensor,
    probs: Tensor,
}

/// Per-sample forward result.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Softmax probability of the PA class.
    pub score: f64,
    pub logits: Vec<f64>,
    /// Output of each dense block, `[1,C,h,w]`; the last one feeds the head.
    pub block_features: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn bonafide_probability(&self) -> f64 {
        1.0 - self.score
    }

    pub fn last_block_activations(&self) -> &Tensor {
        self.block_features.last().expect("at least one block")
    }
}

/// Output of [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Parameter gradients, in [`Model::parameters`] order.
    pub params: Vec<Tensor>,
    /// Gradient of the backpropagated scalar w.r.t. each dense block output.
    pub block_outputs: Vec<Tensor>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    /// PA scores for every sample of the batch.
    pub fn scores(&self) -> Vec<f64> {
        self.probs.data().chunks_exact(2).map(|p| p[PA_CLASS]).collect()
    }

    pub fn block_output(&self, block: usize) -> &Tensor {
        &self.blocks[block].output
    }

    pub fn trace(&self, index: usize) -> Result<ForwardTrace> {
        let logits = self.logits.item(index)?.into_data();
        let score = self.probs.data()[index * 2 + PA_CLASS];
        let block_features = self
            .blocks
            .iter()
            .map(|b| b.output.item(index))
            .collect::<Result<_>>()?;
        Ok(ForwardTrace {
            score,
            logits,
            block_features,
        })
    }
}

impl Model {
    /// Builds a network with He-normal weights and zero biases drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let shapes = config.block_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = Conv::he(config.stem_filters, 1, 3, 1, &mut rng);
        let mut blocks = Vec::with_capacity(shapes.len());
        let mut transitions = Vec::new();
        for shape in &shapes {
            let mut layers = Vec::new();
            let mut channels = shape.in_channels;
            for _ in 0..config.block_layers[blocks.len()] {
                layers.push(DenseLayer {
                    bottleneck: Conv::he(config.bottleneck_channels(), channels, 1, 0, &mut rng),
                    conv: Conv::he(config.growth_rate, config.bottleneck_channels(), 3, 1, &mut rng),
                });
                channels += config.growth_rate;
            }
            blocks.push(layers);
            if let Some(t) = shape.transition_channels {
                transitions.push(Conv::he(t, shape.out_channels, 1, 0, &mut rng));
            }
        }
        let features = shapes.last().expect("validated").out_channels;
        let std = (1.0 / features as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("valid std");
        let head_weight = Tensor::from_fn(&[config.num_classes, features], |_| normal.sample(&mut rng));
        Ok(Self {
            config,
            stem,
            blocks,
            transitions,
            head_weight,
            head_bias: Tensor::zeros(&[2]),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Named parameters in canonical order.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("stem.weight".to_string(), &self.stem.weight),
            ("stem.bias".to_string(), &self.stem.bias),
        ];
        for (b, layers) in self.blocks.iter().enumerate() {
            for (l, layer) in layers.iter().enumerate() {
                let p = format!("block{b}.layer{l}");
                out.push((format!("{p}.bottleneck.weight"), &layer.bottleneck.weight));
                out.push((format!("{p}.bottleneck.bias"), &layer.bottleneck.bias));
                out.push((format!("{p}.conv.weight"), &layer.conv.weight));
                out.push((format!("{p}.conv.bias"), &layer.conv.bias));
            }
            if let Some(t) = self.transitions.get(b) {
                out.push((format!("transition{b}.weight"), &t.weight));
                out.push((format!("transition{b}.bias"), &t.bias));
            }
        }
        out.push(("head.weight".to_string(), &self.head_weight));
        out.push(("head.bias".to_string(), &self.head_bias));
        out
    }

    /// Mutable parameters in the same order as [`Model::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.stem.weight, &mut self.stem.bias];
        let mut transitions = self.transitions.iter_mut();
        for layers in self.blocks.iter_mut() {
            for layer in layers.iter_mut() {
                out.push(&mut layer.bottleneck.weight);
                out.push(&mut layer.bottleneck.bias);
                out.push(&mut layer.conv.weight);
                out.push(&mut layer.conv.bias);
            }
            if let Some(t) = transitions.next() {
                out.push(&mut t.weight);
                out.push(&mut t.bias);
            }
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let s = self.config.input_size;
        match batch.shape() {
            [_, 1, h, w] if *h == s && *w == s => Ok(()),
            other => Err(Error::shape(format!(
                "model expects [N,1,{s},{s}] input, got {other:?}"
            ))),
        }
    }

    /// Runs a batch `[N,1,S,S]` and keeps every intermediate for backpropagation.
    pub fn forward_batch(&self, batch: &Tensor) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let (mean, std) = (self.config.input_mean, self.config.input_std);
        let input = batch.map(|v| (v - mean) / std);
        let stem_pre = self.stem.forward(&input)?;
        let stem_act = nn::relu(&stem_pre);
        let mut x = nn::pool2d(&stem_act, PoolMode::Max, 2, 2)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut transition_pre = Vec::with_capacity(self.transitions.len());
        for (b, layers) in self.blocks.iter().enumerate() {
            let mut caches = Vec::with_capacity(layers.len());
            for layer in layers {
                let bottleneck_pre = layer.bottleneck.forward(&x)?;
                let bottleneck_act = nn::relu(&bottleneck_pre);
                let conv_pre = layer.conv.forward(&bottleneck_act)?;
                let out = nn::relu(&conv_pre);
                let next = nn::concat_channels(&[&x, &out])?;
                caches.push(LayerCache {
                    input: x,
                    bottleneck_pre,
                    bottleneck_act,
                    conv_pre,
                });
                x = next;
            }
            let output = x.clone();
            if let Some(t) = self.transitions.get(b) {
                let pre = t.forward(&output)?;
                x = nn::pool2d(&pre, PoolMode::Avg, 2, 2)?;
                transition_pre.push(pre);
            }
            blocks.push(BlockCache {
                layers: caches,
                output,
            });
        }
        let pooled_features = nn::global_avg_pool(&x)?;
        let logits = nn::linear(&pooled_features, &self.head_weight, &self.head_bias)?;
        let probs = nn::softmax(&logits)?;
        Ok(ForwardCache {
            input,
            stem_pre,
            stem_act,
            blocks,
            transition_pre,
            pooled_features,
            logits,
            probs,
        })
    }

    /// Forward pass for a single `[1,1,S,S]` image.
    pub fn forward(&self, image: &Tensor) -> Result<ForwardTrace> {
        if image.shape().first() != Some(&1) {
            return Err(Error::shape(format!(
                "forward expects a single image, got {:?}",
                image.shape()
            )));
        }
        self.forward_batch(image)?.trace(0)
    }

    pub fn scores(&self, batch: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward_batch(batch)?.scores())
    }

    /// Backpropagates `grad_logits` (`[N,2]`) through the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        if grad_logits.shape() != cache.logits.shape() {
            return Err(Error::shape("grad_logits must match the logits shape"));
        }
        // Gradients are pushed in reverse canonical order and flipped at the end.
        let mut grads = Vec::new();
        let head = nn::linear_backward(&cache.pooled_features, &self.head_weight, grad_logits)?;
        grads.push(head.param("bias").clone());
        grads.push(head.param("weight").clone());
        let last = cache.blocks.last().expect("at least one block");
        let mut g = nn::global_avg_pool_backward(last.output.shape(), &head.input)?;

        let mut block_outputs = vec![None; self.blocks.len()];
        for b in (0..self.blocks.len()).rev() {
            let block = &cache.blocks[b];
            block_outputs[b] = Some(g.clone());
            for (layer, lc) in self.blocks[b].iter().zip(&block.layers).rev() {
                let in_c = lc.input.shape()[1];
                let mut parts = nn::split_channels(&g, &[in_c, self.config.growth_rate])?;
                let g_out = parts.pop().expect("two parts");
                let g_prefix = parts.pop().expect("two parts");
                let g_conv = nn::relu_backward(&lc.conv_pre, &g_out)?;
                let g_act = layer.conv.backward(&lc.bottleneck_act, &g_conv, &mut grads)?;
                let g_pre = nn::relu_backward(&lc.bottleneck_pre, &g_act)?;
                let g_in = layer.bottleneck.backward(&lc.input, &g_pre, &mut grads)?;
                g = add(&g_prefix, &g_in)?;
            }
            if b > 0 {
                let t = &self.transitions[b - 1];
                let pre = &cache.transition_pre[b - 1];
                let g_pre = nn::pool2d_backward(pre, PoolMode::Avg, 2, 2, &g)?;
                g = t.backward(&cache.blocks[b - 1].output, &g_pre, &mut grads)?;
            }
        }
        let g_act = nn::pool2d_backward(&cache.stem_act, PoolMode::Max, 2, 2, &g)?;
        let g_pre = nn::relu_backward(&cache.stem_pre, &g_act)?;
        self.stem.backward(&cache.input, &g_pre, &mut grads)?;
        grads.reverse();
        Ok(Gradients {
            params: grads,
            block_outputs: block_outputs.into_iter().map(|g| g.expect("filled")).collect(),
        })
    }

    /// Replaces every parameter from a name→tensor list; names and shapes must match exactly.
    pub(crate) fn load_parameters(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if named.len() != expected.len() {
            return Err(Error::format(
                "parameters",
                format!("expected {} tensors, found {}", expected.len(), named.len()),
            ));
        }
        for ((name, shape), (got_name, got)) in expected.iter().zip(&named) {
            if name != got_name || shape != got.shape() {
                return Err(Error::format(
                    "parameters",
                    format!(
                        "expected {name} {shape:?}, found {got_name} {:?}",
                        got.shape()
                    ),
                ));
            }
        }
        for (slot, (_, t)) in self.parameters_mut().into_iter().zip(named) {
            *slot = t;
        }
        Ok(())
    }
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("elementwise add of mismatched tensors"));
    }
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
}
