use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::Result;

pub type Tensor = DMatrix<f64>;

/// Fixed-order access to every tensor of a parameter group.
pub trait Tensors {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>);
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>);
    fn push_names(&self, prefix: &str, out: &mut Vec<String>);
}

/// `y = x·W + b` with `W` of shape `in × out` and `b` a `1 × out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn xavier(r: &mut impl Rng, inputs: usize, outputs: usize) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(inputs, outputs, |_, _| r.random_range(-limit..limit)),
            bias: DMatrix::zeros(1, outputs),
        }
    }
}

impl Tensors for Linear {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([&self.weight, &self.bias]);
    }
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.weight, &mut self.bias]);
    }
    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        out.extend([format!("{prefix}.weight"), format!("{prefix}.bias")]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn unit(d: usize) -> Self {
        Self { gain: DMatrix::from_element(1, d, 1.0), bias: DMatrix::zeros(1, d) }
    }
}

impl Tensors for LayerNorm {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([&self.gain, &self.bias]);
    }
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.gain, &mut self.bias]);
    }
    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        out.extend([format!("{prefix}.gain"), format!("{prefix}.bias")]);
    }
}

/// Multi-head attention; heads are contiguous column blocks of the projections.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl Attention {
    fn xavier(r: &mut impl Rng, d: usize) -> Self {
        Self {
            query: Linear::xavier(r, d, d),
            key: Linear::xavier(r, d, d),
            value: Linear::xavier(r, d, d),
            output: Linear::xavier(r, d, d),
        }
    }
}

impl Tensors for Attention {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        for l in [&self.query, &self.key, &self.value, &self.output] {
            l.push_refs(out);
        }
    }
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for l in [&mut self.query, &mut self.key, &mut self.value, &mut self.output] {
            l.push_muts(out);
        }
    }
    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        for (name, l) in [("query", &self.query), ("key", &self.key), ("value", &self.value), ("output", &self.output)]
        {
            l.push_names(&format!("{prefix}.{name}"), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    fn xavier(r: &mut impl Rng, d: usize, hidden: usize, out: usize) -> Self {
        Self { inner: Linear::xavier(r, d, hidden), outer: Linear::xavier(r, hidden, out) }
    }
}

impl Tensors for FeedForward {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        self.inner.push_refs(out);
        self.outer.push_refs(out);
    }
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.inner.push_muts(out);
        self.outer.push_muts(out);
    }
    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        self.inner.push_names(&format!("{prefix}.inner"), out);
        self.outer.push_names(&format!("{prefix}.outer"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextLayer {
    pub attention: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl Tensors for ContextLayer {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        self.attention.push_refs(out);
        self.norm1.push_refs(out);
        self.ffn.push_refs(out);
        self.norm2.push_refs(out);
    }
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.attention.push_muts(out);
        self.norm1.push_muts(out);
        self.ffn.push_muts(out);
        self.norm2.push_muts(out);
    }
    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        self.attention.push_names(&format!("{prefix}.attention"), out);
        self.norm1.push_names(&format!("{prefix}.norm1"), out);
        self.ffn.push_names(&format!("{prefix}.ffn"), out);
        self.norm2.push_names(&format!("{prefix}.norm2"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceLayer {
    pub self_attention: Attention,
    pub norm1: LayerNorm,
    pub context_attention: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

impl Tensors for SourceLayer {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        self.self_attention.push_refs(out);
        self.norm1.push_refs(out);
        self.context_attention.push_refs(out);
        self.norm2.push_refs(out);
        self.ffn.push_refs(out);
        self.norm3.push_refs(out);
    }
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.self_attention.push_muts(out);
        self.norm1.push_muts(out);
        self.context_attention.push_muts(out);
        self.norm2.push_muts(out);
        self.ffn.push_muts(out);
        self.norm3.push_muts(out);
    }
    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        self.self_attention.push_names(&format!("{prefix}.self_attention"), out);
        self.norm1.push_names(&format!("{prefix}.norm1"), out);
        self.context_attention.push_names(&format!("{prefix}.context_attention"), out);
        self.norm2.push_names(&format!("{prefix}.norm2"), out);
        self.ffn.push_names(&format!("{prefix}.ffn"), out);
        self.norm3.push_names(&format!("{prefix}.norm3"), out);
    }
}

/// Scalar-to-token map `x·w + b` and the learned padding token.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub weight: Tensor,
    pub bias: Tensor,
    pub padding: Tensor,
}

impl Embedding {
    fn init(r: &mut impl Rng, d: usize) -> Self {
        let limit = (6.0 / (1 + d) as f64).sqrt();
        Self {
            weight: DMatrix::from_fn(1, d, |_, _| r.random_range(-limit..limit)),
            bias: DMatrix::zeros(1, d),
            padding: DMatrix::from_fn(1, d, |_, _| r.random_range(-0.1..0.1)),
        }
    }
}

impl Tensors for Embedding {
    fn push_refs<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([&self.weight, &self.bias, &self.padding]);
    }
    fn push_muts<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.extend([&mut self.weight, &mut self.bias, &mut self.padding]);
    }
    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        out.extend([format!("{prefix}.weight"), format!("{prefix}.bias"), format!("{prefix}.padding")]);
    }
}

/// All trainable tensors of the model plus its configuration and the fixed
/// positional table. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Sinusoidal `L × D` table; not trained.
    pub positional: Tensor,
    pub source_embedding: Embedding,
    pub context_embedding: Embedding,
    pub context_layers: Vec<ContextLayer>,
    pub source_layers: Vec<SourceLayer>,
    pub coef_head: FeedForward,
    pub knot_head: FeedForward,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (config.d_model, config.hidden());
        let source_embedding = Embedding::init(&mut r, d);
        let context_embedding = Embedding::init(&mut r, d);
        let context_layers = (0..config.context_layers)
            .map(|_| ContextLayer {
                attention: Attention::xavier(&mut r, d),
                norm1: LayerNorm::unit(d),
                ffn: FeedForward::xavier(&mut r, d, h, d),
                norm2: LayerNorm::unit(d),
            })
            .collect();
        let source_layers = (0..config.source_layers)
            .map(|_| SourceLayer {
                self_attention: Attention::xavier(&mut r, d),
                norm1: LayerNorm::unit(d),
                context_attention: Attention::xavier(&mut r, d),
                norm2: LayerNorm::unit(d),
                ffn: FeedForward::xavier(&mut r, d, h, d),
                norm3: LayerNorm::unit(d),
            })
            .collect();
        let coef_head = FeedForward::xavier(&mut r, d, h, config.coef_len());
        let knot_head = FeedForward::xavier(&mut r, d, h, config.knot_len());
        Ok(Self {
            config: config.clone(),
            positional: positional_encoding(config.seq_len(), d),
            source_embedding,
            context_embedding,
            context_layers,
            source_layers,
            coef_head,
            knot_head,
        })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.source_embedding.push_refs(&mut out);
        self.context_embedding.push_refs(&mut out);
        for l in &self.context_layers {
            l.push_refs(&mut out);
        }
        for l in &self.source_layers {
            l.push_refs(&mut out);
        }
        self.coef_head.push_refs(&mut out);
        self.knot_head.push_refs(&mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        self.source_embedding.push_muts(&mut out);
        self.context_embedding.push_muts(&mut out);
        for l in &mut self.context_layers {
            l.push_muts(&mut out);
        }
        for l in &mut self.source_layers {
            l.push_muts(&mut out);
        }
        self.coef_head.push_muts(&mut out);
        self.knot_head.push_muts(&mut out);
        out
    }

    /// Dotted names in [`ModelParams::tensors`] order.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.source_embedding.push_names("source_embedding", &mut out);
        self.context_embedding.push_names("context_embedding", &mut out);
        for (i, l) in self.context_layers.iter().enumerate() {
            l.push_names(&format!("context_layers.{i}"), &mut out);
        }
        for (i, l) in self.source_layers.iter().enumerate() {
            l.push_names(&format!("source_layers.{i}"), &mut out);
        }
        self.coef_head.push_names("coef_head", &mut out);
        self.knot_head.push_names("knot_head", &mut out);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.zip_apply(b, |x, y| *x += scale * y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            *t *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// `PE[p, 2i] = sin(p / 10000^(2i/D))`, `PE[p, 2i+1] = cos(p / 10000^(2i/D))`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    DMatrix::from_fn(len, d, |p, c| {
        let i = (c / 2) as f64;
        let angle = p as f64 / 10000f64.powf(2.0 * i / d as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
