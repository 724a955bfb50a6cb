use nalgebra::DMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::layers::{
    attention, attention_backward, feed_forward, feed_forward_backward, layer_norm, layer_norm_backward,
    AttentionCache, Dropout, FfnCache, NormCache,
};
use super::params::{Embedding, ModelParams, Tensor};
use crate::{Error, Result};

/// Embedded encoder inputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInput {
    /// `L × D`: `I` real tokens, then padding.
    pub src_tokens: Tensor,
    /// `L × D`: `(K − 1)·I` real tokens, then padding.
    pub ctx_tokens: Tensor,
    /// `true` marks padding.
    pub src_mask: Vec<bool>,
    pub ctx_mask: Vec<bool>,
    /// Real waypoint count `I`.
    pub waypoints: usize,
    src_values: Vec<f64>,
    ctx_values: Vec<f64>,
}

impl EncodedInput {
    pub fn src_padding(&self) -> usize {
        self.src_mask.iter().filter(|m| **m).count()
    }

    pub fn ctx_padding(&self) -> usize {
        self.ctx_mask.iter().filter(|m| **m).count()
    }
}

/// Raw regression outputs: `M_out` coefficients and `N_out` knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub coefficients: Vec<f64>,
    pub knots: Vec<f64>,
}

fn embed(e: &Embedding, positional: &Tensor, values: &[f64], len: usize) -> (Tensor, Vec<bool>) {
    let d = e.weight.ncols();
    let mut tokens = DMatrix::zeros(len, d);
    let mut mask = vec![true; len];
    for p in 0..len {
        for c in 0..d {
            tokens[(p, c)] = match values.get(p) {
                Some(x) => x * e.weight[(0, c)] + e.bias[(0, c)] + positional[(p, c)],
                None => e.padding[(0, c)],
            };
        }
        mask[p] = p >= values.len();
    }
    (tokens, mask)
}

/// Embed the source joint's `I` values and the other joints' values,
/// concatenated joint by joint (`(K − 1)·I` entries).
pub fn embed_and_encode(params: &ModelParams, source: &[f64], context: &[f64]) -> Result<EncodedInput> {
    let cfg = &params.config;
    let ii = source.len();
    if ii > cfg.max_waypoints {
        return Err(Error::UnsupportedLength { len: ii, max: cfg.max_waypoints });
    }
    if ii < 2 {
        return Err(Error::param("at least two waypoints are required"));
    }
    if context.len() != (cfg.joints - 1) * ii {
        return Err(Error::param(format!(
            "context holds {} values, expected {}",
            context.len(),
            (cfg.joints - 1) * ii
        )));
    }
    if source.iter().chain(context).any(|v| !v.is_finite()) {
        return Err(Error::param("non-finite joint value"));
    }
    embed_padded(params, source, context, ii)
}

/// [`embed_and_encode`] on padded arrays; entries past the real prefix are
/// never read.
pub fn embed_padded(params: &ModelParams, source: &[f64], context: &[f64], waypoints: usize) -> Result<EncodedInput> {
    let cfg = &params.config;
    let len = cfg.seq_len();
    let ctx_real = (cfg.joints - 1) * waypoints;
    if waypoints > cfg.max_waypoints {
        return Err(Error::UnsupportedLength { len: waypoints, max: cfg.max_waypoints });
    }
    if source.len() < waypoints || context.len() < ctx_real {
        return Err(Error::param("padded input shorter than its real prefix"));
    }
    let src_values = source[..waypoints].to_vec();
    let ctx_values = context[..ctx_real].to_vec();
    let (src_tokens, src_mask) = embed(&params.source_embedding, &params.positional, &src_values, len);
    let (ctx_tokens, ctx_mask) = embed(&params.context_embedding, &params.positional, &ctx_values, len);
    Ok(EncodedInput { src_tokens, ctx_tokens, src_mask, ctx_mask, waypoints, src_values, ctx_values })
}

#[derive(Debug, Clone)]
struct ContextCache {
    attention: AttentionCache,
    drop1: Dropout,
    norm1: NormCache,
    ffn: FfnCache,
    drop2: Dropout,
    norm2: NormCache,
}

#[derive(Debug, Clone)]
struct SourceCache {
    self_attention: AttentionCache,
    drop1: Dropout,
    norm1: NormCache,
    context_attention: AttentionCache,
    drop2: Dropout,
    norm2: NormCache,
    ffn: FfnCache,
    drop3: Dropout,
    norm3: NormCache,
}

/// Intermediate values of a forward pass, including sampled dropout masks.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: EncodedInput,
    drop_src: Dropout,
    drop_ctx: Dropout,
    context: Vec<ContextCache>,
    source: Vec<SourceCache>,
    coef: FfnCache,
    knot: FfnCache,
}

fn finite(t: &Tensor, what: impl FnOnce() -> String) -> Result<()> {
    if t.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBreakdown(what()))
    }
}

struct Pass<'p, 'r> {
    params: &'p ModelParams,
    rng: Option<&'r mut dyn RngCore>,
}

impl Pass<'_, '_> {
    fn dropout(&mut self, rows: usize, cols: usize) -> Dropout {
        let p = self.params.config.dropout;
        match self.rng.as_mut() {
            Some(r) => Dropout::sample(Some(&mut **r), rows, cols, p),
            None => Dropout::sample(None, rows, cols, p),
        }
    }

    fn context_stack(&mut self, x: Tensor, mask: &[bool]) -> Result<(Tensor, Vec<ContextCache>)> {
        let heads = self.params.config.heads;
        let mut x = x;
        let mut caches = Vec::with_capacity(self.params.context_layers.len());
        for (i, layer) in self.params.context_layers.iter().enumerate() {
            let (a, attention_cache) = attention(&layer.attention, heads, &x, &x, mask);
            let drop1 = self.dropout(a.nrows(), a.ncols());
            let (h1, norm1) = layer_norm(&layer.norm1, &(&x + drop1.apply(a)));
            let (f, ffn) = feed_forward(&layer.ffn, &h1);
            let drop2 = self.dropout(f.nrows(), f.ncols());
            let (out, norm2) = layer_norm(&layer.norm2, &(&h1 + drop2.apply(f)));
            finite(&out, || format!("context layer {i}"))?;
            caches.push(ContextCache { attention: attention_cache, drop1, norm1, ffn, drop2, norm2 });
            x = out;
        }
        Ok((x, caches))
    }

    fn source_stack(
        &mut self,
        s: Tensor,
        memory: &Tensor,
        src_mask: &[bool],
        ctx_mask: &[bool],
    ) -> Result<(Tensor, Vec<SourceCache>)> {
        let heads = self.params.config.heads;
        let mut s = s;
        let mut caches = Vec::with_capacity(self.params.source_layers.len());
        for (i, layer) in self.params.source_layers.iter().enumerate() {
            let (a, self_attention) = attention(&layer.self_attention, heads, &s, &s, src_mask);
            let drop1 = self.dropout(a.nrows(), a.ncols());
            let (h1, norm1) = layer_norm(&layer.norm1, &(&s + drop1.apply(a)));
            let (c, context_attention) = attention(&layer.context_attention, heads, &h1, memory, ctx_mask);
            let drop2 = self.dropout(c.nrows(), c.ncols());
            let (h2, norm2) = layer_norm(&layer.norm2, &(&h1 + drop2.apply(c)));
            let (f, ffn) = feed_forward(&layer.ffn, &h2);
            let drop3 = self.dropout(f.nrows(), f.ncols());
            let (out, norm3) = layer_norm(&layer.norm3, &(&h2 + drop3.apply(f)));
            finite(&out, || format!("source layer {i}"))?;
            caches.push(SourceCache {
                self_attention,
                drop1,
                norm1,
                context_attention,
                drop2,
                norm2,
                ffn,
                drop3,
                norm3,
            });
            s = out;
        }
        Ok((s, caches))
    }
}

/// Mean of the unmasked rows as a `1 × D` row.
fn pool(s: &Tensor, src_mask: &[bool]) -> Result<Tensor> {
    let live: Vec<usize> = (0..s.nrows()).filter(|&i| !src_mask[i]).collect();
    if live.is_empty() {
        return Err(Error::param("no unmasked source positions to pool"));
    }
    let mut out = DMatrix::zeros(1, s.ncols());
    for &i in &live {
        out += s.row(i);
    }
    Ok(out / live.len() as f64)
}

/// Context stack `C^{N_c}` without dropout.
pub fn context_encoder(params: &ModelParams, input: &EncodedInput) -> Result<Tensor> {
    let mut pass = Pass { params, rng: None };
    Ok(pass.context_stack(input.ctx_tokens.clone(), &input.ctx_mask)?.0)
}

/// Source stack `S^{N_s}` against a context memory, without dropout.
pub fn source_encoder(params: &ModelParams, input: &EncodedInput, memory: &Tensor) -> Result<Tensor> {
    if memory.shape() != input.ctx_tokens.shape() {
        return Err(Error::param(format!(
            "context memory is {:?}, expected {:?}",
            memory.shape(),
            input.ctx_tokens.shape()
        )));
    }
    let mut pass = Pass { params, rng: None };
    Ok(pass.source_stack(input.src_tokens.clone(), memory, &input.src_mask, &input.ctx_mask)?.0)
}

/// Masked mean pooling followed by the two regression heads.
pub fn output_heads(params: &ModelParams, s: &Tensor, src_mask: &[bool]) -> Result<ModelOutput> {
    let pooled = pool(s, src_mask)?;
    let (coef, _) = feed_forward(&params.coef_head, &pooled);
    let (knot, _) = feed_forward(&params.knot_head, &pooled);
    Ok(ModelOutput { coefficients: coef.iter().copied().collect(), knots: knot.iter().copied().collect() })
}

/// Inference pass; dropout is off.
pub fn forward(params: &ModelParams, input: &EncodedInput) -> Result<ModelOutput> {
    Ok(forward_cached(params, input, None)?.0)
}

/// Forward pass that records everything [`backward`] needs. Dropout masks
/// are drawn from `rng` when given.
pub fn forward_cached(
    params: &ModelParams,
    input: &EncodedInput,
    rng: Option<&mut dyn RngCore>,
) -> Result<(ModelOutput, ForwardCache)> {
    let mut pass = Pass { params, rng };
    let (l, d) = input.src_tokens.shape();
    let drop_ctx = pass.dropout(l, d);
    let drop_src = pass.dropout(l, d);
    let (memory, context) = pass.context_stack(drop_ctx.apply(input.ctx_tokens.clone()), &input.ctx_mask)?;
    let (s, source) =
        pass.source_stack(drop_src.apply(input.src_tokens.clone()), &memory, &input.src_mask, &input.ctx_mask)?;
    let pooled = pool(&s, &input.src_mask)?;
    let (coef_out, coef) = feed_forward(&params.coef_head, &pooled);
    let (knot_out, knot) = feed_forward(&params.knot_head, &pooled);
    finite(&coef_out, || "coefficient head".into())?;
    finite(&knot_out, || "knot head".into())?;
    let output =
        ModelOutput { coefficients: coef_out.iter().copied().collect(), knots: knot_out.iter().copied().collect() };
    Ok((output, ForwardCache { input: input.clone(), drop_src, drop_ctx, context, source, coef, knot }))
}

fn embed_backward(e: &mut Embedding, values: &[f64], d_tokens: &Tensor) {
    for p in 0..d_tokens.nrows() {
        let row = d_tokens.row(p);
        match values.get(p) {
            Some(x) => {
                e.weight += row * *x;
                e.bias += row;
            }
            None => e.padding += row,
        }
    }
}

/// Accumulate into `grads` the gradient of `dcoef·coef + dknot·knots`.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    dcoef: &[f64],
    dknot: &[f64],
    grads: &mut ModelParams,
) -> Result<()> {
    let cfg = &params.config;
    if dcoef.len() != cfg.coef_len() || dknot.len() != cfg.knot_len() {
        return Err(Error::param("output gradient lengths do not match the model"));
    }
    let heads = cfg.heads;
    let input = &cache.input;
    let dc = DMatrix::from_row_slice(1, dcoef.len(), dcoef);
    let dk = DMatrix::from_row_slice(1, dknot.len(), dknot);
    let dpool = feed_forward_backward(&params.coef_head, &cache.coef, &dc, &mut grads.coef_head)
        + feed_forward_backward(&params.knot_head, &cache.knot, &dk, &mut grads.knot_head);

    let (l, d) = input.src_tokens.shape();
    let live = input.waypoints as f64;
    let mut ds = DMatrix::zeros(l, d);
    for i in (0..l).filter(|&i| !input.src_mask[i]) {
        ds.row_mut(i).copy_from(&(&dpool / live));
    }

    let mut dmemory = DMatrix::zeros(l, d);
    for (i, (layer, c)) in params.source_layers.iter().zip(&cache.source).enumerate().rev() {
        let g = &mut grads.source_layers[i];
        let dx3 = layer_norm_backward(&layer.norm3, &c.norm3, &ds, &mut g.norm3);
        let dh2 = &dx3 + feed_forward_backward(&layer.ffn, &c.ffn, &c.drop3.apply(dx3.clone()), &mut g.ffn);
        let dx2 = layer_norm_backward(&layer.norm2, &c.norm2, &dh2, &mut g.norm2);
        let (dq, dm) = attention_backward(
            &layer.context_attention,
            heads,
            &c.context_attention,
            &c.drop2.apply(dx2.clone()),
            &input.ctx_mask,
            &mut g.context_attention,
        );
        dmemory += dm;
        let dh1 = dx2 + dq;
        let dx1 = layer_norm_backward(&layer.norm1, &c.norm1, &dh1, &mut g.norm1);
        let (dq, dkv) = attention_backward(
            &layer.self_attention,
            heads,
            &c.self_attention,
            &c.drop1.apply(dx1.clone()),
            &input.src_mask,
            &mut g.self_attention,
        );
        ds = dx1 + dq + dkv;
    }
    embed_backward(&mut grads.source_embedding, &input.src_values, &cache.drop_src.apply(ds));

    let mut dx = dmemory;
    for (i, (layer, c)) in params.context_layers.iter().zip(&cache.context).enumerate().rev() {
        let g = &mut grads.context_layers[i];
        let dx2 = layer_norm_backward(&layer.norm2, &c.norm2, &dx, &mut g.norm2);
        let dh1 = &dx2 + feed_forward_backward(&layer.ffn, &c.ffn, &c.drop2.apply(dx2.clone()), &mut g.ffn);
        let dx1 = layer_norm_backward(&layer.norm1, &c.norm1, &dh1, &mut g.norm1);
        let (dq, dkv) = attention_backward(
            &layer.attention,
            heads,
            &c.attention,
            &c.drop1.apply(dx1.clone()),
            &input.ctx_mask,
            &mut g.attention,
        );
        dx = dx1 + dq + dkv;
    }
    embed_backward(&mut grads.context_embedding, &input.ctx_values, &cache.drop_ctx.apply(dx));
    Ok(())
}

/// Embeds raw joint values and runs inference.
pub fn predict(params: &ModelParams, source: &[f64], context: &[f64]) -> Result<ModelOutput> {
    forward(params, &embed_and_encode(params, source, context)?)
}
