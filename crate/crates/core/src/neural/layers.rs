//! Forward and reverse passes of the building blocks. Token matrices hold
//! one token per row.

use nalgebra::DMatrix;
use rand::Rng;

use super::params::{Attention, FeedForward, LayerNorm, Linear, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn linear(l: &Linear, x: &Tensor) -> Tensor {
    let mut y = x * &l.weight;
    for mut row in y.row_iter_mut() {
        row += &l.bias;
    }
    y
}

/// Accumulates parameter gradients into `g` and returns `∂/∂x`.
pub fn linear_backward(l: &Linear, x: &Tensor, dy: &Tensor, g: &mut Linear) -> Tensor {
    g.weight.gemm_tr(1.0, x, dy, 1.0);
    for row in dy.row_iter() {
        g.bias += row;
    }
    dy * l.weight.transpose()
}

#[derive(Debug, Clone)]
pub struct NormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

/// Per-row standardization followed by gain and bias.
pub fn layer_norm(n: &LayerNorm, x: &Tensor) -> (Tensor, NormCache) {
    let (rows, cols) = x.shape();
    let mut xhat = DMatrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.sum() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for j in 0..cols {
            xhat[(i, j)] = (x[(i, j)] - mean) * s;
        }
        inv_std.push(s);
    }
    let mut y = xhat.clone();
    for i in 0..rows {
        for j in 0..cols {
            y[(i, j)] = y[(i, j)] * n.gain[(0, j)] + n.bias[(0, j)];
        }
    }
    (y, NormCache { xhat, inv_std })
}

pub fn layer_norm_backward(n: &LayerNorm, cache: &NormCache, dy: &Tensor, g: &mut LayerNorm) -> Tensor {
    let (rows, cols) = dy.shape();
    let mut dx = DMatrix::zeros(rows, cols);
    let mut dxhat = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            g.gain[(0, j)] += dy[(i, j)] * cache.xhat[(i, j)];
            g.bias[(0, j)] += dy[(i, j)];
            dxhat[j] = dy[(i, j)] * n.gain[(0, j)];
        }
        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
        let mean_dx = dxhat.iter().enumerate().map(|(j, d)| d * cache.xhat[(i, j)]).sum::<f64>() / cols as f64;
        for j in 0..cols {
            dx[(i, j)] = cache.inv_std[i] * (dxhat[j] - mean_d - cache.xhat[(i, j)] * mean_dx);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    xq: Tensor,
    xkv: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per head, `queries × keys`; exactly zero at masked keys.
    weights: Vec<Tensor>,
    concat: Tensor,
}

impl AttentionCache {
    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }
}

/// Scaled dot-product attention of `xq` over `xkv`. `key_mask[j]` marks key
/// `j` as padding; it receives zero weight. A query with every key masked
/// gets a zero row before the output projection.
pub fn attention(
    a: &Attention,
    heads: usize,
    xq: &Tensor,
    xkv: &Tensor,
    key_mask: &[bool],
) -> (Tensor, AttentionCache) {
    let q = linear(&a.query, xq);
    let k = linear(&a.key, xkv);
    let v = linear(&a.value, xkv);
    let (lq, d) = q.shape();
    let lk = k.nrows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let live: Vec<usize> = (0..lk).filter(|&j| !key_mask[j]).collect();
    let mut concat = DMatrix::zeros(lq, d);
    let mut weights = Vec::with_capacity(heads);
    let mut scores = vec![0.0; live.len()];
    for h in 0..heads {
        let c0 = h * dh;
        let mut w = DMatrix::zeros(lq, lk);
        for i in 0..lq {
            if live.is_empty() {
                continue;
            }
            let mut top = f64::NEG_INFINITY;
            for (s, &j) in scores.iter_mut().zip(&live) {
                let mut dot = 0.0;
                for c in c0..c0 + dh {
                    dot += q[(i, c)] * k[(j, c)];
                }
                *s = dot * scale;
                top = top.max(*s);
            }
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - top).exp();
                total += *s;
            }
            for (s, &j) in scores.iter().zip(&live) {
                let p = s / total;
                w[(i, j)] = p;
                for c in c0..c0 + dh {
                    concat[(i, c)] += p * v[(j, c)];
                }
            }
        }
        weights.push(w);
    }
    let y = linear(&a.output, &concat);
    (y, AttentionCache { xq: xq.clone(), xkv: xkv.clone(), q, k, v, weights, concat })
}

/// Returns `(∂/∂xq, ∂/∂xkv)`.
pub fn attention_backward(
    a: &Attention,
    heads: usize,
    cache: &AttentionCache,
    dy: &Tensor,
    key_mask: &[bool],
    g: &mut Attention,
) -> (Tensor, Tensor) {
    let dconcat = linear_backward(&a.output, &cache.concat, dy, &mut g.output);
    let (lq, d) = cache.q.shape();
    let lk = cache.k.nrows();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let live: Vec<usize> = (0..lk).filter(|&j| !key_mask[j]).collect();
    let mut dq = DMatrix::zeros(lq, d);
    let mut dk = DMatrix::zeros(lk, d);
    let mut dv = DMatrix::zeros(lk, d);
    let mut dw = vec![0.0; live.len()];
    for h in 0..heads {
        let c0 = h * dh;
        let w = &cache.weights[h];
        for i in 0..lq {
            let mut inner = 0.0;
            for (slot, &j) in dw.iter_mut().zip(&live) {
                let mut dot = 0.0;
                for c in c0..c0 + dh {
                    dot += dconcat[(i, c)] * cache.v[(j, c)];
                    dv[(j, c)] += w[(i, j)] * dconcat[(i, c)];
                }
                *slot = dot;
                inner += w[(i, j)] * dot;
            }
            for (dwj, &j) in dw.iter().zip(&live) {
                let ds = w[(i, j)] * (dwj - inner) * scale;
                for c in c0..c0 + dh {
                    dq[(i, c)] += ds * cache.k[(j, c)];
                    dk[(j, c)] += ds * cache.q[(i, c)];
                }
            }
        }
    }
    let dxq = linear_backward(&a.query, &cache.xq, &dq, &mut g.query);
    let dxk = linear_backward(&a.key, &cache.xkv, &dk, &mut g.key);
    let dxv = linear_backward(&a.value, &cache.xkv, &dv, &mut g.value);
    (dxq, dxk + dxv)
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Tensor,
    pre: Tensor,
    hidden: Tensor,
}

/// `relu(x·W₁ + b₁)·W₂ + b₂`.
pub fn feed_forward(f: &FeedForward, x: &Tensor) -> (Tensor, FfnCache) {
    let pre = linear(&f.inner, x);
    let hidden = pre.map(|v| v.max(0.0));
    let y = linear(&f.outer, &hidden);
    (y, FfnCache { x: x.clone(), pre, hidden })
}

pub fn feed_forward_backward(f: &FeedForward, cache: &FfnCache, dy: &Tensor, g: &mut FeedForward) -> Tensor {
    let mut dh = linear_backward(&f.outer, &cache.hidden, dy, &mut g.outer);
    dh.zip_apply(&cache.pre, |d, p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    linear_backward(&f.inner, &cache.x, &dh, &mut g.inner)
}

/// Inverted dropout scales: `0` or `1/(1 − p)` per entry; `None` when off.
#[derive(Debug, Clone, Default)]
pub struct Dropout(Option<Tensor>);

impl Dropout {
    pub fn sample(r: Option<&mut dyn rand::RngCore>, rows: usize, cols: usize, p: f64) -> Self {
        match r {
            Some(r) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                Dropout(Some(DMatrix::from_fn(rows, cols, |_, _| if r.random::<f64>() < p { 0.0 } else { keep })))
            }
            _ => Dropout(None),
        }
    }

    /// Applies the mask; also its own reverse pass.
    pub fn apply(&self, x: Tensor) -> Tensor {
        match &self.0 {
            Some(m) => x.component_mul(m),
            None => x,
        }
    }
}
