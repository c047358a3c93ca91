//! Unmasked multi-head scaled dot-product self-attention.

use num_traits::Float;
use alloc::format;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::params::{uniform, Bound, ParamId};
use crate::{Graph, ParamStore, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionSpec {
    pub embed_dim: usize,
    pub num_heads: usize,
}

impl AttentionSpec {
    pub fn new(embed_dim: usize, num_heads: usize) -> Result<Self> {
        let spec = Self { embed_dim, num_heads };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Query/key/value/output projections (`[d, d]` weights, `[d]` biases).
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub spec: AttentionSpec,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionWeights {
    pub fn new<T: Real>(spec: AttentionSpec, store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let d = spec.embed_dim;
        let bound = 1.0 / Float::sqrt(d as f64);
        let mut proj = |name: &str| {
            let w = store.add(&format!("{prefix}.{name}.weight"), uniform(rng, &[d, d], bound));
            let b = store.add(&format!("{prefix}.{name}.bias"), Tensor::zeros(&[d]));
            (w, b)
        };
        let (wq, bq) = proj("query");
        let (wk, bk) = proj("key");
        let (wv, bv) = proj("value");
        let (wo, bo) = proj("output");
        Ok(Self {
            spec,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        })
    }
}

/// `[B,T,d] -> [B·h, T, d_k]`.
fn split_heads<T: Real>(g: &mut Graph<T>, x: Var, b: usize, t: usize, h: usize, dk: usize) -> Result<Var> {
    let x = crate::ops::reshape(g, x, &[b, t, h, dk])?;
    let x = crate::ops::permute(g, x, &[0, 2, 1, 3])?;
    crate::ops::reshape(g, x, &[b * h, t, dk])
}

/// `Concat(head_1..head_h)·W_O` with `head_i = softmax(Q_i K_iᵀ / sqrt(d_k)) V_i`,
/// where Q, K, V are affine projections of `x [B,T,d]`.
pub fn multi_head_attention<T: Real>(g: &mut Graph<T>, x: Var, w: &AttentionWeights, p: &Bound) -> Result<Var> {
    let spec = w.spec;
    spec.validate()?;
    let shape = g.shape(x).to_vec();
    if shape.len() != 3 || shape[2] != spec.embed_dim {
        return Err(shape_err(
            "multi_head_attention",
            format!("expected [B,T,{}], got {shape:?}", spec.embed_dim),
        ));
    }
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    let (h, dk) = (spec.num_heads, spec.head_dim());
    let q = crate::ops::linear(g, x, p[w.wq], p[w.bq])?;
    let k = crate::ops::linear(g, x, p[w.wk], p[w.bk])?;
    let v = crate::ops::linear(g, x, p[w.wv], p[w.bv])?;
    let q = split_heads(g, q, b, t, h, dk)?;
    let k = split_heads(g, k, b, t, h, dk)?;
    let v = split_heads(g, v, b, t, h, dk)?;
    let scores = crate::ops::batched_matmul(g, q, k, true)?;
    let scores = crate::ops::scale(g, scores, T::one() / T::lit(dk as f64).sqrt());
    let attn = crate::ops::softmax(g, scores, 2)?;
    let heads = crate::ops::batched_matmul(g, attn, v, false)?;
    let heads = crate::ops::reshape(g, heads, &[b, h, t, dk])?;
    let heads = crate::ops::permute(g, heads, &[0, 2, 1, 3])?;
    let concat = crate::ops::reshape(g, heads, &[b, t, d])?;
    crate::ops::linear(g, concat, p[w.wo], p[w.bo])
}
