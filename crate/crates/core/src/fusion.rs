//! Fusion of spatial and temporal token sequences: multi-head cross-attention
//! blocks, or a token-wise affine map of the concatenated features.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Queries come from the spatial tokens, keys and values from the temporal
/// tokens. Tokens are `[B, S, d]` and `[B, L, d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention {
    pub dim: usize,
    pub heads: usize,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl CrossAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {dim} is not divisible by {heads} attention heads"
            )));
        }
        let mut w = |n: &str| store.add_uniform(format!("{prefix}.{n}"), &[dim, dim], dim, rng);
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        let mut b = |n: &str| store.add_zeros(format!("{prefix}.{n}"), &[dim]);
        let (bq, bk, bv, bo) = (b("bq"), b("bk"), b("bv"), b("bo"));
        Ok(Self {
            dim,
            heads,
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

    pub fn param_count(dim: usize) -> usize {
        4 * (dim * dim + dim)
    }

    pub fn macs(&self, s: usize, l: usize) -> u64 {
        let d = self.dim;
        (2 * s * d * d + 2 * l * d * d + 2 * s * l * d) as u64
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        spatial: &Var<'t, T>,
        temporal: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.forward_with_weights(p, spatial, temporal).map(|(y, _)| y)
    }

    /// Also returns the per-head attention weights, each `[B, S, L]`.
    pub fn forward_with_weights<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        spatial: &Var<'t, T>,
        temporal: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Vec<Var<'t, T>>)> {
        let (ss, ts) = (spatial.shape(), temporal.shape());
        if ss.len() != 3 || ts.len() != 3 || ss[0] != ts[0] || ss[2] != self.dim || ts[2] != self.dim
        {
            return Err(Error::Dimension(format!(
                "cross-attention tokens {ss:?} and {ts:?} must be [B,S,{d}] and [B,L,{d}]",
                d = self.dim
            )));
        }
        let q = spatial.linear(&p[self.wq], &p[self.bq])?;
        let k = temporal.linear(&p[self.wk], &p[self.bk])?;
        let v = temporal.linear(&p[self.wv], &p[self.bv])?;
        let dh = self.dim / self.heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.narrow(2, h * dh, dh)?;
            let kh = k.narrow(2, h * dh, dh)?;
            let vh = v.narrow(2, h * dh, dh)?;
            let a = qh.bmm(&kh.transpose()?)?.scale(scale).softmax(2)?;
            outs.push(a.bmm(&vh)?);
            weights.push(a);
        }
        let joined = if outs.len() == 1 {
            outs.pop().unwrap()
        } else {
            Var::concat(&outs, 2)?
        };
        Ok((joined.linear(&p[self.wo], &p[self.bo])?, weights))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> Self {
        Self {
            gamma: store.add_ones(format!("{prefix}.gamma"), &[dim]),
            beta: store.add_zeros(format!("{prefix}.beta"), &[dim]),
        }
    }

    pub fn apply<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(&p[self.gamma], &p[self.beta], T::of(LAYER_NORM_EPS))
    }
}

/// Position-wise `d → width → d` with GELU.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward {
    pub dim: usize,
    pub width: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        width: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            dim,
            width,
            w1: store.add_uniform(format!("{prefix}.w1"), &[dim, width], dim, rng),
            b1: store.add_zeros(format!("{prefix}.b1"), &[width]),
            w2: store.add_uniform(format!("{prefix}.w2"), &[width, dim], width, rng),
            b2: store.add_zeros(format!("{prefix}.b2"), &[dim]),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(&p[self.w1], &p[self.b1])?
            .gelu()
            .linear(&p[self.w2], &p[self.b2])
    }
}

/// `x = LN(s + attn(s, t))`, then `LN(x + ff(x))` when the feedforward is enabled.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlock {
    pub attn: CrossAttention,
    pub ln1: LayerNormParams,
    pub ff: Option<(FeedForward, LayerNormParams)>,
}

impl FusionBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        ff_width: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let attn = CrossAttention::new(store, &format!("{prefix}.attn"), dim, heads, rng)?;
        let ln1 = LayerNormParams::new(store, &format!("{prefix}.ln1"), dim);
        let ff = ff_width.map(|w| {
            (
                FeedForward::new(store, &format!("{prefix}.ff"), dim, w, rng),
                LayerNormParams::new(store, &format!("{prefix}.ln2"), dim),
            )
        });
        Ok(Self { attn, ln1, ff })
    }

    pub fn param_count(dim: usize, ff_width: Option<usize>) -> usize {
        CrossAttention::param_count(dim)
            + 2 * dim
            + ff_width.map_or(0, |w| dim * w + w + w * dim + dim + 2 * dim)
    }

    pub fn macs(&self, s: usize, l: usize) -> u64 {
        let ff = self
            .ff
            .as_ref()
            .map_or(0, |(f, _)| (2 * s * f.dim * f.width) as u64);
        self.attn.macs(s, l) + ff
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        spatial: &Var<'t, T>,
        temporal: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let a = self.attn.forward(p, spatial, temporal)?;
        let x = self.ln1.apply(p, &spatial.add(&a)?)?;
        match &self.ff {
            Some((ff, ln2)) => ln2.apply(p, &x.add(&ff.forward(p, &x)?)?),
            None => Ok(x),
        }
    }
}

/// Stack of fusion blocks; each block's output becomes the next block's queries.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerFusion {
    pub blocks: Vec<FusionBlock>,
}

impl TransformerFusion {
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        spatial: &Var<'t, T>,
        temporal: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let mut x = *spatial;
        for b in &self.blocks {
            x = b.forward(p, &x, temporal)?;
        }
        Ok(x)
    }

    pub fn macs(&self, s: usize, l: usize) -> u64 {
        self.blocks.iter().map(|b| b.macs(s, l)).sum()
    }
}

/// Affine map of `[spatial ‖ temporal]` along the last axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFusion {
    pub spatial_dim: usize,
    pub temporal_dim: usize,
    pub out_dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearFusion {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        spatial_dim: usize,
        temporal_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = spatial_dim + temporal_dim;
        Self {
            spatial_dim,
            temporal_dim,
            out_dim,
            w: store.add_uniform(format!("{prefix}.w"), &[fan_in, out_dim], fan_in, rng),
            b: store.add_zeros(format!("{prefix}.b"), &[out_dim]),
        }
    }

    pub fn param_count(spatial_dim: usize, temporal_dim: usize, out_dim: usize) -> usize {
        (spatial_dim + temporal_dim + 1) * out_dim
    }

    pub fn macs(&self, tokens: usize) -> u64 {
        (tokens * (self.spatial_dim + self.temporal_dim) * self.out_dim) as u64
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        spatial: &Var<'t, T>,
        temporal: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (ss, ts) = (spatial.shape(), temporal.shape());
        if ss.len() != ts.len()
            || ss[..ss.len() - 1] != ts[..ts.len() - 1]
            || ss.last() != Some(&self.spatial_dim)
            || ts.last() != Some(&self.temporal_dim)
        {
            return Err(Error::Dimension(format!(
                "linear fusion expects [..,{}] and [..,{}], got {ss:?} and {ts:?}",
                self.spatial_dim, self.temporal_dim
            )));
        }
        let axis = ss.len() - 1;
        Var::concat(&[*spatial, *temporal], axis)?.linear(&p[self.w], &p[self.b])
    }
}
