//! Softmax, layer normalization and batch normalization.

use super::ops::split_axis;
use super::Var;
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-channel statistics of one training batch (population variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Inference-mode batch normalization on plain tensors; channel axis is 1.
pub fn batch_norm_infer_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Tensor<T> {
    let (outer, c, inner) = split_axis(x.shape(), 1);
    let mut y = x.clone();
    for o in 0..outer {
        for ch in 0..c {
            let inv = T::one() / (running_var[ch] + eps).sqrt();
            let off = (o * c + ch) * inner;
            for v in &mut y.data_mut()[off..off + inner] {
                *v = (*v - running_mean[ch]) * inv * gamma[ch] + beta[ch];
            }
        }
    }
    y
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Softmax along `axis` with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::Dimension(format!("softmax axis {axis} for {s:?}")));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let x = self.value();
        let mut y = (*x).clone();
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mut mx = T::neg_infinity();
                for l in 0..len {
                    mx = mx.max(x.data()[at(l)]);
                }
                let mut z = T::zero();
                for l in 0..len {
                    let e = (x.data()[at(l)] - mx).exp();
                    y.data_mut()[at(l)] = e;
                    z = z + e;
                }
                for l in 0..len {
                    let v = y.data()[at(l)] / z;
                    y.data_mut()[at(l)] = v;
                }
            }
        }
        let out = y.clone();
        Ok(self.tape.op(y, &[*self], move |g| {
            let mut gx = Tensor::zeros(g.shape());
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let dot: T = (0..len)
                        .map(|l| g.data()[at(l)] * out.data()[at(l)])
                        .sum();
                    for l in 0..len {
                        let k = at(l);
                        gx.data_mut()[k] = out.data()[k] * (g.data()[k] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Normalizes each row over the last axis, then scales by `gamma` and
    /// shifts by `beta`.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        let s = self.shape();
        let d = *s.last().unwrap();
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(shape_mismatch("layer_norm", &s, &gamma.shape()));
        }
        let x = self.value();
        let (gm, bt) = (gamma.value(), beta.value());
        let rows = x.numel() / d;
        let dn = T::of(d as f64);
        let mut xhat = vec![T::zero(); x.numel()];
        let mut inv = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            inv[r] = T::one() / (var + eps).sqrt();
            for (h, &v) in xhat[r * d..(r + 1) * d].iter_mut().zip(row) {
                *h = (v - mu) * inv[r];
            }
        }
        let y: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(k, &h)| h * gm.data()[k % d] + bt.data()[k % d])
            .collect();
        let v = Tensor::new(&s, y)?;
        Ok(self.tape.op(v, &[*self, *gamma, *beta], move |g| {
            let mut gx = vec![T::zero(); rows * d];
            let mut gg = vec![T::zero(); d];
            let mut gb = vec![T::zero(); d];
            for r in 0..rows {
                let gr = &g.data()[r * d..(r + 1) * d];
                let hr = &xhat[r * d..(r + 1) * d];
                let mut sum_gh = T::zero();
                let mut sum_ghx = T::zero();
                for k in 0..d {
                    gg[k] = gg[k] + gr[k] * hr[k];
                    gb[k] = gb[k] + gr[k];
                    let gh = gr[k] * gm.data()[k];
                    sum_gh = sum_gh + gh;
                    sum_ghx = sum_ghx + gh * hr[k];
                }
                for k in 0..d {
                    let gh = gr[k] * gm.data()[k];
                    gx[r * d + k] = inv[r] * (gh - sum_gh / dn - hr[k] * sum_ghx / dn);
                }
            }
            vec![
                Some(Tensor::new(&s, gx).unwrap()),
                Some(Tensor::new(&[d], gg).unwrap()),
                Some(Tensor::new(&[d], gb).unwrap()),
            ]
        }))
    }

    /// Training-mode batch normalization over every axis except axis 1.
    /// Returns the batch statistics so the caller can update running values.
    pub fn batch_norm_train(&self, gamma: &Self, beta: &Self, eps: T) -> Result<(Self, BatchStats<T>)> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::Dimension(format!("batch_norm needs rank >= 2, got {s:?}")));
        }
        let (outer, c, inner) = split_axis(&s, 1);
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(shape_mismatch("batch_norm", &s, &gamma.shape()));
        }
        let x = self.value();
        let (gm, bt) = (gamma.value(), beta.value());
        let count = T::of((outer * inner) as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for o in 0..outer {
            for ch in 0..c {
                let off = (o * c + ch) * inner;
                mean[ch] = mean[ch] + x.data()[off..off + inner].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / count);
        for o in 0..outer {
            for ch in 0..c {
                let off = (o * c + ch) * inner;
                var[ch] = var[ch]
                    + x.data()[off..off + inner]
                        .iter()
                        .map(|&v| (v - mean[ch]) * (v - mean[ch]))
                        .sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v = *v / count);
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.numel()];
        let mut y = vec![T::zero(); x.numel()];
        for o in 0..outer {
            for ch in 0..c {
                let off = (o * c + ch) * inner;
                for k in off..off + inner {
                    xhat[k] = (x.data()[k] - mean[ch]) * inv[ch];
                    y[k] = xhat[k] * gm.data()[ch] + bt.data()[ch];
                }
            }
        }
        let v = Tensor::new(&s, y)?;
        let stats = BatchStats { mean, var };
        let out = self.tape.op(v, &[*self, *gamma, *beta], move |g| {
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gh = vec![T::zero(); c];
            for o in 0..outer {
                for ch in 0..c {
                    let off = (o * c + ch) * inner;
                    for k in off..off + inner {
                        sum_g[ch] = sum_g[ch] + g.data()[k];
                        sum_gh[ch] = sum_gh[ch] + g.data()[k] * xhat[k];
                    }
                }
            }
            let mut gx = vec![T::zero(); xhat.len()];
            for o in 0..outer {
                for ch in 0..c {
                    let off = (o * c + ch) * inner;
                    let scale = gm.data()[ch] * inv[ch];
                    for k in off..off + inner {
                        gx[k] = scale
                            * (g.data()[k] - sum_g[ch] / count - xhat[k] * sum_gh[ch] / count);
                    }
                }
            }
            vec![
                Some(Tensor::new(&s, gx).unwrap()),
                Some(Tensor::new(&[c], sum_gh).unwrap()),
                Some(Tensor::new(&[c], sum_g).unwrap()),
            ]
        });
        Ok((out, stats))
    }

    /// Inference-mode batch normalization with fixed running statistics.
    pub fn batch_norm_infer(
        &self,
        gamma: &Self,
        beta: &Self,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Self> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::Dimension(format!("batch_norm needs rank >= 2, got {s:?}")));
        }
        let (outer, c, inner) = split_axis(&s, 1);
        if gamma.shape() != [c] || running_mean.len() != c || running_var.len() != c {
            return Err(shape_mismatch("batch_norm", &s, &gamma.shape()));
        }
        let x = self.value();
        let (gm, bt) = (gamma.value(), beta.value());
        let v = batch_norm_infer_forward(&x, gm.data(), bt.data(), running_mean, running_var, eps);
        let inv: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let rm = running_mean.to_vec();
        Ok(self.tape.op(v, &[*self, *gamma, *beta], move |g| {
            let mut gx = vec![T::zero(); x.numel()];
            let mut gg = vec![T::zero(); c];
            let mut gb = vec![T::zero(); c];
            for o in 0..outer {
                for ch in 0..c {
                    let off = (o * c + ch) * inner;
                    for k in off..off + inner {
                        let gv = g.data()[k];
                        gx[k] = gv * gm.data()[ch] * inv[ch];
                        gg[ch] = gg[ch] + gv * (x.data()[k] - rm[ch]) * inv[ch];
                        gb[ch] = gb[ch] + gv;
                    }
                }
            }
            vec![
                Some(Tensor::new(&s, gx).unwrap()),
                Some(Tensor::new(&[c], gg).unwrap()),
                Some(Tensor::new(&[c], gb).unwrap()),
            ]
        }))
    }
}
