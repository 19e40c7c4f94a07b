use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers in parameter-store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected update. Gradients are checked before anything is
    /// written, so a rejected step leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Contract(format!(
                "adam: {} gradients and {} moment buffers for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "adam: gradient of '{}' has shape {:?}, parameter {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            if let Some(idx) = g.first_non_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter '{}' at {idx:?}",
                    p.name
                )));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                let gf = Scalar::to_f64(gi);
                let mf = b1 * Scalar::to_f64(*mi) + (1.0 - b1) * gf;
                let vf = b2 * Scalar::to_f64(*vi) + (1.0 - b2) * gf * gf;
                *mi = T::of(mf);
                *vi = T::of(vf);
                let upd = cfg.lr * (mf / c1) / ((vf / c2).sqrt() + cfg.eps);
                *w = T::of(Scalar::to_f64(*w) - upd);
            }
        }
        Ok(())
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| Scalar::to_f64(*v).powi(2))
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}
