//! The STN family: a Conv3D spatial branch and a recurrent temporal branch
//! over the same patch sequence, fused per timestep and decoded by an MLP.
//!
//! ```text
//! window [B,n,P,P] ─┬─ conv3d·BN·GELU ×3 ─ spatial mean ─ tokens [B,n,h] ─┐
//!                   └─ sLSTM / ConvLSTM per step ──────── tokens [B,n,q] ─┴─ fusion ─┐
//!                                   (stages 2..b: sLSTM / 1×1 ConvLSTM over fused) ─┘
//!                                                  mean over tokens ─ MLP ─ [B,τ]
//! ```

mod config;

pub use config::{preset, ModelConfig, Variant, PRESETS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::fusion::{FusionBlock, LinearFusion, TransformerFusion};
use crate::params::{Bound, ParamId, ParamStore};
use crate::recurrent::{ConvLstmCell, LstmCell, Slstm};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; the returned stats feed the running averages.
    Train,
    /// Running statistics in batch norm.
    Infer,
}

/// Affine map `[in] → [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        inp: usize,
        out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            inp,
            out,
            w: store.add_uniform(format!("{prefix}.w"), &[inp, out], inp, rng),
            b: store.add_zeros(format!("{prefix}.b"), &[out]),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(&p[self.w], &p[self.b])
    }

    pub fn macs(&self) -> u64 {
        (self.inp * self.out) as u64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvStage {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

/// Running batch-norm statistics of one conv stage. Not trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
enum Temporal {
    Slstm(Slstm),
    ConvLstm(ConvLstmCell),
}

#[derive(Clone, Debug, PartialEq)]
enum Fusion {
    Linear(LinearFusion),
    Transformer {
        proj_s: Option<Dense>,
        proj_t: Option<Dense>,
        blocks: TransformerFusion,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Stage {
    temporal: Temporal,
    fusion: Fusion,
}

#[derive(Clone, Debug, PartialEq)]
struct Head {
    hidden: Dense,
    out: Dense,
}

#[derive(Clone, Debug, PartialEq)]
enum Arch {
    Stn {
        convs: Vec<ConvStage>,
        stages: Vec<Stage>,
        head: Head,
    },
    Flat {
        lstm: LstmCell,
        head: Head,
    },
}

/// Output of one forward pass.
pub struct Forward<'t, T: Scalar> {
    /// `[B, τ]`, normalized units
    pub prediction: Var<'t, T>,
    /// One entry per conv stage in [`Mode::Train`], empty otherwise.
    pub batch_stats: Vec<BatchStats<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StnModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub bn_running: Vec<BnRunning<T>>,
    arch: Arch,
}

/// Deterministic initialization from `seed`.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<StnModel<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let c = config;
    let d = c.hidden;
    let side = c.patch_side();
    let flat = side * side;

    let head_of = |store: &mut ParamStore<T>, rng: &mut ChaCha8Rng| Head {
        hidden: Dense::new(store, "head.hidden", d, c.mlp_hidden, rng),
        out: Dense::new(store, "head.out", c.mlp_hidden, c.horizon, rng),
    };

    if c.variant == Variant::LstmFlat {
        let lstm = LstmCell::new(&mut store, "lstm", flat, d, &mut rng);
        let head = head_of(&mut store, &mut rng);
        return Ok(StnModel {
            config: c.clone(),
            params: store,
            bn_running: Vec::new(),
            arch: Arch::Flat { lstm, head },
        });
    }

    let mut convs = Vec::with_capacity(3);
    let mut c_in = 1;
    for (k, &c_out) in c.conv_channels.iter().enumerate() {
        let pre = format!("spatial.conv{k}");
        convs.push(ConvStage {
            c_in,
            c_out,
            kernel: store.add_uniform(
                format!("{pre}.kernel"),
                &[c_out, c_in, 3, 3, 3],
                c_in * 27,
                &mut rng,
            ),
            bias: store.add_zeros(format!("{pre}.bias"), &[c_out]),
            gamma: store.add_ones(format!("{pre}.bn.gamma"), &[c_out]),
            beta: store.add_zeros(format!("{pre}.bn.beta"), &[c_out]),
        });
        c_in = c_out;
    }

    let mut stages = Vec::with_capacity(c.stn_blocks);
    for s in 0..c.stn_blocks {
        let pre = format!("stage{s}");
        let first = s == 0;
        let temporal = if c.variant.uses_slstm() {
            let input = if first { flat } else { d };
            Temporal::Slstm(Slstm::new(
                &mut store,
                &format!("{pre}.slstm"),
                input,
                d,
                c.slstm_heads,
                c.slstm_layers,
                &mut rng,
            )?)
        } else {
            let (cin, k) = if first { (1, c.convlstm_kernel) } else { (d, 1) };
            Temporal::ConvLstm(ConvLstmCell::new(
                &mut store,
                &format!("{pre}.convlstm"),
                cin,
                c.convlstm_channels(),
                k,
                &mut rng,
            )?)
        };
        let q = match &temporal {
            Temporal::Slstm(_) => d,
            Temporal::ConvLstm(cell) => cell.hidden_channels,
        };
        let fusion = if c.variant.uses_attention() {
            let proj_s = first.then(|| Dense::new(&mut store, &format!("{pre}.proj_s"), d, d, &mut rng));
            let proj_t = (first || q != d)
                .then(|| Dense::new(&mut store, &format!("{pre}.proj_t"), q, d, &mut rng));
            let ff = c.fusion_ff.then_some(2 * d);
            let blocks = (0..c.fusion_blocks)
                .map(|k| {
                    FusionBlock::new(
                        &mut store,
                        &format!("{pre}.fusion{k}"),
                        d,
                        c.fusion_heads,
                        ff,
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?;
            Fusion::Transformer {
                proj_s,
                proj_t,
                blocks: TransformerFusion { blocks },
            }
        } else {
            Fusion::Linear(LinearFusion::new(
                &mut store,
                &format!("{pre}.fusion"),
                d,
                q,
                d,
                &mut rng,
            ))
        };
        stages.push(Stage { temporal, fusion });
    }
    let head = head_of(&mut store, &mut rng);
    let bn_running = c
        .conv_channels
        .iter()
        .map(|&ch| BnRunning {
            mean: vec![T::zero(); ch],
            var: vec![T::one(); ch],
        })
        .collect();
    Ok(StnModel {
        config: c.clone(),
        params: store,
        bn_running,
        arch: Arch::Stn {
            convs,
            stages,
            head,
        },
    })
}

impl<T: Scalar> StnModel<T> {
    /// Scalar parameters including batch-norm affine terms, excluding running statistics.
    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    /// Multiply–accumulates of one single-sample forward pass, by component.
    pub fn mac_breakdown(&self) -> Vec<(String, u64)> {
        let c = &self.config;
        let (n, side) = (c.steps, c.patch_side());
        let mut out = Vec::new();
        let head_macs = |h: &Head| h.hidden.macs() + h.out.macs();
        match &self.arch {
            Arch::Flat { lstm, head } => {
                out.push(("lstm".into(), lstm.macs() * n as u64));
                out.push(("head".into(), head_macs(head)));
            }
            Arch::Stn {
                convs,
                stages,
                head,
            } => {
                for (k, cv) in convs.iter().enumerate() {
                    let m = cv.c_out * n * side * side * cv.c_in * 27;
                    out.push((format!("spatial.conv{k}"), m as u64));
                }
                for (s, st) in stages.iter().enumerate() {
                    let t = match &st.temporal {
                        Temporal::Slstm(sl) => sl.macs_per_step() * n as u64,
                        Temporal::ConvLstm(cell) if s == 0 => cell.macs(side, side) * n as u64,
                        Temporal::ConvLstm(cell) => cell.macs(1, 1) * n as u64,
                    };
                    out.push((format!("stage{s}.temporal"), t));
                    let f = match &st.fusion {
                        Fusion::Linear(lf) => lf.macs(n),
                        Fusion::Transformer {
                            proj_s,
                            proj_t,
                            blocks,
                        } => {
                            let proj: u64 = [proj_s, proj_t]
                                .iter()
                                .filter_map(|p| p.as_ref())
                                .map(|p| p.macs() * n as u64)
                                .sum();
                            proj + blocks.macs(n, n)
                        }
                    };
                    out.push((format!("stage{s}.fusion"), f));
                }
                out.push(("head".into(), head_macs(head)));
            }
        }
        out
    }

    pub fn count_macs(&self) -> u64 {
        self.mac_breakdown().iter().map(|(_, m)| m).sum()
    }

    pub fn cast<U: Scalar>(&self) -> StnModel<U> {
        StnModel {
            config: self.config.clone(),
            params: self.params.cast(),
            bn_running: self
                .bn_running
                .iter()
                .map(|b| BnRunning {
                    mean: b.mean.iter().map(|v| U::of(Scalar::to_f64(*v))).collect(),
                    var: b.var.iter().map(|v| U::of(Scalar::to_f64(*v))).collect(),
                })
                .collect(),
            arch: self.arch.clone(),
        }
    }

    /// Expected window shape for a batch of `b`.
    pub fn window_shape(&self, b: usize) -> [usize; 4] {
        let side = self.config.patch_side();
        [b, self.config.steps, side, side]
    }

    /// Full forward on normalized windows `[B, n, P, P]`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        windows: &Tensor<T>,
        mode: Mode,
    ) -> Result<Forward<'t, T>> {
        let s = windows.shape();
        if s.len() != 4 || s[1..] != self.window_shape(s[0])[1..] {
            return Err(Error::Dimension(format!(
                "window batch {s:?} does not match [B, {}, {side}, {side}]",
                self.config.steps,
                side = self.config.patch_side()
            )));
        }
        if let Some(idx) = windows.first_non_finite() {
            return Err(Error::Input(format!("non-finite input value at index {idx:?}")));
        }
        if p.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "bound {} parameters, model has {}",
                p.len(),
                self.params.len()
            )));
        }
        let tape = p[ParamId(0)].tape();
        let x = tape.constant(windows.clone());
        match &self.arch {
            Arch::Flat { lstm, head } => {
                let seq = self.flat_steps(&x)?;
                let b = s[0];
                let mut h = tape.constant(Tensor::zeros(&[b, lstm.hidden]));
                let mut c = tape.constant(Tensor::zeros(&[b, lstm.hidden]));
                for xt in seq {
                    (h, c) = lstm.step(p, xt, h, c)?;
                }
                Ok(Forward {
                    prediction: self.head(p, head, &h)?,
                    batch_stats: Vec::new(),
                })
            }
            Arch::Stn {
                convs,
                stages,
                head,
            } => {
                let (mut spatial, batch_stats) = self.spatial_tokens(p, convs, &x, mode)?;
                let mut fused = None;
                for (k, st) in stages.iter().enumerate() {
                    let temporal = match fused {
                        None => self.first_temporal(p, &st.temporal, &x)?,
                        Some(f) => self.later_temporal(p, &st.temporal, &f)?,
                    };
                    if let Some(f) = fused {
                        spatial = f;
                    }
                    let out = match &st.fusion {
                        Fusion::Linear(lf) => lf.forward(p, &spatial, &temporal)?,
                        Fusion::Transformer {
                            proj_s,
                            proj_t,
                            blocks,
                        } => {
                            let sq = match proj_s {
                                Some(d) => d.forward(p, &spatial)?,
                                None => spatial,
                            };
                            let tk = match proj_t {
                                Some(d) => d.forward(p, &temporal)?,
                                None => temporal,
                            };
                            blocks.forward(p, &sq, &tk)?
                        }
                    };
                    debug_assert!(k == 0 || fused.is_some());
                    fused = Some(out);
                }
                let pooled = fused.expect("at least one stage").mean_axis(1)?;
                Ok(Forward {
                    prediction: self.head(p, head, &pooled)?,
                    batch_stats,
                })
            }
        }
    }

    fn head<'t>(&self, p: &Bound<'t, T>, head: &Head, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        head.out.forward(p, &head.hidden.forward(p, x)?.gelu())
    }

    /// Per-step flattened patches, each `[B, P²]`.
    fn flat_steps<'t>(&self, x: &Var<'t, T>) -> Result<Vec<Var<'t, T>>> {
        let s = x.shape();
        (0..s[1])
            .map(|t| x.select(1, t)?.reshape(&[s[0], s[2] * s[3]]))
            .collect()
    }

    /// Conv3D stages on `[B,1,n,P,P]`, then spatial mean per timestep: `[B, n, h]`.
    fn spatial_tokens<'t>(
        &self,
        p: &Bound<'t, T>,
        convs: &[ConvStage],
        x: &Var<'t, T>,
        mode: Mode,
    ) -> Result<(Var<'t, T>, Vec<BatchStats<T>>)> {
        let s = x.shape();
        let mut y = x.reshape(&[s[0], 1, s[1], s[2], s[3]])?;
        let mut stats = Vec::new();
        let eps = T::of(BN_EPS);
        for (cv, run) in convs.iter().zip(&self.bn_running) {
            y = y.conv3d(&p[cv.kernel], &p[cv.bias], [1, 1, 1])?;
            y = match mode {
                Mode::Train => {
                    let (z, st) = y.batch_norm_train(&p[cv.gamma], &p[cv.beta], eps)?;
                    stats.push(st);
                    z
                }
                Mode::Infer => {
                    y.batch_norm_infer(&p[cv.gamma], &p[cv.beta], &run.mean, &run.var, eps)?
                }
            };
            y = y.gelu();
        }
        Ok((y.spatial_mean_pool()?, stats))
    }

    fn first_temporal<'t>(
        &self,
        p: &Bound<'t, T>,
        temporal: &Temporal,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match temporal {
            Temporal::Slstm(sl) => Var::stack(&sl.sequence(p, &self.flat_steps(x)?)?, 1),
            Temporal::ConvLstm(cell) => {
                let s = x.shape();
                let frames = (0..s[1])
                    .map(|t| x.narrow(1, t, 1)?.reshape(&[s[0], 1, 1, s[2], s[3]]))
                    .collect::<Result<Vec<_>>>()?;
                convlstm_tokens(p, cell, &frames, s[2], s[3])
            }
        }
    }

    /// Temporal branch of stages after the first, over fused tokens `[B, n, d]`.
    fn later_temporal<'t>(
        &self,
        p: &Bound<'t, T>,
        temporal: &Temporal,
        fused: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = fused.shape();
        let steps = (0..s[1])
            .map(|t| fused.select(1, t))
            .collect::<Result<Vec<_>>>()?;
        match temporal {
            Temporal::Slstm(sl) => Var::stack(&sl.sequence(p, &steps)?, 1),
            Temporal::ConvLstm(cell) => {
                let frames = steps
                    .iter()
                    .map(|v| v.reshape(&[s[0], s[2], 1, 1, 1]))
                    .collect::<Result<Vec<_>>>()?;
                convlstm_tokens(p, cell, &frames, 1, 1)
            }
        }
    }

    /// Infer-mode prediction `[B, τ]` on a frozen tape.
    pub fn predict(&self, windows: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let out = self.forward(&p, windows, Mode::Infer)?;
        Ok(out.prediction.value().as_ref().clone())
    }

    /// Exponential moving average of the running statistics.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>], momentum: f64) {
        let m = T::of(momentum);
        let keep = T::one() - m;
        for (run, st) in self.bn_running.iter_mut().zip(stats) {
            for (r, &b) in run.mean.iter_mut().zip(&st.mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in run.var.iter_mut().zip(&st.var) {
                *r = keep * *r + m * b;
            }
        }
    }

    /// Replaces parameters by name; every stored parameter must be supplied
    /// with a matching shape.
    pub fn load_named(&mut self, named: &[(String, Tensor<T>)]) -> Result<()> {
        for p in self.params.iter_mut() {
            let (_, t) = named.iter().find(|(n, _)| *n == p.name).ok_or_else(|| {
                Error::Checkpoint(format!("missing parameter '{}'", p.name))
            })?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Names of the running-statistic buffers, paired with their values.
    pub fn running_buffers(&self) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        for (k, r) in self.bn_running.iter().enumerate() {
            out.push((format!("spatial.conv{k}.bn.running_mean"), r.mean.clone()));
            out.push((format!("spatial.conv{k}.bn.running_var"), r.var.clone()));
        }
        out
    }

    pub fn load_running_buffers(&mut self, named: &[(String, Vec<T>)]) -> Result<()> {
        for (k, r) in self.bn_running.iter_mut().enumerate() {
            for (suffix, dst) in [("running_mean", &mut r.mean), ("running_var", &mut r.var)] {
                let name = format!("spatial.conv{k}.bn.{suffix}");
                let (_, v) = named
                    .iter()
                    .find(|(n, _)| *n == name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing buffer '{name}'")))?;
                if v.len() != dst.len() {
                    return Err(Error::Checkpoint(format!(
                        "buffer '{name}' has {} values, expected {}",
                        v.len(),
                        dst.len()
                    )));
                }
                dst.clone_from(v);
            }
        }
        Ok(())
    }

    /// True when the model has no convolution or fusion parameters.
    pub fn is_flat(&self) -> bool {
        matches!(self.arch, Arch::Flat { .. })
    }

    /// Ids of the MLP head parameters (hidden w, b, output w, b).
    pub fn head_params(&self) -> [ParamId; 4] {
        let h = match &self.arch {
            Arch::Flat { head, .. } | Arch::Stn { head, .. } => head,
        };
        [h.hidden.w, h.hidden.b, h.out.w, h.out.b]
    }
}

fn convlstm_tokens<'t, T: Scalar>(
    p: &Bound<'t, T>,
    cell: &ConvLstmCell,
    frames: &[Var<'t, T>],
    h: usize,
    w: usize,
) -> Result<Var<'t, T>> {
    let first = frames[0];
    let b = first.shape()[0];
    let mut state = cell.zero_state(first.tape(), b, h, w);
    let mut tokens = Vec::with_capacity(frames.len());
    for &f in frames {
        state = cell.step(p, f, &state)?;
        // [B,C,1,H,W] → [B,1,C]
        tokens.push(state.hidden.spatial_mean_pool()?);
    }
    Var::concat(&tokens, 1)
}

/// Mean squared error over all `B·τ` entries.
pub fn loss_l2<'t, T: Scalar>(prediction: &Var<'t, T>, targets: &Tensor<T>) -> Result<Var<'t, T>> {
    prediction.mse(targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::conv3d_forward;

    fn tiny(variant: Variant) -> ModelConfig {
        let mut c = ModelConfig::new(variant, 8, 1, 2, 1, 2);
        c.radius = 2;
        c.steps = 3;
        c
    }

    fn windows(b: usize, c: &ModelConfig) -> Tensor<f64> {
        let side = c.patch_side();
        Tensor::from_fn(&[b, c.steps, side, side], |k| ((k * 7 % 13) as f64 - 6.0) * 0.15)
    }

    #[test]
    fn build_is_deterministic() {
        let c = tiny(Variant::StnSlstmTf);
        let a: StnModel<f32> = build_model(&c, 3).unwrap();
        let b: StnModel<f32> = build_model(&c, 3).unwrap();
        assert_eq!(a.params, b.params);
        let d: StnModel<f32> = build_model(&c, 4).unwrap();
        assert_ne!(a.params, d.params);
    }

    #[test]
    fn flat_model_has_no_conv_or_fusion() {
        let m: StnModel<f32> = build_model(&tiny(Variant::LstmFlat), 0).unwrap();
        assert!(m.is_flat());
        assert!(m
            .params
            .iter()
            .all(|p| !p.name.contains("conv") && !p.name.contains("fusion")));
        let side = 5 * 5;
        assert_eq!(
            m.count_params(),
            LstmCell::param_count(side, 8) + 8 * 8 + 8 + 8 + 1
        );
    }

    #[test]
    fn every_variant_predicts_horizon() {
        for v in Variant::ALL {
            for b in [1, 2] {
                let mut c = tiny(v);
                c.stn_blocks = b;
                c.horizon = 2;
                let m: StnModel<f64> = build_model(&c, 1).unwrap();
                let y = m.predict(&windows(3, &c)).unwrap();
                assert_eq!(y.shape(), &[3, 2], "{v}");
                assert!(y.is_finite());
            }
        }
    }

    #[test]
    fn zero_head_predicts_zero() {
        let c = tiny(Variant::StnSlstm);
        let mut m: StnModel<f64> = build_model(&c, 2).unwrap();
        for id in m.head_params() {
            let s = m.params.get(id).shape().to_vec();
            *m.params.get_mut(id) = Tensor::zeros(&s);
        }
        let y = m.predict(&windows(2, &c)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nan_input_is_reported_with_index() {
        let c = tiny(Variant::Stn);
        let m: StnModel<f64> = build_model(&c, 0).unwrap();
        let mut w = windows(2, &c);
        w.set(&[1, 2, 0, 3], f64::NAN);
        let err = m.predict(&w).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(err.to_string().contains("[1, 2, 0, 3]"), "{err}");
    }

    #[test]
    fn infer_is_bitwise_deterministic() {
        let c = tiny(Variant::StnTf);
        let m: StnModel<f32> = build_model(&c, 5).unwrap();
        let w = windows(2, &c).cast::<f32>();
        assert_eq!(m.predict(&w).unwrap(), m.predict(&w).unwrap());
    }

    #[test]
    fn zero_input_gives_zero_spatial_features() {
        let c = tiny(Variant::Stn);
        let m: StnModel<f64> = build_model(&c, 0).unwrap();
        let Arch::Stn { convs, .. } = &m.arch else { unreachable!() };
        let tape = Tape::new();
        let p = m.params.bind_frozen(&tape);
        let x = tape.constant(Tensor::zeros(&[2, 3, 5, 5]));
        for mode in [Mode::Train, Mode::Infer] {
            let (f, _) = m.spatial_tokens(&p, convs, &x, mode).unwrap();
            assert_eq!(f.shape(), vec![2, 3, 8]);
            assert!(f.value().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn first_conv_stage_matches_plain_convolution() {
        let mut c = tiny(Variant::Stn);
        c.radius = 5;
        c.steps = 6;
        let m: StnModel<f64> = build_model(&c, 0).unwrap();
        let Arch::Stn { convs, .. } = &m.arch else { unreachable!() };
        let tape = Tape::new();
        let p = m.params.bind_frozen(&tape);
        let w = windows(1, &c);
        let x = tape.constant(w.clone());
        let (tokens, _) = m.spatial_tokens(&p, convs, &x, Mode::Infer).unwrap();
        assert_eq!(tokens.shape(), vec![1, 6, 8]);

        let cv = &convs[0];
        let y = p[ParamId(0)]
            .tape()
            .constant(w.clone().reshape(&[1, 1, 6, 11, 11]).unwrap())
            .conv3d(&p[cv.kernel], &p[cv.bias], [1, 1, 1])
            .unwrap();
        let want = conv3d_forward(
            &w.reshape(&[1, 6, 11, 11]).unwrap(),
            m.params.get(cv.kernel),
            m.params.get(cv.bias),
            [1, 1, 1],
        )
        .unwrap();
        assert!(y.value().data().iter().zip(want.data()).all(|(a, b)| (a - b).abs() <= 1e-10));
    }

    #[test]
    fn shared_temporal_counts_between_fusion_kinds() {
        let temporal = |m: &StnModel<f32>| -> usize {
            m.params
                .iter()
                .filter(|p| p.name.contains("slstm") || p.name.contains("convlstm"))
                .map(|p| p.value.numel())
                .sum()
        };
        for (lin, tf) in [
            (Variant::Stn, Variant::StnTf),
            (Variant::StnSlstm, Variant::StnSlstmTf),
        ] {
            let a = build_model(&tiny(lin), 0).unwrap();
            let b = build_model(&tiny(tf), 0).unwrap();
            assert_eq!(temporal(&a), temporal(&b));
        }
    }

    #[test]
    fn mac_counts_match_closed_forms() {
        let d = Dense {
            inp: 10,
            out: 5,
            w: ParamId(0),
            b: ParamId(1),
        };
        assert_eq!(d.macs(), 50);
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Dense::new(&mut store, "x", 10, 5, &mut rng);
        assert_eq!(store.numel(), 55);

        let mut c = ModelConfig::new(Variant::Stn, 8, 1, 1, 1, 1);
        c.conv_channels = [2, 4, 8];
        let m: StnModel<f32> = build_model(&c, 0).unwrap();
        let conv0 = m.mac_breakdown()[0].1;
        assert_eq!(conv0, 2 * 6 * 11 * 11 * 27);
        assert_eq!(conv0, 39_204);
        assert_eq!(m.count_macs(), m.mac_breakdown().iter().map(|x| x.1).sum::<u64>());
    }

    #[test]
    fn running_stats_follow_ema() {
        let c = tiny(Variant::Stn);
        let mut m: StnModel<f64> = build_model(&c, 0).unwrap();
        let tape = Tape::new();
        let p = m.params.bind(&tape);
        let out = m.forward(&p, &windows(2, &c), Mode::Train).unwrap();
        let stats = out.batch_stats.clone();
        assert_eq!(stats.len(), 3);
        m.update_running_stats(&stats, 0.1);
        for (r, s) in m.bn_running.iter().zip(&stats) {
            for k in 0..r.mean.len() {
                assert!((r.mean[k] - 0.1 * s.mean[k]).abs() < 1e-15);
                assert!((r.var[k] - (0.9 + 0.1 * s.var[k])).abs() < 1e-15);
            }
        }
    }
}
