//! Temporal cells: sLSTM with exponential gating, ConvLSTM and a plain LSTM.
//!
//! The sLSTM keeps a cell `c`, a normalizer `n` and a log-domain stabilizer
//! `m` per hidden unit:
//!
//! ```text
//! z  = tanh(W_z x + R_z h + b_z)        o = sigmoid(W_o x + R_o h + b_o)
//! ĩ  = W_i x + R_i h + b_i              f̃ = W_f x + R_f h + b_f
//! m' = max(f̃ + m, ĩ)
//! i' = exp(ĩ − m')                      f' = exp(f̃ + m − m')
//! c' = f'·c + i'·z                      n' = f'·n + i'
//! h' = o · c'/n'
//! ```
//!
//! Recurrent matrices are block-diagonal over heads. The stabilizer rescales
//! `c` and `n` by the same factor, so `h'` does not depend on `m`; it is
//! carried as a constant and receives no gradient.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Gate slabs of the packed sLSTM weight matrices, in column order.
pub const SLSTM_GATES: [&str; 4] = ["z", "i", "f", "o"];

/// One sLSTM layer. `w` is `[input, 4h]`, `r` is `[heads, h/heads, 4·h/heads]`
/// and `b` is `[4h]`, each packed gate-major in [`SLSTM_GATES`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SlstmLayer {
    pub input_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub w: ParamId,
    pub r: ParamId,
    pub b: ParamId,
}

#[derive(Clone)]
pub struct SlstmState<'t, T: Scalar> {
    pub c: Var<'t, T>,
    pub n: Var<'t, T>,
    pub m: Tensor<T>,
    pub hidden: Var<'t, T>,
}

impl SlstmLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(Error::Config(format!(
                "sLSTM hidden size {hidden} is not divisible by {heads} heads"
            )));
        }
        let dh = hidden / heads;
        Ok(Self {
            input_dim,
            hidden,
            heads,
            w: store.add_uniform(format!("{prefix}.w"), &[input_dim, 4 * hidden], input_dim, rng),
            r: store.add_uniform(format!("{prefix}.r"), &[heads, dh, 4 * dh], dh, rng),
            b: store.add_zeros(format!("{prefix}.b"), &[4 * hidden]),
        })
    }

    /// 4 gates × (input·h + heads·(h/heads)² + h).
    pub fn param_count(input_dim: usize, hidden: usize, heads: usize) -> usize {
        let dh = hidden / heads;
        4 * (input_dim * hidden + heads * dh * dh + hidden)
    }

    /// Per-step multiply–accumulates for one sample.
    pub fn macs(&self) -> u64 {
        let dh = self.hidden / self.heads;
        (4 * (self.input_dim * self.hidden + self.heads * dh * dh)) as u64
    }

    /// c = n = m = h = 0.
    pub fn zero_state<'t, T: Scalar>(&self, tape: &'t Tape<T>, batch: usize) -> SlstmState<'t, T> {
        let z = || tape.constant(Tensor::zeros(&[batch, self.hidden]));
        SlstmState {
            c: z(),
            n: z(),
            m: Tensor::zeros(&[batch, self.hidden]),
            hidden: z(),
        }
    }

    /// Advances one step on a `[B, input]` batch.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        state: &SlstmState<'t, T>,
    ) -> Result<SlstmState<'t, T>> {
        let tape = x.tape();
        let h = self.hidden;
        let pre = x
            .linear(&p[self.w], &p[self.b])?
            .add(&state.hidden.block_diag_matmul(&p[self.r])?)?;
        let z = pre.narrow(1, 0, h)?.tanh();
        let i_pre = pre.narrow(1, h, h)?;
        let f_pre = pre.narrow(1, 2 * h, h)?;
        let o = pre.narrow(1, 3 * h, h)?.sigmoid();

        let (iv, fv) = (i_pre.value(), f_pre.value());
        let m_new = Tensor::from_fn(iv.shape(), |k| {
            (fv.data()[k] + state.m.data()[k]).max(iv.data()[k])
        });
        let i_shift = tape.constant(m_new.map(|v| -v));
        let f_shift = tape.constant(state.m.zip_map(&m_new, |m, mn| m - mn)?);
        let i_gate = i_pre.add(&i_shift)?.exp();
        let f_gate = f_pre.add(&f_shift)?.exp();

        let c = f_gate.mul(&state.c)?.add(&i_gate.mul(&z)?)?;
        let n = f_gate.mul(&state.n)?.add(&i_gate)?;
        let hidden = o.mul(&c.div(&n)?)?;
        Ok(SlstmState {
            c,
            n,
            m: m_new,
            hidden,
        })
    }
}

/// Stack of sLSTM layers; layer k's hidden sequence feeds layer k+1.
#[derive(Clone, Debug, PartialEq)]
pub struct Slstm {
    pub layers: Vec<SlstmLayer>,
}

impl Slstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        heads: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("sLSTM needs at least one layer".into()));
        }
        let layers = (0..layers)
            .map(|k| {
                let d_in = if k == 0 { input_dim } else { hidden };
                SlstmLayer::new(store, &format!("{prefix}.l{k}"), d_in, hidden, heads, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Unrolls over `xs` (each `[B, input]`) and returns the top-layer hiddens.
    pub fn sequence<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        xs: &[Var<'t, T>],
    ) -> Result<Vec<Var<'t, T>>> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Contract("sLSTM sequence must be non-empty".into()))?;
        let batch = first.shape()[0];
        let mut seq = xs.to_vec();
        for layer in &self.layers {
            let mut state = layer.zero_state(first.tape(), batch);
            let mut out = Vec::with_capacity(seq.len());
            for &x in &seq {
                state = layer.step(p, x, &state)?;
                out.push(state.hidden);
            }
            seq = out;
        }
        Ok(seq)
    }

    pub fn macs_per_step(&self) -> u64 {
        self.layers.iter().map(SlstmLayer::macs).sum()
    }
}

/// ConvLSTM cell with same-padded 2-D convolutions, gate order i, f, o, g.
///
/// Maps are carried as `[B, C, 1, H, W]` so the 3-D convolution kernel
/// (depth 1) serves as the 2-D one.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmCell {
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

#[derive(Clone)]
pub struct ConvLstmState<'t, T: Scalar> {
    pub hidden: Var<'t, T>,
    pub cell: Var<'t, T>,
}

impl ConvLstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        hidden_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("ConvLSTM kernel {kernel} must be odd")));
        }
        let c4 = 4 * hidden_channels;
        Ok(Self {
            in_channels,
            hidden_channels,
            kernel,
            wx: store.add_uniform(
                format!("{prefix}.wx"),
                &[c4, in_channels, 1, kernel, kernel],
                in_channels * kernel * kernel,
                rng,
            ),
            wh: store.add_uniform(
                format!("{prefix}.wh"),
                &[c4, hidden_channels, 1, kernel, kernel],
                hidden_channels * kernel * kernel,
                rng,
            ),
            b: store.add_zeros(format!("{prefix}.b"), &[c4]),
        })
    }

    pub fn param_count(in_channels: usize, hidden_channels: usize, kernel: usize) -> usize {
        4 * hidden_channels * ((in_channels + hidden_channels) * kernel * kernel + 1)
    }

    /// Per-step multiply–accumulates on an `h×w` map for one sample.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let k2 = self.kernel * self.kernel;
        (4 * self.hidden_channels * h * w * (self.in_channels + self.hidden_channels) * k2) as u64
    }

    pub fn zero_state<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        batch: usize,
        h: usize,
        w: usize,
    ) -> ConvLstmState<'t, T> {
        let shape = [batch, self.hidden_channels, 1, h, w];
        ConvLstmState {
            hidden: tape.constant(Tensor::zeros(&shape)),
            cell: tape.constant(Tensor::zeros(&shape)),
        }
    }

    /// `frame` is `[B, C_in, 1, H, W]`.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        frame: Var<'t, T>,
        state: &ConvLstmState<'t, T>,
    ) -> Result<ConvLstmState<'t, T>> {
        let fs = frame.shape();
        let hs = state.hidden.shape();
        if fs.len() != 5 || hs.len() != 5 || fs[0] != hs[0] || fs[2..] != hs[2..] {
            return Err(Error::Dimension(format!(
                "ConvLSTM frame {fs:?} does not match state {hs:?}"
            )));
        }
        let pad = [0, self.kernel / 2, self.kernel / 2];
        let tape = frame.tape();
        let zero_bias = tape.constant(Tensor::zeros(&[4 * self.hidden_channels]));
        let gates = frame
            .conv3d(&p[self.wx], &p[self.b], pad)?
            .add(&state.hidden.conv3d(&p[self.wh], &zero_bias, pad)?)?;
        let c = self.hidden_channels;
        let i = gates.narrow(1, 0, c)?.sigmoid();
        let f = gates.narrow(1, c, c)?.sigmoid();
        let o = gates.narrow(1, 2 * c, c)?.sigmoid();
        let g = gates.narrow(1, 3 * c, c)?.tanh();
        let cell = f.mul(&state.cell)?.add(&i.mul(&g)?)?;
        let hidden = o.mul(&cell.tanh())?;
        Ok(ConvLstmState { hidden, cell })
    }
}

/// Standard LSTM cell, gate order i, f, g, o.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

impl LstmCell {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            input_dim,
            hidden,
            w: store.add_uniform(format!("{prefix}.w"), &[input_dim, 4 * hidden], input_dim, rng),
            u: store.add_uniform(format!("{prefix}.u"), &[hidden, 4 * hidden], hidden, rng),
            b: store.add_zeros(format!("{prefix}.b"), &[4 * hidden]),
        }
    }

    pub fn param_count(input_dim: usize, hidden: usize) -> usize {
        4 * hidden * (input_dim + hidden + 1)
    }

    pub fn macs(&self) -> u64 {
        (4 * self.hidden * (self.input_dim + self.hidden)) as u64
    }

    /// Returns `(h', c')`.
    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        h: Var<'t, T>,
        c: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let n = self.hidden;
        let gates = x
            .linear(&p[self.w], &p[self.b])?
            .add(&h.matmul(&p[self.u])?)?;
        let i = gates.narrow(1, 0, n)?.sigmoid();
        let f = gates.narrow(1, n, n)?.sigmoid();
        let g = gates.narrow(1, 2 * n, n)?.tanh();
        let o = gates.narrow(1, 3 * n, n)?.sigmoid();
        let c_new = f.mul(&c)?.add(&i.mul(&g)?)?;
        let h_new = o.mul(&c_new.tanh())?;
        Ok((h_new, c_new))
    }
}
