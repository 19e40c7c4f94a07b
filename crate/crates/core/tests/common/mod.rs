#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stn::autodiff::Tape;
use stn::fusion::CrossAttention;
use stn::gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
use stn::model::{build_model, loss_l2, Mode, ModelConfig, Variant};
use stn::params::{Bound, ParamStore};
use stn::recurrent::SlstmLayer;
use stn::Tensor;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, g: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| g.gen_range(lo..hi))
}

/// (h=8, b=1, a=2, l=1, f=2, r=2, n=3)
pub fn tiny_config(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::new(variant, 8, 1, 2, 1, 2);
    c.radius = 2;
    c.steps = 3;
    c
}

/// Forward + L2 loss of a 64-bit model with every parameter redrawn in
/// [-0.5, 0.5], checked against central differences.
pub fn model_grad_check(cfg: &ModelConfig, mode: Mode, seed: u64, per_tensor: usize) -> GradCheckReport {
    let mut model = build_model::<f64>(cfg, seed).unwrap();
    let mut g = rng(seed + 1000);
    for p in model.params.iter_mut() {
        p.value = p.value.map(|_| g.gen_range(-0.5..0.5));
    }
    let windows = uniform(&model.window_shape(2), -1.5, 1.5, &mut g);
    let targets = uniform(&[2, cfg.horizon], -1.0, 1.0, &mut g);
    let point: Vec<(&str, Tensor<f64>)> = model
        .params
        .iter()
        .map(|p| (p.name.as_str(), p.value.clone()))
        .collect();
    grad_check_sampled(
        |_, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let out = model.forward(&bound, &windows, mode)?;
            loss_l2(&out.prediction, &targets)
        },
        &point,
        FD_STEP,
        per_tensor,
    )
    .unwrap()
}

pub fn conv3d_grad_check(seed: u64) -> GradCheckReport {
    let mut g = rng(seed);
    let x = uniform(&[2, 2, 3, 4, 4], -1.0, 1.0, &mut g);
    let k = uniform(&[3, 2, 3, 3, 3], -0.5, 0.5, &mut g);
    let b = uniform(&[3], -0.5, 0.5, &mut g);
    let w = uniform(&[2, 3, 3, 4, 4], -1.0, 1.0, &mut g);
    grad_check(
        |t, v| {
            let y = v[0].conv3d(&v[1], &v[2], [1, 1, 1])?;
            Ok(y.mul(&t.constant(w.clone()))?.sum())
        },
        &[("x", x), ("k", k), ("b", b)],
        FD_STEP,
    )
    .unwrap()
}

pub fn softmax_grad_check(seed: u64) -> GradCheckReport {
    let mut g = rng(seed);
    let x = uniform(&[2, 3, 5], -3.0, 3.0, &mut g);
    let w1 = uniform(&[2, 3, 5], -1.0, 1.0, &mut g);
    let w2 = uniform(&[2, 3, 5], -1.0, 1.0, &mut g);
    grad_check(
        |t, v| {
            let a = v[0].softmax(2)?.mul(&t.constant(w1.clone()))?.sum();
            let b = v[0].softmax(1)?.mul(&t.constant(w2.clone()))?.sum();
            a.add(&b)
        },
        &[("x", x)],
        FD_STEP,
    )
    .unwrap()
}

pub fn layer_norm_grad_check(seed: u64) -> GradCheckReport {
    let mut g = rng(seed);
    let x = uniform(&[2, 3, 6], -2.0, 2.0, &mut g);
    let gamma = uniform(&[6], 0.5, 1.5, &mut g);
    let beta = uniform(&[6], -0.5, 0.5, &mut g);
    let w = uniform(&[2, 3, 6], -1.0, 1.0, &mut g);
    grad_check(
        |t, v| {
            let y = v[0].layer_norm(&v[1], &v[2], 1e-5)?;
            Ok(y.mul(&t.constant(w.clone()))?.sum())
        },
        &[("x", x), ("gamma", gamma), ("beta", beta)],
        FD_STEP,
    )
    .unwrap()
}

pub fn batch_norm_grad_check(seed: u64) -> GradCheckReport {
    let mut g = rng(seed);
    let x = uniform(&[2, 3, 2, 3, 3], -2.0, 2.0, &mut g);
    let gamma = uniform(&[3], 0.5, 1.5, &mut g);
    let beta = uniform(&[3], -0.5, 0.5, &mut g);
    let w = uniform(&[2, 3, 2, 3, 3], -1.0, 1.0, &mut g);
    grad_check(
        |t, v| {
            let (y, _) = v[0].batch_norm_train(&v[1], &v[2], 1e-5)?;
            Ok(y.mul(&t.constant(w.clone()))?.sum())
        },
        &[("x", x), ("gamma", gamma), ("beta", beta)],
        FD_STEP,
    )
    .unwrap()
}

/// Two sLSTM steps from the zero state, so the second sees non-trivial c, n, m.
pub fn slstm_step_grad_check(seed: u64) -> GradCheckReport {
    let mut g = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let layer = SlstmLayer::new(&mut store, "s", 3, 4, 2, &mut g).unwrap();
    for p in store.iter_mut() {
        p.value = p.value.map(|_| g.gen_range(-1.0..1.0));
    }
    let x1 = uniform(&[2, 3], -1.5, 1.5, &mut g);
    let x2 = uniform(&[2, 3], -1.5, 1.5, &mut g);
    let w = uniform(&[2, 4], -1.0, 1.0, &mut g);
    let mut point: Vec<(&str, Tensor<f64>)> = vec![("x1", x1), ("x2", x2)];
    point.extend(store.iter().map(|p| (p.name.as_str(), p.value.clone())));
    grad_check(
        |t, v| {
            let bound = Bound::from_vars(v[2..].to_vec());
            let s0 = layer.zero_state(t, 2);
            let s1 = layer.step(&bound, v[0], &s0)?;
            let s2 = layer.step(&bound, v[1], &s1)?;
            Ok(s2.hidden.mul(&t.constant(w.clone()))?.sum().add(&s1.hidden.sum())?)
        },
        &point,
        FD_STEP,
    )
    .unwrap()
}

pub fn cross_attention_grad_check(seed: u64) -> GradCheckReport {
    let mut g = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let attn = CrossAttention::new(&mut store, "x", 4, 2, &mut g).unwrap();
    for p in store.iter_mut() {
        p.value = p.value.map(|_| g.gen_range(-1.0..1.0));
    }
    let spatial = uniform(&[2, 3, 4], -1.0, 1.0, &mut g);
    let temporal = uniform(&[2, 5, 4], -1.0, 1.0, &mut g);
    let w = uniform(&[2, 3, 4], -1.0, 1.0, &mut g);
    let mut point: Vec<(&str, Tensor<f64>)> = vec![("spatial", spatial), ("temporal", temporal)];
    point.extend(store.iter().map(|p| (p.name.as_str(), p.value.clone())));
    grad_check(
        |t, v| {
            let bound = Bound::from_vars(v[2..].to_vec());
            let y = attn.forward(&bound, &v[0], &v[1])?;
            Ok(y.mul(&t.constant(w.clone()))?.sum())
        },
        &point,
        FD_STEP,
    )
    .unwrap()
}

/// Direct six-loop convolution. `x` is `[B,Ci,D,H,W]`, `k` is `[Co,Ci,kd,kh,kw]`.
pub fn naive_conv3d(x: &Tensor<f64>, k: &Tensor<f64>, bias: &Tensor<f64>, pad: [usize; 3]) -> Tensor<f64> {
    let (xs, ks) = (x.shape(), k.shape());
    let (nb, ci, d, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (co, kd, kh, kw) = (ks[0], ks[2], ks[3], ks[4]);
    let (od, oh, ow) = (d + 2 * pad[0] + 1 - kd, h + 2 * pad[1] + 1 - kh, w + 2 * pad[2] + 1 - kw);
    let mut out = Tensor::zeros(&[nb, co, od, oh, ow]);
    for b in 0..nb {
        for o in 0..co {
            for z in 0..od {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bias.get(&[o]);
                        for c in 0..ci {
                            for a in 0..kd {
                                for p in 0..kh {
                                    for q in 0..kw {
                                        let (zi, yi, xi) = (
                                            z as isize + a as isize - pad[0] as isize,
                                            y as isize + p as isize - pad[1] as isize,
                                            xx as isize + q as isize - pad[2] as isize,
                                        );
                                        if zi < 0 || yi < 0 || xi < 0 || zi >= d as isize || yi >= h as isize || xi >= w as isize {
                                            continue;
                                        }
                                        acc += k.get(&[o, c, a, p, q])
                                            * x.get(&[b, c, zi as usize, yi as usize, xi as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, o, z, y, xx], acc);
                    }
                }
            }
        }
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Per-pixel ConvLSTM step with gate order i, f, o, g. Maps are `[B,C,1,H,W]`.
pub fn naive_convlstm_step(
    wx: &Tensor<f64>,
    wh: &Tensor<f64>,
    b: &Tensor<f64>,
    frame: &Tensor<f64>,
    h_prev: &Tensor<f64>,
    c_prev: &Tensor<f64>,
) -> (Tensor<f64>, Tensor<f64>) {
    let hc = wx.shape()[0] / 4;
    let (ci, kk) = (wx.shape()[1], wx.shape()[3]);
    let fs = frame.shape();
    let (nb, hh, ww) = (fs[0], fs[3], fs[4]);
    let p = (kk / 2) as isize;
    let mut h_new = Tensor::zeros(h_prev.shape());
    let mut c_new = Tensor::zeros(c_prev.shape());
    for bb in 0..nb {
        for y in 0..hh {
            for x in 0..ww {
                let gate = |g: usize, u: usize| {
                    let oc = g * hc + u;
                    let mut acc = b.get(&[oc]);
                    for dy in 0..kk {
                        for dx in 0..kk {
                            let (yi, xi) = (y as isize + dy as isize - p, x as isize + dx as isize - p);
                            if yi < 0 || xi < 0 || yi >= hh as isize || xi >= ww as isize {
                                continue;
                            }
                            let (yi, xi) = (yi as usize, xi as usize);
                            for c in 0..ci {
                                acc += wx.get(&[oc, c, 0, dy, dx]) * frame.get(&[bb, c, 0, yi, xi]);
                            }
                            for c in 0..hc {
                                acc += wh.get(&[oc, c, 0, dy, dx]) * h_prev.get(&[bb, c, 0, yi, xi]);
                            }
                        }
                    }
                    acc
                };
                for u in 0..hc {
                    let i = sigmoid(gate(0, u));
                    let f = sigmoid(gate(1, u));
                    let o = sigmoid(gate(2, u));
                    let gg = gate(3, u).tanh();
                    let c = f * c_prev.get(&[bb, u, 0, y, x]) + i * gg;
                    c_new.set(&[bb, u, 0, y, x], c);
                    h_new.set(&[bb, u, 0, y, x], o * c.tanh());
                }
            }
        }
    }
    (h_new, c_new)
}

/// Unstabilized sLSTM layer on one sample with the block-diagonal recurrence
/// expanded. Returns the hidden sequence and the largest |pre-activation|.
pub fn naive_slstm(w: &Tensor<f64>, r: &Tensor<f64>, b: &Tensor<f64>, xs: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let (din, h4) = (w.shape()[0], w.shape()[1]);
    let h = h4 / 4;
    let (heads, dh) = (r.shape()[0], r.shape()[1]);
    let (mut c, mut n, mut hid) = (vec![0.0; h], vec![0.0; h], vec![0.0; h]);
    let mut out = Vec::new();
    let mut peak = 0.0f64;
    for x in xs {
        let mut pre = b.data().to_vec();
        for (col, p) in pre.iter_mut().enumerate() {
            for (k, xv) in x.iter().enumerate().take(din) {
                *p += xv * w.get(&[k, col]);
            }
        }
        for g in 0..4 {
            for head in 0..heads {
                for u in 0..dh {
                    let acc: f64 = (0..dh).map(|j| hid[head * dh + j] * r.get(&[head, j, g * dh + u])).sum();
                    pre[g * h + head * dh + u] += acc;
                }
            }
        }
        peak = pre.iter().fold(peak, |m, v| m.max(v.abs()));
        for k in 0..h {
            let z = pre[k].tanh();
            let i = pre[h + k].exp();
            let f = pre[2 * h + k].exp();
            let o = sigmoid(pre[3 * h + k]);
            c[k] = f * c[k] + i * z;
            n[k] = f * n[k] + i;
            hid[k] = o * c[k] / n[k];
        }
        out.push(hid.clone());
    }
    (out, peak)
}

/// Stabilized sLSTM stack run through the library on one sample.
pub fn library_slstm(store: &ParamStore<f64>, stack: &stn::recurrent::Slstm, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let tape = Tape::new();
    let p = store.bind_frozen(&tape);
    let vars: Vec<_> = xs
        .iter()
        .map(|x| tape.constant(Tensor::from_f64(&[1, x.len()], x).unwrap()))
        .collect();
    stack
        .sequence(&p, &vars)
        .unwrap()
        .iter()
        .map(|v| v.value().data().to_vec())
        .collect()
}

/// 32-bit LCG shared with the scikit-image script that produced [`SSIM_REFERENCE`].
pub struct Lcg(u64);

impl Lcg {
    pub fn new() -> Self {
        Lcg(12345)
    }

    pub fn next(&mut self) -> f64 {
        self.0 = (1_664_525 * self.0 + 1_013_904_223) % (1 << 32);
        self.0 as f64 / (1u64 << 32) as f64
    }

    /// `(actual, pred)` 16×16 pair: actual uniform in [0, 100), pred = actual + U(−20, 20).
    pub fn ssim_pair(&mut self) -> (Tensor<f64>, Tensor<f64>) {
        let a: Vec<f64> = (0..256).map(|_| self.next() * 100.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v + (self.next() - 0.5) * 40.0).collect();
        (
            Tensor::from_f64(&[16, 16], &a).unwrap(),
            Tensor::from_f64(&[16, 16], &b).unwrap(),
        )
    }
}

/// `skimage.metrics.structural_similarity(pred, actual, win_size=7,
/// data_range=actual.max()-actual.min(), gaussian_weights=False,
/// use_sample_covariance=True)` on the 20 pairs of [`Lcg::ssim_pair`].
pub const SSIM_REFERENCE: [f64; 20] = [
    0.9275688568724785,
    0.9184666716670229,
    0.924073016765604,
    0.9298681511085234,
    0.9287621685193836,
    0.9321203565212552,
    0.9341987928729565,
    0.9143290456408755,
    0.9254075826348833,
    0.927934632396131,
    0.9229019624190782,
    0.9259542363682387,
    0.9239586322906077,
    0.9203078917874106,
    0.9294720604925619,
    0.9254727355482703,
    0.9300152181955116,
    0.9232889229650444,
    0.9301984865193327,
    0.9342138432574397,
];
