//! Stride-1 3-D cross-correlation over (depth, height, width).

use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    inp: [usize; 3],
    ker: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn new(x: &[usize], k: &[usize], pad: [usize; 3]) -> Result<Self> {
        let (batch, xs) = match x.len() {
            4 => (1, x),
            5 => (x[0], &x[1..]),
            _ => {
                return Err(Error::Dimension(format!(
                    "conv3d input must be [C,D,H,W] or [B,C,D,H,W], got {x:?}"
                )))
            }
        };
        if k.len() != 5 || k[1] != xs[0] {
            return Err(Error::Dimension(format!(
                "conv3d kernels {k:?} do not match input {x:?}"
            )));
        }
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = xs[a + 1] + 2 * pad[a];
            if k[a + 2] > padded {
                return Err(Error::Dimension(format!(
                    "conv3d kernel extent {} exceeds padded input extent {padded} on axis {a}",
                    k[a + 2]
                )));
            }
            out[a] = padded - k[a + 2] + 1;
        }
        Ok(Self {
            batch,
            c_in: xs[0],
            c_out: k[0],
            inp: [xs[1], xs[2], xs[3]],
            ker: [k[2], k[3], k[4]],
            pad,
            out,
        })
    }

    fn in_vol(&self) -> usize {
        self.inp.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.out.iter().product()
    }

    fn ker_vol(&self) -> usize {
        self.ker.iter().product()
    }

    /// Output positions `o` along `axis` for which `o + koff - pad` is inside the input.
    #[inline]
    fn valid(&self, axis: usize, koff: usize) -> (usize, usize) {
        let lo = self.pad[axis].saturating_sub(koff);
        let hi = (self.inp[axis] + self.pad[axis])
            .saturating_sub(koff)
            .min(self.out[axis]);
        (lo, hi.max(lo))
    }

    /// Visits every (kernel offset, output position, input position) triple.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [_, oh, ow] = self.out;
        let [_, ih, iw] = self.inp;
        let [kd, kh, kw] = self.ker;
        for a in 0..kd {
            let (d0, d1) = self.valid(0, a);
            for b in 0..kh {
                let (h0, h1) = self.valid(1, b);
                for c in 0..kw {
                    let (w0, w1) = self.valid(2, c);
                    let kidx = (a * kh + b) * kw + c;
                    for od in d0..d1 {
                        let id = od + a - self.pad[0];
                        for ohh in h0..h1 {
                            let ihh = ohh + b - self.pad[1];
                            let obase = (od * oh + ohh) * ow;
                            let ibase = (id * ih + ihh) * iw + c;
                            for oww in w0..w1 {
                                f(kidx, obase + oww, ibase + oww - self.pad[2]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn forward_raw<T: Scalar>(g: &Geometry, x: &[T], k: &[T], bias: &[T]) -> Vec<T> {
    let (iv, ov, kv) = (g.in_vol(), g.out_vol(), g.ker_vol());
    let mut out = vec![T::zero(); g.batch * g.c_out * ov];
    for b in 0..g.batch {
        for oc in 0..g.c_out {
            let o = &mut out[(b * g.c_out + oc) * ov..(b * g.c_out + oc + 1) * ov];
            o.iter_mut().for_each(|v| *v = bias[oc]);
            for ic in 0..g.c_in {
                let xi = &x[(b * g.c_in + ic) * iv..(b * g.c_in + ic + 1) * iv];
                let kk = &k[(oc * g.c_in + ic) * kv..(oc * g.c_in + ic + 1) * kv];
                g.for_each_tap(|kidx, op, ip| o[op] = o[op] + kk[kidx] * xi[ip]);
            }
        }
    }
    out
}

fn output_shape(g: &Geometry, rank: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(rank);
    if rank == 5 {
        s.push(g.batch);
    }
    s.push(g.c_out);
    s.extend_from_slice(&g.out);
    s
}

/// Plain-tensor convolution. `input` is `[C_in,D,H,W]` or `[B,C_in,D,H,W]`,
/// `kernels` is `[C_out,C_in,kd,kh,kw]`, `bias` is `[C_out]`.
pub fn conv3d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    padding: [usize; 3],
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), kernels.shape(), padding)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::Dimension(format!(
            "conv3d bias {:?} does not match {} output channels",
            bias.shape(),
            g.c_out
        )));
    }
    let out = forward_raw(&g, input.data(), kernels.data(), bias.data());
    Tensor::new(&output_shape(&g, input.rank()), out)
}

impl<'t, T: Scalar> Var<'t, T> {
    /// Differentiable [`conv3d_forward`].
    pub fn conv3d(&self, kernels: &Self, bias: &Self, padding: [usize; 3]) -> Result<Self> {
        let (x, k) = (self.value(), kernels.value());
        let v = conv3d_forward(&x, &k, &bias.value(), padding)?;
        let g = Geometry::new(x.shape(), k.shape(), padding)?;
        let xshape = x.shape().to_vec();
        let kshape = k.shape().to_vec();
        Ok(self.tape.op(v, &[*self, *kernels, *bias], move |grad| {
            let (iv, ov, kv) = (g.in_vol(), g.out_vol(), g.ker_vol());
            let gout = grad.data();
            let mut gx = vec![T::zero(); x.numel()];
            let mut gk = vec![T::zero(); k.numel()];
            let mut gb = vec![T::zero(); g.c_out];
            for b in 0..g.batch {
                for oc in 0..g.c_out {
                    let go = &gout[(b * g.c_out + oc) * ov..(b * g.c_out + oc + 1) * ov];
                    gb[oc] = gb[oc] + go.iter().copied().sum();
                    for ic in 0..g.c_in {
                        let xoff = (b * g.c_in + ic) * iv;
                        let koff = (oc * g.c_in + ic) * kv;
                        let xi = &x.data()[xoff..xoff + iv];
                        let kk = &k.data()[koff..koff + kv];
                        let gxi = &mut gx[xoff..xoff + iv];
                        let gkk = &mut gk[koff..koff + kv];
                        g.for_each_tap(|kidx, op, ip| {
                            gxi[ip] = gxi[ip] + kk[kidx] * go[op];
                            gkk[kidx] = gkk[kidx] + xi[ip] * go[op];
                        });
                    }
                }
            }
            vec![
                Some(Tensor::new(&xshape, gx).unwrap()),
                Some(Tensor::new(&kshape, gk).unwrap()),
                Some(Tensor::new(&[g.c_out], gb).unwrap()),
            ]
        }))
    }

    /// `[B,C,D,H,W]` → `[B,D,C]`: mean over the spatial plane of every frame.
    pub fn spatial_mean_pool(&self) -> Result<Self> {
        let s = self.shape();
        if s.len() != 5 {
            return Err(Error::Dimension(format!(
                "spatial_mean_pool needs [B,C,D,H,W], got {s:?}"
            )));
        }
        let (bt, c, d, hw) = (s[0], s[1], s[2], s[3] * s[4]);
        let scale = T::one() / T::of(hw as f64);
        let x = self.value();
        let mut out = vec![T::zero(); bt * d * c];
        for b in 0..bt {
            for ch in 0..c {
                for t in 0..d {
                    let off = ((b * c + ch) * d + t) * hw;
                    let m: T = x.data()[off..off + hw].iter().copied().sum();
                    out[(b * d + t) * c + ch] = m * scale;
                }
            }
        }
        let v = Tensor::new(&[bt, d, c], out)?;
        Ok(self.tape.op(v, &[*self], move |g| {
            let mut gx = vec![T::zero(); bt * c * d * hw];
            for b in 0..bt {
                for ch in 0..c {
                    for t in 0..d {
                        let gv = g.data()[(b * d + t) * c + ch] * scale;
                        let off = ((b * c + ch) * d + t) * hw;
                        gx[off..off + hw].iter_mut().for_each(|v| *v = gv);
                    }
                }
            }
            vec![Some(Tensor::new(&s, gx).unwrap())]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::<f64>::from_fn(&[1, 3, 4, 5], |k| (k as f64 * 0.3).sin());
        let mut k = Tensor::zeros(&[1, 1, 3, 3, 3]);
        k.set(&[0, 0, 1, 1, 1], 1.0);
        let y = conv3d_forward(&x, &k, &Tensor::zeros(&[1]), [1, 1, 1]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_kernels_broadcast_bias() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 3], |k| k as f64);
        let k = Tensor::zeros(&[1, 2, 2, 2, 2]);
        let y = conv3d_forward(&x, &k, &Tensor::full(&[1], 0.7), [0, 0, 0]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 1, 1]);
        assert!(matches!(
            conv3d_forward(&x, &k, &Tensor::zeros(&[1]), [1, 0, 0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::<f32>::zeros(&[3, 1, 6, 11, 11]);
        let k = Tensor::zeros(&[4, 1, 3, 2, 5]);
        let y = conv3d_forward(&x, &k, &Tensor::zeros(&[4]), [1, 0, 2]).unwrap();
        assert_eq!(y.shape(), &[3, 4, 6, 10, 11]);
    }
}
