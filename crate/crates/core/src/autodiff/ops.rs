//! Elementwise, linear-algebra and shape operations on [`Var`].

use std::rc::Rc;

use super::Var;
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `a[m×k] · b[k×n]`.
pub(crate) fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `g[m×n] · b[k×n]ᵀ` → `[m×k]`.
pub(crate) fn mm_nt<T: Scalar>(g: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `a[m×k]ᵀ · g[m×n]` → `[k×n]`.
pub(crate) fn mm_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
    out
}

fn tensor<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("kernel produced a consistent shape")
}

impl<'t, T: Scalar> Var<'t, T> {
    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(shape_mismatch(op, &a, &b));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        let v = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self
            .tape
            .op(v, &[*self, *other], |g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        let v = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.tape.op(v, &[*self, *other], |g| {
            vec![Some(g.clone()), Some(g.map(|x| -x))]
        }))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let v = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.tape.op(v, &[*self, *other], move |g| {
            vec![
                Some(g.zip_map(&b, |gv, bv| gv * bv).unwrap()),
                Some(g.zip_map(&a, |gv, av| gv * av).unwrap()),
            ]
        }))
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "div")?;
        let (a, b) = (self.value(), other.value());
        let v = a.zip_map(&b, |x, y| x / y)?;
        let out = Rc::new(v.clone());
        Ok(self.tape.op(v, &[*self, *other], move |g| {
            let ga = g.zip_map(&b, |gv, bv| gv / bv).unwrap();
            let gb = Tensor::from_fn(g.shape(), |k| {
                -g.data()[k] * out.data()[k] / b.data()[k]
            });
            vec![Some(ga), Some(gb)]
        }))
    }

    pub fn scale(&self, c: T) -> Self {
        let v = self.value().map(|x| x * c);
        self.tape.op(v, &[*self], move |g| vec![Some(g.map(|x| x * c))])
    }

    pub fn add_scalar(&self, c: T) -> Self {
        let v = self.value().map(|x| x + c);
        self.tape.op(v, &[*self], |g| vec![Some(g.clone())])
    }

    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Self {
        let x = self.value();
        let y = x.map(f);
        let out = Rc::new(y.clone());
        self.tape.op(y, &[*self], move |g| {
            vec![Some(Tensor::from_fn(g.shape(), |k| {
                g.data()[k] * df(x.data()[k], out.data()[k])
            }))]
        })
    }

    pub fn tanh(&self) -> Self {
        self.unary(T::tanh, |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn exp(&self) -> Self {
        self.unary(T::exp, |_, y| y)
    }

    pub fn square(&self) -> Self {
        self.unary(|x| x * x, |x, _| T::of(2.0) * x)
    }

    /// Tanh-form GELU.
    pub fn gelu(&self) -> Self {
        self.unary(gelu, |x, _| gelu_grad(x))
    }

    pub fn sum(&self) -> Self {
        let x = self.value();
        let shape = x.shape().to_vec();
        let v = Tensor::scalar(x.sum());
        self.tape
            .op(v, &[*self], move |g| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(&self) -> Self {
        let n = T::of(self.value().numel() as f64);
        self.sum().scale(T::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let old = self.shape();
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape.op(v, &[*self], move |g| {
            vec![Some(g.clone().reshape(&old).unwrap())]
        }))
    }

    /// `x[..., n] + bias[n]`, broadcasting the bias over leading axes.
    pub fn add_bias(&self, bias: &Self) -> Result<Self> {
        let xs = self.shape();
        let bs = bias.shape();
        let n = *xs.last().unwrap();
        if bs != [n] {
            return Err(shape_mismatch("add_bias", &xs, &bs));
        }
        let b = bias.value();
        let mut v = (*self.value()).clone();
        for row in v.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b.data()) {
                *o = *o + bv;
            }
        }
        Ok(self.tape.op(v, &[*self, *bias], move |g| {
            let mut gb = vec![T::zero(); n];
            for row in g.data().chunks(n) {
                for (acc, &gv) in gb.iter_mut().zip(row) {
                    *acc = *acc + gv;
                }
            }
            vec![Some(g.clone()), Some(tensor(&[n], gb))]
        }))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_mismatch("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (a, b) = (self.value(), other.value());
        let v = tensor(&[m, n], mm(a.data(), b.data(), m, k, n));
        Ok(self.tape.op(v, &[*self, *other], move |g| {
            vec![
                Some(tensor(&[m, k], mm_nt(g.data(), b.data(), m, n, k))),
                Some(tensor(&[k, n], mm_tn(a.data(), g.data(), m, k, n))),
            ]
        }))
    }

    /// Affine map over the last axis: `x · w + b` with `w[in×out]`, `b[out]`.
    /// Leading axes are flattened into rows.
    pub fn linear(&self, w: &Self, b: &Self) -> Result<Self> {
        let xs = self.shape();
        let d_in = *xs.last().unwrap();
        let rows = self.value().numel() / d_in;
        let ws = w.shape();
        if ws.len() != 2 || ws[0] != d_in {
            return Err(shape_mismatch("linear", &xs, &ws));
        }
        let y = self
            .reshape(&[rows, d_in])?
            .matmul(w)?
            .add_bias(b)?;
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = ws[1];
        y.reshape(&out_shape)
    }

    /// Batched matrix product `[B×m×k] · [B×k×n]`.
    pub fn bmm(&self, other: &Self) -> Result<Self> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_mismatch("bmm", &sa, &sb));
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (a, b) = (self.value(), other.value());
        let mut out = Vec::with_capacity(bt * m * n);
        for s in 0..bt {
            out.extend(mm(
                &a.data()[s * m * k..(s + 1) * m * k],
                &b.data()[s * k * n..(s + 1) * k * n],
                m,
                k,
                n,
            ));
        }
        let v = tensor(&[bt, m, n], out);
        Ok(self.tape.op(v, &[*self, *other], move |g| {
            let mut ga = Vec::with_capacity(bt * m * k);
            let mut gb = Vec::with_capacity(bt * k * n);
            for s in 0..bt {
                let gs = &g.data()[s * m * n..(s + 1) * m * n];
                ga.extend(mm_nt(gs, &b.data()[s * k * n..(s + 1) * k * n], m, n, k));
                gb.extend(mm_tn(&a.data()[s * m * k..(s + 1) * m * k], gs, m, k, n));
            }
            vec![
                Some(tensor(&[bt, m, k], ga)),
                Some(tensor(&[bt, k, n], gb)),
            ]
        }))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let s = self.shape();
        if s.len() != 2 && s.len() != 3 {
            return Err(Error::Dimension(format!("transpose needs rank 2 or 3, got {s:?}")));
        }
        let r = s.len();
        let (m, n) = (s[r - 2], s[r - 1]);
        let batch = self.value().numel() / (m * n);
        let mut out_shape = s.clone();
        out_shape[r - 2] = n;
        out_shape[r - 1] = m;
        let v = tensor(&out_shape, transpose_data(self.value().data(), batch, m, n));
        Ok(self.tape.op(v, &[*self], move |g| {
            vec![Some(tensor(&s, transpose_data(g.data(), batch, n, m)))]
        }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let s = self.shape();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(Error::Dimension(format!(
                "narrow axis {axis} [{start}, {}) out of bounds for {s:?}",
                start + len
            )));
        }
        let (outer, full, inner) = split_axis(&s, axis);
        let x = self.value();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * full * inner + start * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = s.clone();
        out_shape[axis] = len;
        let v = tensor(&out_shape, out);
        Ok(self.tape.op(v, &[*self], move |g| {
            let mut gx = Tensor::zeros(&s);
            for o in 0..outer {
                let base = o * full * inner + start * inner;
                gx.data_mut()[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }

    /// Index `index` along `axis`, dropping that axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Self> {
        let mut s = self.shape();
        let picked = self.narrow(axis, index, 1)?;
        s.remove(axis);
        if s.is_empty() {
            s.push(1);
        }
        picked.reshape(&s)
    }

    /// Mean over `axis`, dropping that axis.
    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        let s = self.shape();
        if axis >= s.len() {
            return Err(Error::Dimension(format!("mean_axis {axis} for {s:?}")));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let scale = T::one() / T::of(len as f64);
        let x = self.value();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc = *acc + v;
                }
            }
        }
        for v in &mut out {
            *v = *v * scale;
        }
        let mut out_shape = s.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let v = tensor(&out_shape, out);
        Ok(self.tape.op(v, &[*self], move |g| {
            let mut gx = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let gs = &g.data()[o * inner..(o + 1) * inner];
                for _ in 0..len {
                    gx.extend(gs.iter().map(|&v| v * scale));
                }
            }
            vec![Some(tensor(&s, gx))]
        }))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tape = first.tape;
        let s0 = first.shape();
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
        for s in &shapes {
            let ok = s.len() == s0.len()
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !ok || axis >= s.len() {
                return Err(shape_mismatch("concat", &s0, s));
            }
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let lens: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = lens.iter().sum();
        let values: Vec<Rc<Tensor<T>>> = parts.iter().map(|p| p.value()).collect();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, &l) in values.iter().zip(&lens) {
                out.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut out_shape = s0.clone();
        out_shape[axis] = total;
        let v = tensor(&out_shape, out);
        Ok(tape.op(v, parts, move |g| {
            let mut grads: Vec<Vec<T>> = lens
                .iter()
                .map(|&l| Vec::with_capacity(outer * l * inner))
                .collect();
            let mut off = 0;
            for _ in 0..outer {
                for (gv, &l) in grads.iter_mut().zip(&lens) {
                    gv.extend_from_slice(&g.data()[off..off + l * inner]);
                    off += l * inner;
                }
            }
            grads
                .into_iter()
                .zip(&shapes)
                .map(|(d, s)| Some(tensor(s, d)))
                .collect()
        }))
    }

    /// Stacks equally shaped tensors along a new `axis`.
    pub fn stack(parts: &[Self], axis: usize) -> Result<Self> {
        let expanded = parts
            .iter()
            .map(|p| {
                let mut s = p.shape();
                s.insert(axis, 1);
                p.reshape(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::concat(&expanded, axis)
    }

    /// `x[B, heads·dh] · blockdiag(r[heads, dh, gates·dh])`.
    ///
    /// Output column `g·(heads·dh) + j·dh + u` holds gate `g`, head `j`, unit
    /// `u`, so the result splits into contiguous per-gate slabs of width
    /// `heads·dh`.
    pub fn block_diag_matmul(&self, r: &Self) -> Result<Self> {
        let (xs, rs) = (self.shape(), r.shape());
        if xs.len() != 2 || rs.len() != 3 || rs[0] * rs[1] != xs[1] || rs[2] % rs[1] != 0 {
            return Err(shape_mismatch("block_diag_matmul", &xs, &rs));
        }
        let (batch, width) = (xs[0], xs[1]);
        let (heads, dh, gdh) = (rs[0], rs[1], rs[2]);
        let gates = gdh / dh;
        let out_w = gates * width;
        let (x, w) = (self.value(), r.value());
        let mut out = vec![T::zero(); batch * out_w];
        for b in 0..batch {
            for j in 0..heads {
                let xh = &x.data()[b * width + j * dh..b * width + (j + 1) * dh];
                let rj = &w.data()[j * dh * gdh..(j + 1) * dh * gdh];
                let prod = mm(xh, rj, 1, dh, gdh);
                for g in 0..gates {
                    let dst = b * out_w + g * width + j * dh;
                    out[dst..dst + dh].copy_from_slice(&prod[g * dh..(g + 1) * dh]);
                }
            }
        }
        let v = tensor(&[batch, out_w], out);
        Ok(self.tape.op(v, &[*self, *r], move |g| {
            let mut gx = vec![T::zero(); batch * width];
            let mut gr = vec![T::zero(); heads * dh * gdh];
            let mut gslab = vec![T::zero(); gdh];
            for b in 0..batch {
                for j in 0..heads {
                    for gi in 0..gates {
                        let src = b * out_w + gi * width + j * dh;
                        gslab[gi * dh..(gi + 1) * dh].copy_from_slice(&g.data()[src..src + dh]);
                    }
                    let xh = &x.data()[b * width + j * dh..b * width + (j + 1) * dh];
                    let rj = &w.data()[j * dh * gdh..(j + 1) * dh * gdh];
                    let gxh = mm_nt(&gslab, rj, 1, gdh, dh);
                    gx[b * width + j * dh..b * width + (j + 1) * dh].copy_from_slice(&gxh);
                    let grj = mm_tn(xh, &gslab, 1, dh, gdh);
                    for (acc, v) in gr[j * dh * gdh..(j + 1) * dh * gdh].iter_mut().zip(grj) {
                        *acc = *acc + v;
                    }
                }
            }
            vec![
                Some(tensor(&[batch, width], gx)),
                Some(tensor(&[heads, dh, gdh], gr)),
            ]
        }))
    }

    /// Mean squared error against a constant target of the same shape.
    pub fn mse(&self, target: &Tensor<T>) -> Result<Self> {
        let s = self.shape();
        if s != target.shape() {
            return Err(shape_mismatch("mse", &s, target.shape()));
        }
        let diff = self.value().zip_map(target, |p, t| p - t)?;
        let n = T::of(diff.numel() as f64);
        let v = Tensor::scalar(diff.data().iter().map(|&d| d * d).sum::<T>() / n);
        Ok(self.tape.op(v, &[*self], move |g| {
            let c = T::of(2.0) * g.item() / n;
            vec![Some(diff.map(|d| d * c))]
        }))
    }
}

fn transpose_data<T: Scalar>(x: &[T], batch: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        let off = b * m * n;
        for i in 0..m {
            for j in 0..n {
                out[off + j * m + i] = x[off + i * n + j];
            }
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    T::of(0.5) * (T::one() + t)
        + T::of(0.5) * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_hand_expanded() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.value().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let tape = Tape::new();
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let i = tape.leaf(Tensor::eye(2));
        let out = i.matmul(&tape.leaf(m.clone())).unwrap();
        assert_eq!(*out.value(), m);
        let z = tape.leaf(Tensor::zeros(&[2, 3]));
        let any = tape.leaf(Tensor::from_fn(&[3, 4], |k| k as f64 - 4.5));
        assert_eq!(*z.matmul(&any).unwrap().value(), Tensor::zeros(&[2, 4]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let msg = a.matmul(&b).err().unwrap().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn concat_and_narrow_are_inverse() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::from_fn(&[2, 3], |k| k as f64));
        let b = tape.leaf(Tensor::from_fn(&[2, 2], |k| 10.0 + k as f64));
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), vec![2, 5]);
        assert_eq!(*c.narrow(1, 0, 3).unwrap().value(), *a.value());
        assert_eq!(*c.narrow(1, 3, 2).unwrap().value(), *b.value());
    }

    #[test]
    fn block_diag_matches_dense_block_matrix() {
        // two heads of width 2, two gates
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[3, 4], |k| (k as f64 * 0.37).sin()));
        let r = tape.leaf(Tensor::from_fn(&[2, 2, 4], |k| (k as f64 * 0.71).cos()));
        let y = x.block_diag_matmul(&r).unwrap().value();
        let (xv, rv) = (x.value(), r.value());
        for b in 0..3 {
            for g in 0..2 {
                for j in 0..2 {
                    for u in 0..2 {
                        let want: f64 = (0..2)
                            .map(|v| xv.get(&[b, j * 2 + v]) * rv.get(&[j, v, g * 2 + u]))
                            .sum();
                        assert!((y.get(&[b, g * 4 + j * 2 + u]) - want).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn mse_of_hand_values() {
        let tape = Tape::new();
        let p = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        let loss = p.mse(&Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(loss.value().item(), 2.5);
        let g = tape.backward(loss).unwrap().wrt(p);
        // 2(p - t)/(B·τ)
        assert_eq!(g.data(), &[1.0, 2.0]);
    }
}
