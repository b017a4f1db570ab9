//! Forward definitions of every primitive. Each records one node on the tape;
//! the matching backward rule lives in `rules.rs`.

use crate::error::{config_err, shape_err, Result};
use crate::kernels::{self, adaptive_bin, ConvGeom};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{Real, Tensor};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_C) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_C) * x * x * x);
    let th = u.tanh();
    let du = T::of(SQRT_2_OVER_PI) * (T::one() + T::of(3.0 * GELU_C) * x * x);
    T::of(0.5) * (T::one() + th) + T::of(0.5) * x * (T::one() - th * th) * du
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Stride, padding and grouping of a 2D convolution, per axis (height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Conv2dSpec {
            stride: (stride, stride),
            padding: (padding, padding),
            groups,
        }
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }
}

/// Output extent of a convolution along one axis.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn unary<T: Real>(tape: &mut Tape<T>, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
    let v = tape.value(x).map(f);
    tape.push(v, op)
}

impl<T: Real> Tape<T> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (Some((m, k)), Some((k2, n))) = (self.value(a).dims2(), self.value(b).dims2()) else {
            return Err(shape_err("matmul", sa, sb));
        };
        if k != k2 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b })
    }

    /// Grouped 2D cross-correlation: `x` is C_in×H×W, `w` is C_out×(C_in/g)×kh×kw,
    /// optional bias of length C_out.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (&[c_in, h, wd], &[c_out, cin_g, kh, kw]) = (&xs[..], &ws[..]) else {
            return Err(shape_err("conv2d", &xs, &ws));
        };
        let geom = self.conv_geom("conv2d", (c_in, h, wd), (c_out, cin_g, kh, kw), spec, &xs, &ws)?;
        self.conv_common(x, w, b, geom, vec![c_out, geom.oh, geom.ow])
    }

    /// Grouped 1D cross-correlation: `x` is C_in×T, `w` is C_out×(C_in/g)×k.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (&[c_in, t], &[c_out, cin_g, k]) = (&xs[..], &ws[..]) else {
            return Err(shape_err("conv1d", &xs, &ws));
        };
        let spec = Conv2dSpec {
            stride: (1, stride),
            padding: (0, padding),
            groups,
        };
        let geom = self.conv_geom("conv1d", (c_in, 1, t), (c_out, cin_g, 1, k), spec, &xs, &ws)?;
        self.conv_common(x, w, b, geom, vec![c_out, geom.ow])
    }

    fn conv_geom(
        &self,
        op: &'static str,
        (c_in, h, w): (usize, usize, usize),
        (c_out, cin_g, kh, kw): (usize, usize, usize, usize),
        spec: Conv2dSpec,
        xs: &[usize],
        ws: &[usize],
    ) -> Result<ConvGeom> {
        let g = spec.groups;
        if g == 0 || c_in % g != 0 || c_out % g != 0 {
            return Err(config_err(
                op,
                format!("channels in={c_in} out={c_out} not divisible by groups={g}"),
            ));
        }
        if cin_g != c_in / g {
            return Err(shape_err(op, xs, ws));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(config_err(op, format!("kernel {kh}×{kw} must have odd extents")));
        }
        let oh = conv_out_len(h, kh, spec.stride.0, spec.padding.0);
        let ow = conv_out_len(w, kw, spec.stride.1, spec.padding.1);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(config_err(op, format!("input {xs:?} too small for kernel {ws:?}")));
        };
        Ok(ConvGeom {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            sh: spec.stride.0,
            sw: spec.stride.1,
            ph: spec.padding.0,
            pw: spec.padding.1,
            groups: g,
            oh,
            ow,
        })
    }

    fn conv_common(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        out_shape: Vec<usize>,
    ) -> Result<Var> {
        if let Some(b) = b {
            if self.value(b).len() != geom.c_out {
                return Err(shape_err("conv bias", self.shape(b), &[geom.c_out]));
            }
        }
        let out = kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        self.push(Tensor::new(&out_shape, out)?, Op::Conv { x, w, b, geom })
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let name = op.name();
        // scalar-vs-tensor is the only broadcast allowed
        let (va, vb) = (self.value(a), self.value(b));
        let out = if va.shape() == vb.shape() {
            let d = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape(), d)?
        } else if vb.len() == 1 {
            let y = vb.item();
            va.map(|x| f(x, y))
        } else if va.len() == 1 {
            let x = va.item();
            vb.map(|y| f(x, y))
        } else {
            return Err(shape_err(name, va.shape(), vb.shape()));
        };
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let (s, c) = (T::of(scale), T::of(shift));
        unary(self, x, |v| s * v + c, Op::Affine { x, scale: s })
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -1.0, 0.0)
    }

    /// Absolute value; the derivative at exactly zero is taken to be zero.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        unary(self, x, |v| v.abs(), Op::Abs(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        unary(self, x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        unary(self, x, |v| v.max(T::zero()), Op::Relu(x))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        unary(self, x, gelu, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        unary(self, x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        unary(self, x, |v| v.exp(), Op::Exp(x))
    }

    /// Natural log of `max(x, floor)`; no gradient flows where the floor is active.
    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Result<Var> {
        let fl = T::of(floor);
        unary(self, x, |v| v.max(fl).ln(), Op::Ln { x, floor: fl })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum_all();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let m = v.sum_all() / T::of(v.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let c = *v.shape().last().unwrap();
        let out: Vec<T> = v.data().chunks(c).map(|r| r.iter().copied().sum()).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.push(Tensor::new(&shape, out)?, Op::SumLast(x))
    }

    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let c = *self.shape(x).last().unwrap();
        let s = self.sum_last(x)?;
        self.scale(s, 1.0 / c as f64)
    }

    /// Maximum over the last axis, keeping it with extent 1.
    pub fn max_last(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let c = *v.shape().last().unwrap();
        let mut argmax = Vec::with_capacity(v.len() / c);
        let mut out = Vec::with_capacity(v.len() / c);
        for (r, row) in v.data().chunks(c).enumerate() {
            let (j, m) = row
                .iter()
                .enumerate()
                .fold((0, row[0]), |(bj, bm), (j, &x)| if x > bm { (j, x) } else { (bj, bm) });
            argmax.push(r * c + j);
            out.push(m);
        }
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.push(Tensor::new(&shape, out)?, Op::MaxLast { x, argmax })
    }

    /// Mean over rows of an r×c matrix, giving 1×c.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let Some((r, c)) = v.dims2() else {
            return Err(shape_err("mean_rows", v.shape(), &[]));
        };
        let mut out = vec![T::zero(); c];
        for row in v.data().chunks(c) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        let inv = T::of(1.0 / r as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        self.push(Tensor::new(&[1, c], out)?, Op::MeanRows(x))
    }

    /// Concatenation of rank-2 tensors along axis 0 (rows) or 1 (columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() || axis > 1 {
            return Err(config_err("concat", "needs at least one part and axis 0 or 1"));
        }
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|&p| self.value(p).dims2().ok_or_else(|| shape_err("concat", self.shape(p), &[])))
            .collect::<Result<_>>()?;
        let (r0, c0) = dims[0];
        for (i, &(r, c)) in dims.iter().enumerate() {
            if (axis == 0 && c != c0) || (axis == 1 && r != r0) {
                return Err(shape_err("concat", self.shape(parts[0]), self.shape(parts[i])));
            }
        }
        let (value, shape) = if axis == 0 {
            let rows: usize = dims.iter().map(|d| d.0).sum();
            let mut out = Vec::with_capacity(rows * c0);
            for &p in parts {
                out.extend_from_slice(self.value(p).data());
            }
            (out, [rows, c0])
        } else {
            let cols: usize = dims.iter().map(|d| d.1).sum();
            let mut out = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for (&p, &(_, c)) in parts.iter().zip(&dims) {
                    out.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
                }
            }
            (out, [r0, cols])
        };
        self.push(
            Tensor::new(&shape, value)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        )
    }

    /// Contiguous range `start..start+len` of a rank-2 tensor along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let Some((r, c)) = v.dims2() else {
            return Err(shape_err("slice", v.shape(), &[]));
        };
        let ext = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > ext {
            return Err(config_err(
                "slice",
                format!("range {start}..{} out of bounds for {:?} axis {axis}", start + len, v.shape()),
            ));
        }
        let (out, shape) = if axis == 0 {
            (v.data()[start * c..(start + len) * c].to_vec(), [len, c])
        } else {
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&v.data()[i * c + start..i * c + start + len]);
            }
            (out, [r, len])
        };
        self.push(Tensor::new(&shape, out)?, Op::Slice { x, axis, start })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let Some((r, c)) = v.dims2() else {
            return Err(shape_err("transpose", v.shape(), &[]));
        };
        let d = v.data();
        let out = (0..r * c).map(|idx| d[(idx % r) * c + idx / r]).collect();
        self.push(Tensor::new(&[c, r], out)?, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, &[1, n])
    }

    /// Adaptive average pooling of a C×T map to C×`out_len`.
    pub fn adaptive_avg_pool1d(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let v = self.value(x);
        let Some((c, t)) = v.dims2() else {
            return Err(shape_err("adaptive_avg_pool1d", v.shape(), &[]));
        };
        if out_len == 0 {
            return Err(config_err("adaptive_avg_pool1d", "output length must be positive"));
        }
        let mut out = Vec::with_capacity(c * out_len);
        for row in v.data().chunks(t) {
            for i in 0..out_len {
                let (s, e) = adaptive_bin(i, t, out_len);
                let sum: T = row[s..e].iter().copied().sum();
                out.push(sum / T::of((e - s) as f64));
            }
        }
        self.push(Tensor::new(&[c, out_len], out)?, Op::AvgPool1d(x))
    }

    /// Adaptive max pooling of a C×T map to C×`out_len`.
    pub fn adaptive_max_pool1d(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let v = self.value(x);
        let Some((c, t)) = v.dims2() else {
            return Err(shape_err("adaptive_max_pool1d", v.shape(), &[]));
        };
        if out_len == 0 {
            return Err(config_err("adaptive_max_pool1d", "output length must be positive"));
        }
        let mut out = Vec::with_capacity(c * out_len);
        let mut argmax = Vec::with_capacity(c * out_len);
        for (ci, row) in v.data().chunks(t).enumerate() {
            for i in 0..out_len {
                let (s, e) = adaptive_bin(i, t, out_len);
                let mut best = s;
                for j in s + 1..e {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                out.push(row[best]);
                argmax.push(ci * t + best);
            }
        }
        self.push(Tensor::new(&[c, out_len], out)?, Op::MaxPool1d { x, argmax })
    }

    /// Softmax over the last axis, with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let c = *v.shape().last().unwrap();
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = out.len();
            out.extend(row.iter().map(|&x| (x - m).exp()));
            let z: T = out[start..].iter().copied().sum();
            out[start..].iter_mut().for_each(|e| *e = *e / z);
        }
        self.push(Tensor::new(v.shape(), out)?, Op::SoftmaxLast(x))
    }

    /// Layer normalization over the last axis (population variance).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().unwrap();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(shape_err("layer_norm", v.shape(), self.shape(gamma)));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let eps = T::of(eps);
        let inv_d = T::of(1.0 / d as f64);
        let mut xhat = Vec::with_capacity(v.len());
        let mut inv_std = Vec::with_capacity(v.len() / d);
        let mut out = Vec::with_capacity(v.len());
        for row in v.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &x) in row.iter().enumerate() {
                let h = (x - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let shape = v.shape().to_vec();
        self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Cosine similarity of two equally sized tensors viewed as flat vectors;
    /// norms are floored at 1e-8.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != self.value(b).len() {
            return Err(shape_err("cosine_similarity", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let (na, nb, dot) = cosine_parts(va, vb);
        self.push(Tensor::scalar(dot / (na * nb)), Op::Cosine { a, b })
    }

    /// Discrepancy tensor of two token matrices: for q (n×d) and k (m×d) the
    /// result is d×n×m with entry [c, i, j] = |q[i, c] − k[j, c]|.
    pub fn pairwise_abs_diff(&mut self, q: Var, k: Var) -> Result<Var> {
        let (Some((n, d)), Some((m, d2))) = (self.value(q).dims2(), self.value(k).dims2()) else {
            return Err(shape_err("pairwise_abs_diff", self.shape(q), self.shape(k)));
        };
        if d != d2 {
            return Err(shape_err("pairwise_abs_diff", self.shape(q), self.shape(k)));
        }
        let (qv, kv) = (self.value(q).data(), self.value(k).data());
        let mut out = vec![T::zero(); d * n * m];
        for c in 0..d {
            for i in 0..n {
                for j in 0..m {
                    out[(c * n + i) * m + j] = (qv[i * d + c] - kv[j * d + c]).abs();
                }
            }
        }
        self.push(Tensor::new(&[d, n, m], out)?, Op::PairwiseAbsDiff { q, k })
    }

    /// Adds a length-c bias to every row of a (…×c) tensor.
    pub fn bias_add(&mut self, x: Var, b: Var) -> Result<Var> {
        let v = self.value(x);
        let c = *v.shape().last().unwrap();
        let bv = self.value(b);
        if bv.len() != c {
            return Err(shape_err("bias_add", v.shape(), bv.shape()));
        }
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let shape = v.shape().to_vec();
        self.push(Tensor::new(&shape, out)?, Op::BiasAdd { x, b })
    }

    /// Multiplies row i of an r×c matrix by s[i].
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let v = self.value(x);
        let Some((r, c)) = v.dims2() else {
            return Err(shape_err("row_scale", v.shape(), self.shape(s)));
        };
        let sv = self.value(s);
        if sv.len() != r {
            return Err(shape_err("row_scale", v.shape(), sv.shape()));
        }
        let mut out = v.data().to_vec();
        for (row, &f) in out.chunks_mut(c).zip(sv.data()) {
            row.iter_mut().for_each(|o| *o = *o * f);
        }
        self.push(Tensor::new(&[r, c], out)?, Op::RowScale { x, s })
    }

    /// `x · w + b` for x (n×k), w (k×m), b (m).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.bias_add(y, b),
            None => Ok(y),
        }
    }
}

pub(crate) fn cosine_parts<T: Real>(a: &[T], b: &[T]) -> (T, T, T) {
    let floor = T::of(1e-8);
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt().max(floor);
    let dot = a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    (na, nb, dot)
}
