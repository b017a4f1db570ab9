//! Backward rules, one per primitive.

use crate::kernels::{self, adaptive_bin};
use crate::ops::{cosine_parts, gelu_grad, sigmoid};
use crate::tape::{Node, Op, Var};
use crate::tensor::Real;

fn acc<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += *x),
        slot @ None => *slot = Some(g),
    }
}

fn wants<T: Real>(nodes: &[Node<T>], v: Var) -> bool {
    nodes[v.0].requires_grad
}

/// Gradient for one side of a zip op: reduced to a scalar when that side was broadcast.
fn zip_side<T: Real>(len: usize, g: Vec<T>) -> Vec<T> {
    if len == 1 && g.len() != 1 {
        vec![g.iter().copied().sum()]
    } else {
        g
    }
}

fn map_grad<T: Real>(x: &[T], g: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    x.iter().zip(g).map(|(&x, &g)| g * f(x)).collect()
}

pub(crate) fn propagate<T: Real>(
    nodes: &[Node<T>],
    i: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let node = &nodes[i];
    let val = |v: Var| nodes[v.0].value.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (m, k) = nodes[a.0].value.dims2().unwrap();
            let n = nodes[b.0].value.dims2().unwrap().1;
            if wants(nodes, *a) {
                let mut da = vec![T::zero(); m * k];
                kernels::matmul_bt_acc(g, val(*b), &mut da, m, n, k);
                acc(nodes, grads, *a, da);
            }
            if wants(nodes, *b) {
                let mut db = vec![T::zero(); k * n];
                kernels::matmul_at_acc(val(*a), g, &mut db, k, m, n);
                acc(nodes, grads, *b, db);
            }
        }
        Op::Conv { x, w, b, geom } => {
            let (dx, dw, db) =
                kernels::conv_backward(geom, val(*x), val(*w), g, wants(nodes, *x), wants(nodes, *w));
            if let Some(dx) = dx {
                acc(nodes, grads, *x, dx);
            }
            if let Some(dw) = dw {
                acc(nodes, grads, *w, dw);
            }
            if let Some(b) = b {
                acc(nodes, grads, *b, db);
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (la, lb) = (nodes[a.0].value.len(), nodes[b.0].value.len());
            let n = g.len();
            let at = |v: &[T], idx: usize| if v.len() == 1 { v[0] } else { v[idx] };
            let (ga, gb): (Vec<T>, Vec<T>) = match &node.op {
                Op::Add(..) => (g.to_vec(), g.to_vec()),
                Op::Sub(..) => (g.to_vec(), g.iter().map(|&x| -x).collect()),
                _ => {
                    let (va, vb) = (val(*a), val(*b));
                    (
                        (0..n).map(|j| g[j] * at(vb, j)).collect(),
                        (0..n).map(|j| g[j] * at(va, j)).collect(),
                    )
                }
            };
            acc(nodes, grads, *a, zip_side(la, ga));
            acc(nodes, grads, *b, zip_side(lb, gb));
        }
        Op::Affine { x, scale } => {
            acc(nodes, grads, *x, g.iter().map(|&v| v * *scale).collect());
        }
        Op::Abs(x) => {
            let d = map_grad(val(*x), g, |v| {
                if v > T::zero() {
                    T::one()
                } else if v < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            });
            acc(nodes, grads, *x, d);
        }
        Op::Sigmoid(x) => {
            let d = map_grad(val(*x), g, |v| {
                let s = sigmoid(v);
                s * (T::one() - s)
            });
            acc(nodes, grads, *x, d);
        }
        Op::Relu(x) => {
            let d = map_grad(val(*x), g, |v| if v > T::zero() { T::one() } else { T::zero() });
            acc(nodes, grads, *x, d);
        }
        Op::Gelu(x) => acc(nodes, grads, *x, map_grad(val(*x), g, gelu_grad)),
        Op::Tanh(x) => {
            let d = out.iter().zip(g).map(|(&y, &g)| g * (T::one() - y * y)).collect();
            acc(nodes, grads, *x, d);
        }
        Op::Exp(x) => {
            let d = out.iter().zip(g).map(|(&y, &g)| g * y).collect();
            acc(nodes, grads, *x, d);
        }
        Op::Ln { x, floor } => {
            let d = map_grad(val(*x), g, |v| if v > *floor { T::one() / v } else { T::zero() });
            acc(nodes, grads, *x, d);
        }
        Op::Sum(x) => acc(nodes, grads, *x, vec![g[0]; nodes[x.0].value.len()]),
        Op::Mean(x) => {
            let n = nodes[x.0].value.len();
            acc(nodes, grads, *x, vec![g[0] / T::of(n as f64); n]);
        }
        Op::SumLast(x) => {
            let c = *nodes[x.0].value.shape().last().unwrap();
            let d = g.iter().flat_map(|&gv| std::iter::repeat_n(gv, c)).collect();
            acc(nodes, grads, *x, d);
        }
        Op::MaxLast { x, argmax } | Op::MaxPool1d { x, argmax } => {
            let mut d = vec![T::zero(); nodes[x.0].value.len()];
            for (&idx, &gv) in argmax.iter().zip(g) {
                d[idx] += gv;
            }
            acc(nodes, grads, *x, d);
        }
        Op::MeanRows(x) => {
            let (r, _) = nodes[x.0].value.dims2().unwrap();
            let inv = T::of(1.0 / r as f64);
            let d = (0..r).flat_map(|_| g.iter().map(move |&v| v * inv)).collect();
            acc(nodes, grads, *x, d);
        }
        Op::Concat { parts, axis } => {
            let (_, total_c) = node.value.dims2().unwrap();
            let mut offset = 0;
            for &p in parts {
                let (r, c) = nodes[p.0].value.dims2().unwrap();
                let d = if *axis == 0 {
                    g[offset * total_c..(offset + r) * total_c].to_vec()
                } else {
                    (0..r)
                        .flat_map(|i| g[i * total_c + offset..i * total_c + offset + c].iter().copied())
                        .collect()
                };
                offset += if *axis == 0 { r } else { c };
                acc(nodes, grads, p, d);
            }
        }
        Op::Slice { x, axis, start } => {
            let (r, c) = nodes[x.0].value.dims2().unwrap();
            let (_, oc) = node.value.dims2().unwrap();
            let mut d = vec![T::zero(); r * c];
            if *axis == 0 {
                d[start * c..start * c + g.len()].copy_from_slice(g);
            } else {
                for i in 0..r {
                    d[i * c + start..i * c + start + oc].copy_from_slice(&g[i * oc..(i + 1) * oc]);
                }
            }
            acc(nodes, grads, *x, d);
        }
        Op::Transpose(x) => {
            let (r, c) = nodes[x.0].value.dims2().unwrap();
            // out is c×r; d[i, j] = g[j, i]
            let d = (0..r * c).map(|idx| g[(idx % c) * r + idx / c]).collect();
            acc(nodes, grads, *x, d);
        }
        Op::Reshape(x) => acc(nodes, grads, *x, g.to_vec()),
        Op::AvgPool1d(x) => {
            let (c, t) = nodes[x.0].value.dims2().unwrap();
            let (_, m) = node.value.dims2().unwrap();
            let mut d = vec![T::zero(); c * t];
            for ci in 0..c {
                for i in 0..m {
                    let (s, e) = adaptive_bin(i, t, m);
                    let share = g[ci * m + i] / T::of((e - s) as f64);
                    for j in s..e {
                        d[ci * t + j] += share;
                    }
                }
            }
            acc(nodes, grads, *x, d);
        }
        Op::SoftmaxLast(x) => {
            let c = *node.value.shape().last().unwrap();
            let mut d = Vec::with_capacity(g.len());
            for (yr, gr) in out.chunks(c).zip(g.chunks(c)) {
                let dot: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                d.extend(yr.iter().zip(gr).map(|(&y, &g)| y * (g - dot)));
            }
            acc(nodes, grads, *x, d);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let gm = val(*gamma);
            let d = gm.len();
            if wants(nodes, *x) {
                let inv_d = T::of(1.0 / d as f64);
                let mut dx = Vec::with_capacity(g.len());
                for ((gr, hr), &is) in g.chunks(d).zip(xhat.chunks(d)).zip(inv_std) {
                    let dh: Vec<T> = gr.iter().zip(gm).map(|(&g, &w)| g * w).collect();
                    let m1 = dh.iter().copied().sum::<T>() * inv_d;
                    let m2 = dh.iter().zip(hr).map(|(&a, &h)| a * h).sum::<T>() * inv_d;
                    dx.extend(dh.iter().zip(hr).map(|(&a, &h)| is * (a - m1 - h * m2)));
                }
                acc(nodes, grads, *x, dx);
            }
            let mut dg = vec![T::zero(); d];
            let mut db = vec![T::zero(); d];
            for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                for j in 0..d {
                    dg[j] += gr[j] * hr[j];
                    db[j] += gr[j];
                }
            }
            acc(nodes, grads, *gamma, dg);
            acc(nodes, grads, *beta, db);
        }
        Op::Cosine { a, b } => {
            let (va, vb) = (val(*a), val(*b));
            let (na, nb, dot) = cosine_parts(va, vb);
            let floor = T::of(1e-8);
            let gv = g[0];
            let side = |x: &[T], y: &[T], nx: T, ny: T| -> Vec<T> {
                let floored = nx <= floor;
                x.iter()
                    .zip(y)
                    .map(|(&xv, &yv)| {
                        let mut d = yv / (nx * ny);
                        if !floored {
                            d -= dot * xv / (nx * nx * nx * ny);
                        }
                        gv * d
                    })
                    .collect()
            };
            if wants(nodes, *a) {
                acc(nodes, grads, *a, side(va, vb, na, nb));
            }
            if wants(nodes, *b) {
                acc(nodes, grads, *b, side(vb, va, nb, na));
            }
        }
        Op::PairwiseAbsDiff { q, k } => {
            let (n, d) = nodes[q.0].value.dims2().unwrap();
            let (m, _) = nodes[k.0].value.dims2().unwrap();
            let (qv, kv) = (val(*q), val(*k));
            let mut dq = vec![T::zero(); n * d];
            let mut dk = vec![T::zero(); m * d];
            for c in 0..d {
                for i in 0..n {
                    for j in 0..m {
                        let diff = qv[i * d + c] - kv[j * d + c];
                        let s = if diff > T::zero() {
                            T::one()
                        } else if diff < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        let gv = g[(c * n + i) * m + j] * s;
                        dq[i * d + c] += gv;
                        dk[j * d + c] -= gv;
                    }
                }
            }
            acc(nodes, grads, *q, dq);
            acc(nodes, grads, *k, dk);
        }
        Op::BiasAdd { x, b } => {
            let c = nodes[b.0].value.len();
            let mut db = vec![T::zero(); c];
            for row in g.chunks(c) {
                for (d, &v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            acc(nodes, grads, *x, g.to_vec());
            acc(nodes, grads, *b, db);
        }
        Op::RowScale { x, s } => {
            let (_, c) = nodes[x.0].value.dims2().unwrap();
            let (xv, sv) = (val(*x), val(*s));
            if wants(nodes, *x) {
                let d = g
                    .chunks(c)
                    .zip(sv)
                    .flat_map(|(gr, &f)| gr.iter().map(move |&v| v * f))
                    .collect();
                acc(nodes, grads, *x, d);
            }
            let ds = g
                .chunks(c)
                .zip(xv.chunks(c))
                .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                .collect();
            acc(nodes, grads, *s, ds);
        }
        Op::Custom { inputs, backward } => {
            let vals: Vec<_> = inputs.iter().map(|v| &nodes[v.0].value).collect();
            let upstream = crate::tensor::Tensor::new(node.value.shape(), g.to_vec())
                .expect("upstream gradient matches node shape");
            let gs = backward(&vals, &upstream);
            for (&v, gt) in inputs.iter().zip(gs) {
                acc(nodes, grads, v, gt.into_data());
            }
        }
    }
}
