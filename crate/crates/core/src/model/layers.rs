use diffcore::{Conv2dSpec, Real, Tape, Var};

use crate::error::Result;
use crate::model::params::{Builder, Init, ParamId};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self::with_init(b, name, d_in, d_out, bias, Init::Weight { fan_in: d_in })
    }

    /// A layer whose weights start at zero (residual outputs).
    pub fn zeroed(b: &mut Builder, name: &str, d_in: usize, d_out: usize) -> Self {
        Self::with_init(b, name, d_in, d_out, true, Init::Zero { fan_in: d_in })
    }

    fn with_init(b: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool, init: Init) -> Self {
        b.scoped(name, |b| Linear {
            w: b.add("w", &[d_in, d_out], init),
            b: bias.then(|| b.add("b", &[d_out], Init::Bias)),
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        Ok(t.linear(x, self.w.var(p), self.b.map(|b| b.var(p)))?)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl Norm {
    pub fn new(b: &mut Builder, name: &str, d: usize, eps: f64) -> Self {
        b.scoped(name, |b| Norm {
            gamma: b.add("gamma", &[d], Init::One),
            beta: b.add("beta", &[d], Init::Bias),
            eps,
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        Ok(t.layer_norm(x, self.gamma.var(p), self.beta.var(p), self.eps)?)
    }

    /// Normalises a C×H×W map across channels at every position.
    pub fn forward_channels<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let shape = t.shape(x).to_vec();
        let (c, hw) = (shape[0], shape[1..].iter().product::<usize>());
        let flat = t.reshape(x, &[c, hw])?;
        let rows = t.transpose(flat)?;
        let y = self.forward(t, p, rows)?;
        let back = t.transpose(y)?;
        Ok(t.reshape(back, &shape)?)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: Conv2dSpec,
    pub one_d: bool,
}

impl Conv {
    /// 2D convolution with a square `k×k` kernel.
    pub fn conv2d(b: &mut Builder, name: &str, c_in: usize, c_out: usize, k: usize, spec: Conv2dSpec) -> Self {
        Self::make2d(b, name, c_in, c_out, (k, k), spec, false)
    }

    pub fn make2d(
        b: &mut Builder,
        name: &str,
        c_in: usize,
        c_out: usize,
        (kh, kw): (usize, usize),
        spec: Conv2dSpec,
        zero: bool,
    ) -> Self {
        let fan_in = c_in / spec.groups * kh * kw;
        let init = if zero { Init::Zero { fan_in } } else { Init::Weight { fan_in } };
        b.scoped(name, |b| Conv {
            w: b.add("w", &[c_out, c_in / spec.groups, kh, kw], init),
            b: b.add("b", &[c_out], Init::Bias),
            spec,
            one_d: false,
        })
    }

    pub fn conv1d(
        b: &mut Builder,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        groups: usize,
        zero: bool,
    ) -> Self {
        let fan_in = c_in / groups * k;
        let init = if zero { Init::Zero { fan_in } } else { Init::Weight { fan_in } };
        b.scoped(name, |b| Conv {
            w: b.add("w", &[c_out, c_in / groups, k], init),
            b: b.add("b", &[c_out], Init::Bias),
            spec: Conv2dSpec::new(1, (k - 1) / 2, groups),
            one_d: true,
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let (w, b) = (self.w.var(p), Some(self.b.var(p)));
        Ok(if self.one_d {
            t.conv1d(x, w, b, self.spec.stride.1, self.spec.padding.1, self.spec.groups)?
        } else {
            t.conv2d(x, w, b, self.spec)?
        })
    }
}

/// Linear → GELU → Linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(b: &mut Builder, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Self {
        b.scoped(name, |b| Mlp {
            fc1: Linear::new(b, "fc1", d_in, hidden, true),
            fc2: Linear::new(b, "fc2", hidden, d_out, true),
        })
    }

    pub fn residual(b: &mut Builder, name: &str, d: usize, hidden: usize) -> Self {
        b.scoped(name, |b| Mlp {
            fc1: Linear::new(b, "fc1", d, hidden, true),
            fc2: Linear::zeroed(b, "fc2", hidden, d),
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.fc1.forward(t, p, x)?;
        let h = t.gelu(h)?;
        self.fc2.forward(t, p, h)
    }
}

/// Image stem: three stride-2 convolutions and one stride-1 convolution,
/// each followed by channel normalisation and GELU, then a two-layer
/// perceptron over the flattened map.
#[derive(Clone, Debug)]
pub struct Stem {
    pub convs: Vec<(Conv, Norm)>,
    pub head: Mlp,
}

impl Stem {
    pub fn new(b: &mut Builder, widths: [usize; 2], c: usize, map: usize, d: usize, eps: f64) -> Self {
        b.scoped("stem", |b| {
            let chans = [3, widths[0], widths[1], c, c];
            let convs = (0..4)
                .map(|i| {
                    let stride = if i < 3 { 2 } else { 1 };
                    let spec = Conv2dSpec::new(stride, 1, 1);
                    (
                        Conv::conv2d(b, &format!("conv{i}"), chans[i], chans[i + 1], 3, spec),
                        Norm::new(b, &format!("norm{i}"), chans[i + 1], eps),
                    )
                })
                .collect();
            let head = Mlp::new(b, "embed", c * map * map, d, d);
            Stem { convs, head }
        })
    }

    /// Returns the 1×d image token and the C×H/8×W/8 map.
    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], img: Var) -> Result<(Var, Var)> {
        let mut x = img;
        for (conv, norm) in &self.convs {
            x = conv.forward(t, p, x)?;
            x = norm.forward_channels(t, p, x)?;
            x = t.gelu(x)?;
        }
        let flat = t.flatten(x)?;
        let token = self.head.forward(t, p, flat)?;
        Ok((token, x))
    }
}

/// Pools every signal channel to a fixed length and lifts it to a token.
#[derive(Clone, Debug)]
pub struct SignalEmbed {
    pub pool_len: usize,
    pub fc1: Linear,
    pub norm1: Norm,
    pub fc2: Linear,
    pub norm2: Norm,
    pub out: Linear,
}

impl SignalEmbed {
    pub fn new(b: &mut Builder, pool_len: usize, hidden: usize, d: usize, eps: f64) -> Self {
        b.scoped("signal", |b| SignalEmbed {
            pool_len,
            fc1: Linear::new(b, "fc1", pool_len, hidden, true),
            norm1: Norm::new(b, "norm1", hidden, eps),
            fc2: Linear::new(b, "fc2", hidden, hidden, true),
            norm2: Norm::new(b, "norm2", hidden, eps),
            out: Linear::new(b, "out", hidden, d, true),
        })
    }

    /// Returns N×d tokens and the pooled N×pool_len map.
    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], sig: Var) -> Result<(Var, Var)> {
        let pooled = t.adaptive_avg_pool1d(sig, self.pool_len)?;
        let mut h = self.fc1.forward(t, p, pooled)?;
        h = self.norm1.forward(t, p, h)?;
        h = t.gelu(h)?;
        h = self.fc2.forward(t, p, h)?;
        h = self.norm2.forward(t, p, h)?;
        h = t.gelu(h)?;
        Ok((self.out.forward(t, p, h)?, pooled))
    }
}

/// How the per-row gate between the two attention maps is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum GateMode {
    #[default]
    Learned,
    /// Every gate value fixed to the given constant.
    Fixed(f64),
}

/// Attention maps of one head, kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct HeadTrace {
    pub saw: Var,
    pub daw: Var,
    pub mix: Var,
    pub gate: Var,
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub bias: ParamId,
    pub diff_convs: Vec<Conv>,
    pub diff_mlp: Mlp,
    pub gate: Linear,
    pub d_h: usize,
}

impl AttentionHead {
    pub fn new(b: &mut Builder, name: &str, w: usize, d_h: usize, n_tokens: usize) -> Self {
        b.scoped(name, |b| {
            let wq = Linear::new(b, "q", w, d_h, false);
            let wk = Linear::new(b, "k", w, d_h, false);
            let wv = Linear::new(b, "v", w, d_h, false);
            let bias = b.add("pos_bias", &[n_tokens, n_tokens], Init::Zero { fan_in: 1 });
            let diff_convs = [5, 3, 1]
                .into_iter()
                .map(|k| {
                    let spec = Conv2dSpec::new(1, 0, 1).with_padding(0, (k - 1) / 2);
                    Conv::make2d(b, &format!("diff_k{k}"), d_h, d_h, (1, k), spec, false)
                })
                .collect();
            // No output bias: a shared shift of every logit cancels in the softmax.
            let diff_mlp = b.scoped("diff_mlp", |b| Mlp {
                fc1: Linear::new(b, "fc1", d_h, d_h, true),
                fc2: Linear::new(b, "fc2", d_h, 1, false),
            });
            let gate = Linear::new(b, "gate", 6, 1, true);
            AttentionHead {
                wq,
                wk,
                wv,
                bias,
                diff_convs,
                diff_mlp,
                gate,
                d_h,
            }
        })
    }

    pub fn similarity<T: Real>(&self, t: &mut Tape<T>, p: &[Var], q: Var, k: Var) -> Result<Var> {
        let kt = t.transpose(k)?;
        let s = t.matmul(q, kt)?;
        let s = t.scale(s, 1.0 / (self.d_h as f64).sqrt())?;
        let s = t.add(s, self.bias.var(p))?;
        Ok(t.softmax_rows(s)?)
    }

    pub fn difference<T: Real>(&self, t: &mut Tape<T>, p: &[Var], q: Var, k: Var) -> Result<Var> {
        let n = t.shape(q)[0];
        let m = t.shape(k)[0];
        let d = t.pairwise_abs_diff(q, k)?;
        let mut agg = None;
        for conv in &self.diff_convs {
            let y = conv.forward(t, p, d)?;
            agg = Some(match agg {
                None => y,
                Some(a) => t.add(a, y)?,
            });
        }
        let agg = t.reshape(agg.expect("three kernels"), &[self.d_h, n * m])?;
        let pairs = t.transpose(agg)?;
        let logits = self.diff_mlp.forward(t, p, pairs)?;
        let logits = t.reshape(logits, &[n, m])?;
        Ok(t.softmax_rows(logits)?)
    }

    /// Mean, maximum and entropy of every row, as r×3.
    fn row_stats<T: Real>(t: &mut Tape<T>, a: Var) -> Result<Var> {
        let mean = t.mean_last(a)?;
        let max = t.max_last(a)?;
        let la = t.ln_clamped(a, 1e-12)?;
        let pl = t.mul(a, la)?;
        let s = t.sum_last(pl)?;
        let ent = t.neg(s)?;
        Ok(t.concat(&[mean, max, ent], 1)?)
    }

    pub fn gate_values<T: Real>(&self, t: &mut Tape<T>, p: &[Var], saw: Var, daw: Var) -> Result<Var> {
        let a = Self::row_stats(t, saw)?;
        let b = Self::row_stats(t, daw)?;
        let feats = t.concat(&[a, b], 1)?;
        let z = self.gate.forward(t, p, feats)?;
        Ok(t.sigmoid(z)?)
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var, mode: GateMode) -> Result<(Var, HeadTrace)> {
        let q = self.wq.forward(t, p, x)?;
        let k = self.wk.forward(t, p, x)?;
        let v = self.wv.forward(t, p, x)?;
        let saw = self.similarity(t, p, q, k)?;
        let daw = self.difference(t, p, q, k)?;
        let gate = match mode {
            GateMode::Learned => self.gate_values(t, p, saw, daw)?,
            GateMode::Fixed(g) => {
                let n = t.shape(saw)[0];
                t.constant(diffcore::Tensor::full(&[n, 1], T::of(g)))
            }
        };
        let inv = t.affine(gate, -1.0, 1.0)?;
        let a = t.row_scale(saw, gate)?;
        let b = t.row_scale(daw, inv)?;
        let mix = t.add(a, b)?;
        let out = t.matmul(mix, v)?;
        Ok((out, HeadTrace { saw, daw, mix, gate }))
    }
}

/// Pre-norm transformer block with hybrid attention and a feed-forward
/// sublayer, both residual.
#[derive(Clone, Debug)]
pub struct HybridBlock {
    pub norm1: Norm,
    pub heads: Vec<AttentionHead>,
    pub proj: Linear,
    pub norm2: Norm,
    pub ffn: Mlp,
    pub width: usize,
}

impl HybridBlock {
    pub fn new(b: &mut Builder, name: &str, w: usize, heads: usize, n_tokens: usize, ffn_mult: usize, eps: f64) -> Self {
        b.scoped(name, |b| HybridBlock {
            norm1: Norm::new(b, "norm1", w, eps),
            heads: (0..heads)
                .map(|h| AttentionHead::new(b, &format!("head{h}"), w, w / heads, n_tokens))
                .collect(),
            proj: Linear::zeroed(b, "proj", w, w),
            norm2: Norm::new(b, "norm2", w, eps),
            ffn: Mlp::residual(b, "ffn", w, ffn_mult * w),
            width: w,
        })
    }

    pub fn forward<T: Real>(
        &self,
        t: &mut Tape<T>,
        p: &[Var],
        x: Var,
        mode: GateMode,
        trace: &mut Vec<HeadTrace>,
    ) -> Result<Var> {
        let xn = self.norm1.forward(t, p, x)?;
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (o, tr) = head.forward(t, p, xn, mode)?;
            outs.push(o);
            trace.push(tr);
        }
        let cat = t.concat(&outs, 1)?;
        let att = self.proj.forward(t, p, cat)?;
        let x1 = t.add(x, att)?;
        let xn2 = self.norm2.forward(t, p, x1)?;
        let f = self.ffn.forward(t, p, xn2)?;
        Ok(t.add(x1, f)?)
    }
}

/// Image-side multi-scale step: stride-2 downsampling plus a residual
/// pointwise/depthwise branch, and a summary vector of the new map.
#[derive(Clone, Debug)]
pub struct Rfm2d {
    pub down: Conv,
    pub pw1: Conv,
    pub dw: Conv,
    pub pw2: Conv,
    pub summary: Mlp,
}

impl Rfm2d {
    pub fn new(b: &mut Builder, name: &str, c: usize, out_side: usize, d_prime: usize) -> Self {
        b.scoped(name, |b| Rfm2d {
            down: Conv::conv2d(b, "down", c, c, 3, Conv2dSpec::new(2, 1, 1)),
            pw1: Conv::conv2d(b, "pw1", c, c, 1, Conv2dSpec::new(1, 0, 1)),
            dw: Conv::conv2d(b, "dw", c, c, 3, Conv2dSpec::new(1, 1, c)),
            pw2: Conv::make2d(b, "pw2", c, c, (1, 1), Conv2dSpec::new(1, 0, 1), true),
            summary: Mlp::new(b, "summary", c * out_side * out_side, d_prime, d_prime),
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let y = self.down.forward(t, p, x)?;
        let mut r = self.pw1.forward(t, p, y)?;
        r = t.gelu(r)?;
        r = self.dw.forward(t, p, r)?;
        r = t.gelu(r)?;
        r = self.pw2.forward(t, p, r)?;
        let next = t.add(y, r)?;
        let flat = t.flatten(next)?;
        Ok((next, self.summary.forward(t, p, flat)?))
    }
}

/// Signal-side multi-scale step: adaptive max pooling to half length plus a
/// residual convolution branch, and one summary row per channel.
#[derive(Clone, Debug)]
pub struct Rfm1d {
    pub out_len: usize,
    pub conv1: Conv,
    pub dw: Conv,
    pub conv2: Conv,
    pub summary: Mlp,
}

impl Rfm1d {
    pub fn new(b: &mut Builder, name: &str, c: usize, out_len: usize, d_prime: usize) -> Self {
        b.scoped(name, |b| Rfm1d {
            out_len,
            conv1: Conv::conv1d(b, "conv1", c, c, 3, 1, false),
            dw: Conv::conv1d(b, "dw", c, c, 3, c, false),
            conv2: Conv::conv1d(b, "conv2", c, c, 1, 1, true),
            summary: Mlp::new(b, "summary", out_len, d_prime, d_prime),
        })
    }

    pub fn forward<T: Real>(&self, t: &mut Tape<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let y = t.adaptive_max_pool1d(x, self.out_len)?;
        let mut r = self.conv1.forward(t, p, y)?;
        r = t.gelu(r)?;
        r = self.dw.forward(t, p, r)?;
        r = t.gelu(r)?;
        r = self.conv2.forward(t, p, r)?;
        let next = t.add(y, r)?;
        Ok((next, self.summary.forward(t, p, next)?))
    }
}
