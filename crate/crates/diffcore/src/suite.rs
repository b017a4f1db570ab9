//! Named gradient checks covering every primitive of the engine.

use std::rc::Rc;

use crate::check::{grad_check, GradCheckOptions, GradCheckReport};
use crate::error::Result;
use crate::ops::Conv2dSpec;
use crate::random::{normal, rng, uniform};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative-error threshold every check must stay under.
pub const GRAD_TOL: f64 = 1e-4;

pub type ProbeFn = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

/// One scalar function of one tensor, checked at a fixed point.
pub struct Probe {
    pub name: String,
    pub point: Tensor<f64>,
    pub f: ProbeFn,
    pub opts: GradCheckOptions,
}

impl Probe {
    pub fn new(
        name: impl Into<String>,
        point: Tensor<f64>,
        f: impl Fn(&mut Tape<f64>, Var) -> Result<Var> + 'static,
    ) -> Self {
        Probe {
            name: name.into(),
            point,
            f: Box::new(f),
            opts: GradCheckOptions::default(),
        }
    }

    pub fn with_opts(mut self, opts: GradCheckOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn run(&self) -> Result<NamedCheck> {
        let report = grad_check(&self.f, &self.point, &self.opts)?;
        Ok(NamedCheck {
            name: self.name.clone(),
            report,
        })
    }
}

#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: String,
    pub report: GradCheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.passes(GRAD_TOL)
    }
}

/// Reduces `y` to a scalar by a fixed random weighting, so that no output
/// coordinate has a degenerate gradient.
pub fn project(tape: &mut Tape<f64>, y: Var, salt: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(normal(&mut rng(0x5eed ^ salt, 99), &shape, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn skip_kink() -> GradCheckOptions {
    GradCheckOptions {
        skip_near_zero: Some(1e-3),
        ..GradCheckOptions::default()
    }
}

/// Probes for every primitive, with inputs drawn from `seed`.
pub fn primitive_probes(seed: u64) -> Vec<Probe> {
    let mut r = rng(seed, 0);
    let mut n = |shape: &[usize]| normal::<f64>(&mut r, shape, 1.0);
    let mut probes = Vec::new();

    let (a, b) = (n(&[3, 4]), n(&[4, 5]));
    let bc = b.clone();
    probes.push(Probe::new("matmul[lhs]", a.clone(), move |t, x| {
        let b = t.constant(bc.clone());
        let y = t.matmul(x, b)?;
        project(t, y, 1)
    }));
    probes.push(Probe::new("matmul[rhs]", b, move |t, x| {
        let a = t.constant(a.clone());
        let y = t.matmul(a, x)?;
        project(t, y, 1)
    }));

    let (x2, w2, b2) = (n(&[2, 6, 5]), n(&[4, 2, 3, 3]), n(&[4]));
    {
        let (w, b) = (w2.clone(), b2.clone());
        probes.push(Probe::new("conv2d[input]", x2.clone(), move |t, x| {
            let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
            let y = t.conv2d(x, w, Some(b), Conv2dSpec::new(2, 1, 1))?;
            project(t, y, 2)
        }));
        let (x, b) = (x2.clone(), b2.clone());
        probes.push(Probe::new("conv2d[weight]", w2, move |t, w| {
            let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
            let y = t.conv2d(x, w, Some(b), Conv2dSpec::new(2, 1, 1))?;
            project(t, y, 2)
        }));
        let x = x2.clone();
        let w = n(&[4, 2, 3, 3]);
        probes.push(Probe::new("conv2d[bias]", b2, move |t, b| {
            let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.conv2d(x, w, Some(b), Conv2dSpec::new(1, 1, 1))?;
            project(t, y, 3)
        }));
    }
    let wd = n(&[4, 1, 3, 3]);
    probes.push(Probe::new("conv2d[depthwise]", n(&[4, 5, 5]), move |t, x| {
        let w = t.constant(wd.clone());
        let y = t.conv2d(x, w, None, Conv2dSpec::new(1, 1, 4))?;
        project(t, y, 4)
    }));
    let wr = n(&[3, 2, 1, 5]);
    probes.push(Probe::new("conv2d[1x5 row]", wr.clone(), move |t, w| {
        let x = t.constant(Tensor::from_fn(&[2, 3, 4], |i| ((i * 7) % 5) as f64 - 2.0));
        let y = t.conv2d(x, w, None, Conv2dSpec::new(1, 0, 1).with_padding(0, 2))?;
        project(t, y, 5)
    }));

    let (x1, w1) = (n(&[3, 9]), n(&[3, 1, 3]));
    {
        let w = w1.clone();
        probes.push(Probe::new("conv1d[input]", x1.clone(), move |t, x| {
            let w = t.constant(w.clone());
            let y = t.conv1d(x, w, None, 1, 1, 3)?;
            project(t, y, 6)
        }));
        let x = x1.clone();
        probes.push(Probe::new("conv1d[weight]", n(&[2, 3, 5]), move |t, w| {
            let x = t.constant(x.clone());
            let y = t.conv1d(x, w, None, 2, 2, 1)?;
            project(t, y, 7)
        }));
    }

    let other = n(&[3, 4]);
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        let o = other.clone();
        probes.push(Probe::new(name, n(&[3, 4]), move |t, x| {
            let o = t.constant(o.clone());
            let y = match which {
                0 => t.add(x, o)?,
                1 => t.sub(o, x)?,
                _ => t.mul(x, o)?,
            };
            project(t, y, 8)
        }));
    }
    let big = n(&[3, 4]);
    probes.push(Probe::new("mul[scalar operand]", Tensor::scalar(0.7), move |t, s| {
        let b = t.constant(big.clone());
        let y = t.mul(b, s)?;
        project(t, y, 9)
    }));
    probes.push(Probe::new("affine", n(&[5]), |t, x| {
        let y = t.affine(x, -1.7, 0.3)?;
        project(t, y, 10)
    }));
    probes.push(
        Probe::new("abs", n(&[2, 6]), |t, x| {
            let y = t.abs(x)?;
            project(t, y, 11)
        })
        .with_opts(skip_kink()),
    );
    probes.push(Probe::new("sigmoid", n(&[2, 6]), |t, x| {
        let y = t.sigmoid(x)?;
        project(t, y, 12)
    }));
    probes.push(
        Probe::new("relu", n(&[2, 6]), |t, x| {
            let y = t.relu(x)?;
            project(t, y, 13)
        })
        .with_opts(skip_kink()),
    );
    probes.push(Probe::new("gelu", n(&[2, 6]), |t, x| {
        let y = t.gelu(x)?;
        project(t, y, 14)
    }));
    probes.push(Probe::new("tanh", n(&[2, 6]), |t, x| {
        let y = t.tanh(x)?;
        project(t, y, 15)
    }));
    probes.push(Probe::new("exp", n(&[2, 6]), |t, x| {
        let y = t.exp(x)?;
        project(t, y, 16)
    }));
    let positive = uniform::<f64>(&mut rng(seed, 1), &[2, 5], 0.2, 3.0);
    probes.push(Probe::new("ln", positive, |t, x| {
        let y = t.ln_clamped(x, 1e-12)?;
        project(t, y, 17)
    }));
    probes.push(Probe::new("sum", n(&[3, 3]), |t, x| {
        let s = t.sum(x)?;
        t.mul(s, s)
    }));
    probes.push(Probe::new("mean", n(&[3, 3]), |t, x| {
        let s = t.mean(x)?;
        t.mul(s, s)
    }));
    probes.push(Probe::new("sum_last", n(&[3, 4]), |t, x| {
        let y = t.sum_last(x)?;
        project(t, y, 18)
    }));
    probes.push(Probe::new("max_last", n(&[4, 5]), |t, x| {
        let y = t.max_last(x)?;
        project(t, y, 19)
    }));
    probes.push(Probe::new("mean_rows", n(&[4, 3]), |t, x| {
        let y = t.mean_rows(x)?;
        project(t, y, 20)
    }));
    let side = n(&[3, 2]);
    probes.push(Probe::new("concat[cols]", n(&[3, 4]), move |t, x| {
        let s = t.constant(side.clone());
        let y = t.concat(&[s, x, x], 1)?;
        project(t, y, 21)
    }));
    probes.push(Probe::new("concat[rows]", n(&[2, 4]), |t, x| {
        let y = t.concat(&[x, x], 0)?;
        project(t, y, 22)
    }));
    probes.push(Probe::new("slice[cols]", n(&[3, 6]), |t, x| {
        let y = t.slice(x, 1, 2, 3)?;
        project(t, y, 23)
    }));
    probes.push(Probe::new("slice[rows]", n(&[5, 2]), |t, x| {
        let y = t.slice(x, 0, 1, 3)?;
        project(t, y, 24)
    }));
    probes.push(Probe::new("transpose", n(&[3, 5]), |t, x| {
        let y = t.transpose(x)?;
        project(t, y, 25)
    }));
    probes.push(Probe::new("reshape", n(&[2, 6]), |t, x| {
        let y = t.reshape(x, &[3, 4])?;
        project(t, y, 26)
    }));
    probes.push(Probe::new("adaptive_avg_pool1d", n(&[2, 11]), |t, x| {
        let y = t.adaptive_avg_pool1d(x, 4)?;
        project(t, y, 27)
    }));
    probes.push(Probe::new("adaptive_max_pool1d", n(&[2, 11]), |t, x| {
        let y = t.adaptive_max_pool1d(x, 5)?;
        project(t, y, 28)
    }));
    probes.push(Probe::new("softmax_rows", n(&[3, 5]), |t, x| {
        let y = t.softmax_rows(x)?;
        project(t, y, 29)
    }));
    let (lg, lb) = (n(&[6]), n(&[6]));
    {
        let (g, b) = (lg.clone(), lb.clone());
        probes.push(Probe::new("layer_norm[input]", n(&[3, 6]), move |t, x| {
            let (g, b) = (t.constant(g.clone()), t.constant(b.clone()));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, 30)
        }));
        let xv = n(&[3, 6]);
        let b = lb.clone();
        probes.push(Probe::new("layer_norm[gamma]", lg.clone(), move |t, g| {
            let (x, b) = (t.constant(xv.clone()), t.constant(b.clone()));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, 31)
        }));
        let xv = n(&[3, 6]);
        probes.push(Probe::new("layer_norm[beta]", lb, move |t, b| {
            let (x, g) = (t.constant(xv.clone()), t.constant(lg.clone()));
            let y = t.layer_norm(x, g, b, 1e-5)?;
            project(t, y, 32)
        }));
    }
    let cb = n(&[1, 7]);
    {
        let c = cb.clone();
        probes.push(Probe::new("cosine_similarity[a]", n(&[1, 7]), move |t, a| {
            let b = t.constant(c.clone());
            t.cosine_similarity(a, b)
        }));
        let a0 = n(&[1, 7]);
        probes.push(Probe::new("cosine_similarity[b]", cb, move |t, b| {
            let a = t.constant(a0.clone());
            t.cosine_similarity(a, b)
        }));
    }
    let kmat = n(&[4, 3]);
    {
        let k = kmat.clone();
        probes.push(
            Probe::new("pairwise_abs_diff[q]", n(&[3, 3]), move |t, q| {
                let k = t.constant(k.clone());
                let y = t.pairwise_abs_diff(q, k)?;
                project(t, y, 33)
            })
            .with_opts(GradCheckOptions::default()),
        );
        let q = n(&[3, 3]);
        probes.push(Probe::new("pairwise_abs_diff[k]", kmat, move |t, k| {
            let q = t.constant(q.clone());
            let y = t.pairwise_abs_diff(q, k)?;
            project(t, y, 34)
        }));
    }
    let bias = n(&[4]);
    {
        let b = bias.clone();
        probes.push(Probe::new("bias_add[input]", n(&[3, 4]), move |t, x| {
            let b = t.constant(b.clone());
            let y = t.bias_add(x, b)?;
            let y2 = t.mul(y, y)?;
            project(t, y2, 35)
        }));
        let x = n(&[3, 4]);
        probes.push(Probe::new("bias_add[bias]", bias, move |t, b| {
            let xc = t.constant(x.clone());
            let y = t.bias_add(xc, b)?;
            let y2 = t.mul(y, y)?;
            project(t, y2, 36)
        }));
    }
    let scales = n(&[3, 1]);
    {
        let s = scales.clone();
        probes.push(Probe::new("row_scale[input]", n(&[3, 4]), move |t, x| {
            let s = t.constant(s.clone());
            let y = t.row_scale(x, s)?;
            project(t, y, 37)
        }));
        let x = n(&[3, 4]);
        probes.push(Probe::new("row_scale[scale]", scales, move |t, s| {
            let xc = t.constant(x.clone());
            let y = t.row_scale(xc, s)?;
            project(t, y, 38)
        }));
    }
    probes
}

/// A square primitive whose registered backward rule is deliberately wrong
/// (3x instead of 2x); the suite must flag it.
pub fn faulty_probe() -> Probe {
    Probe::new("faulty_square", Tensor::from_f64(&[3], &[0.5, -1.25, 2.0]).unwrap(), |t, x| {
        let value = t.value(x).map(|v| v * v);
        let backward: crate::tape::CustomBackward<f64> = Rc::new(|inputs, g| {
            let x = inputs[0];
            let d = x.data().iter().zip(g.data()).map(|(&x, &g)| 3.0 * x * g).collect();
            vec![Tensor::new(x.shape(), d).unwrap()]
        });
        let y = t.custom(&[x], value, backward)?;
        t.sum(y)
    })
}
