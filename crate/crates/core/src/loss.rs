//! Cross-entropy plus a cosine loss against class templates.

use diffcore::random::{normal, rng};
use diffcore::{Real, Tape, Tensor, Var};

use crate::error::{HsdaError, Result};

pub const LOG_FLOOR: f64 = 1e-12;
pub const DEFAULT_LAMBDA: f64 = 0.8;
pub const DEFAULT_ALPHA: f64 = 0.9;

/// Positive (AD) and negative (HC) prototype vectors, updated by an
/// exponential moving average of batch feature means.
#[derive(Clone, Debug, PartialEq)]
pub struct Templates {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub alpha: f64,
}

impl Templates {
    /// Standard normal draws from the template stream of `seed`.
    pub fn init(d: usize, seed: u64) -> Self {
        let mut r = rng(seed, 1);
        let t: Tensor<f64> = normal(&mut r, &[2, d], 1.0);
        let v = t.into_data();
        Templates {
            positive: v[..d].to_vec(),
            negative: v[d..].to_vec(),
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn dim(&self) -> usize {
        self.positive.len()
    }

    pub fn for_label(&self, label: usize) -> &[f64] {
        if label == 1 {
            &self.positive
        } else {
            &self.negative
        }
    }

    /// `T ← α·T + (1−α)·mean(f)` per class; classes absent from the batch
    /// keep their template.
    pub fn update(&mut self, features: &[Vec<f64>], labels: &[usize]) {
        let d = self.dim();
        for (class, tmpl) in [(1usize, &mut self.positive), (0, &mut self.negative)] {
            let members: Vec<&Vec<f64>> = features
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == class)
                .map(|(f, _)| f)
                .collect();
            if members.is_empty() {
                continue;
            }
            let k = members.len() as f64;
            for j in 0..d {
                let mean = members.iter().map(|f| f[j]).sum::<f64>() / k;
                tmpl[j] = self.alpha * tmpl[j] + (1.0 - self.alpha) * mean;
            }
        }
    }
}

fn check_labels(labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(HsdaError::Usage(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l >= classes) {
        return Err(HsdaError::Usage(format!("label {l} out of range")));
    }
    Ok(())
}

/// Mean negative log-probability of the true class; `probs` is B×C.
pub fn cross_entropy<T: Real>(t: &mut Tape<T>, probs: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = t
        .value(probs)
        .dims2()
        .ok_or_else(|| HsdaError::Usage("probabilities must be a matrix".into()))?;
    check_labels(labels, b, c)?;
    let onehot = Tensor::from_fn(&[b, c], |i| if labels[i / c] == i % c { T::one() } else { T::zero() });
    let mask = t.constant(onehot);
    let picked = t.mul(probs, mask)?;
    let p_true = t.sum_last(picked)?;
    let logp = t.ln_clamped(p_true, LOG_FLOOR)?;
    let m = t.mean(logp)?;
    Ok(t.neg(m)?)
}

/// Mean of `1 − cos(f_i, T_{y_i})` over the batch. Templates enter as
/// constants and receive no gradient.
pub fn contrastive<T: Real>(t: &mut Tape<T>, features: &[Var], labels: &[usize], tmpl: &Templates) -> Result<Var> {
    check_labels(labels, features.len(), 2)?;
    if features.is_empty() {
        return Err(HsdaError::Usage("empty batch".into()));
    }
    let pos = t.constant(Tensor::new(&[1, tmpl.dim()], tmpl.positive.iter().map(|&v| T::of(v)).collect())?);
    let neg = t.constant(Tensor::new(&[1, tmpl.dim()], tmpl.negative.iter().map(|&v| T::of(v)).collect())?);
    let mut sims = Vec::with_capacity(features.len());
    for (&f, &y) in features.iter().zip(labels) {
        let c = t.cosine_similarity(f, if y == 1 { pos } else { neg })?;
        sims.push(t.reshape(c, &[1, 1])?);
    }
    let all = t.concat(&sims, 0)?;
    let m = t.mean(all)?;
    Ok(t.affine(m, -1.0, 1.0)?)
}

pub fn total_loss<T: Real>(t: &mut Tape<T>, ce: Var, ctr: Option<Var>, lambda: f64) -> Result<Var> {
    match ctr {
        None => Ok(ce),
        Some(c) => {
            let s = t.scale(c, lambda)?;
            Ok(t.add(ce, s)?)
        }
    }
}

/// Cosine similarity in plain arithmetic with the same 1e-8 norm floor as
/// the tape primitive.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}
