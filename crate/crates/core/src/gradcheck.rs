//! Finite-difference checks of the composed model, one parameter tensor at a
//! time, with every parameter drawn at unit scale.

use diffcore::{grad_check, GradCheckOptions};
use diffcore::random::{normal, rng, uniform};
use diffcore::suite::{project, NamedCheck};
use diffcore::{DiffError, Tape, Tensor, Var};

use crate::error::Result;
use crate::loss::{contrastive, cross_entropy, total_loss, Templates, DEFAULT_LAMBDA};
use crate::model::layers::{GateMode, HybridBlock, Stem};
use crate::model::{Builder, ForwardOptions, ModelConfig, Network, ParamStore};

/// Signal length used by the full-model check.
pub const TOY_SIGNAL_LEN: usize = 32;

fn lift(e: crate::HsdaError) -> DiffError {
    DiffError::Usage(e.to_string())
}

/// Checks `loss` with respect to each tensor of `store`, sampling at most
/// `max_coords` coordinates per tensor.
pub fn check_params<F>(store: &ParamStore<f64>, max_coords: usize, loss: F) -> Result<Vec<NamedCheck>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let opts = GradCheckOptions {
        max_coords: Some(max_coords),
        ..GradCheckOptions::default()
    };
    let mut out = Vec::with_capacity(store.len());
    for (i, name) in store.names().iter().enumerate() {
        let f = |t: &mut Tape<f64>, x: Var| -> diffcore::Result<Var> {
            let p: Vec<Var> = store
                .values()
                .iter()
                .enumerate()
                .map(|(j, v)| if j == i { x } else { t.constant(v.clone()) })
                .collect();
            loss(t, &p).map_err(lift)
        };
        let report = grad_check(f, &store.values()[i], &opts)?;
        out.push(NamedCheck {
            name: name.clone(),
            report,
        });
    }
    Ok(out)
}

/// Image stem on a 16×16 canvas.
pub fn stem_checks(seed: u64, max_coords: usize) -> Result<Vec<NamedCheck>> {
    let mut b = Builder::new(seed, true);
    let stem = Stem::new(&mut b, [4, 8], 8, 2, 16, 1e-5);
    let store = b.finish().cast::<f64>();
    let img: Tensor<f64> = uniform(&mut rng(seed, 0xc1), &[3, 16, 16], 0.0, 1.0);
    check_params(&store, max_coords, |t, p| {
        let x = t.constant(img.clone());
        let (tok, map) = stem.forward(t, p, x)?;
        let a = project(t, tok, 1)?;
        let m = project(t, map, 2)?;
        Ok(t.add(a, m)?)
    })
}

/// One hybrid attention block with `n_tokens` tokens of width `w`.
pub fn block_checks(seed: u64, n_tokens: usize, w: usize, max_coords: usize) -> Result<Vec<NamedCheck>> {
    let mut b = Builder::new(seed, true);
    let block = HybridBlock::new(&mut b, "block", w, 2, n_tokens, 4, 1e-5);
    let store = b.finish().cast::<f64>();
    let x0: Tensor<f64> = normal(&mut rng(seed, 0xc2), &[n_tokens, w], 1.0);
    check_params(&store, max_coords, |t, p| {
        let x = t.constant(x0.clone());
        let y = block.forward(t, p, x, GateMode::Learned, &mut Vec::new())?;
        Ok(project(t, y, 3)?)
    })
}

/// The toy network on the full training loss for a two-sample batch.
pub fn model_checks(seed: u64, max_coords: usize) -> Result<Vec<NamedCheck>> {
    let cfg = ModelConfig::toy();
    let (net, store) = Network::build(&cfg, seed, true)?;
    let store = store.cast::<f64>();
    let mut r = rng(seed, 0xc3);
    let s = cfg.canvas;
    let batch: Vec<(Tensor<f64>, Tensor<f64>)> = (0..2)
        .map(|_| {
            (
                uniform(&mut r, &[3, s, s], 0.0, 1.0),
                normal(&mut r, &[cfg.n_channels, TOY_SIGNAL_LEN], 1.0),
            )
        })
        .collect();
    let labels = [0usize, 1];
    let tmpl = Templates::init(cfg.d, seed);
    check_params(&store, max_coords, |t, p| {
        let mut logits = Vec::new();
        let mut feats = Vec::new();
        for (img, sig) in &batch {
            let (i, g) = (t.constant(img.clone()), t.constant(sig.clone()));
            let out = net.forward(t, p, i, g, ForwardOptions::default())?;
            logits.push(out.logits);
            feats.push(out.feature);
        }
        let all = t.concat(&logits, 0)?;
        let probs = t.softmax_rows(all)?;
        let ce = cross_entropy(t, probs, &labels)?;
        let ctr = contrastive(t, &feats, &labels, &tmpl)?;
        total_loss(t, ce, Some(ctr), DEFAULT_LAMBDA)
    })
}
