use diffcore::random::{normal, rng};
use diffcore::suite::GRAD_TOL;
use diffcore::{Tape, Tensor};
use hsda::gradcheck::{block_checks, model_checks, stem_checks};
use hsda::model::layers::{AttentionHead, HybridBlock, Rfm1d, Rfm2d};
use hsda::model::{Builder, ForwardOptions, GateMode, ModelConfig, Network};
use proptest::prelude::*;

fn row_sums(t: &Tensor<f64>) -> Vec<f64> {
    let (_, c) = t.dims2().unwrap();
    t.data().chunks(c).map(|r| r.iter().sum()).collect()
}

fn head_maps(seed: u64, n: usize, w: usize, mode: GateMode) -> [Tensor<f64>; 4] {
    let mut b = Builder::new(seed, true);
    let head = AttentionHead::new(&mut b, "h", w, w / 2, n);
    let store = b.finish().cast::<f64>();
    let mut t = Tape::new();
    let p = store.bind_constant(&mut t);
    let x = t.constant(normal(&mut rng(seed, 77), &[n, w], 1.0));
    let (_, tr) = head.forward(&mut t, &p, x, mode).unwrap();
    [tr.saw, tr.daw, tr.mix, tr.gate].map(|v| t.value(v).clone())
}

#[test]
fn toy_forward_shapes_and_zero_input() {
    let cfg = ModelConfig::toy();
    let (net, store) = Network::build(&cfg, 42, false).unwrap();
    let mut t = Tape::<f32>::new();
    let p = store.bind_constant(&mut t);
    let img = t.constant(Tensor::zeros(&[3, cfg.canvas, cfg.canvas]));
    let sig = t.constant(Tensor::zeros(&[cfg.n_channels, 40]));
    let opts = ForwardOptions { trace: true, ..Default::default() };
    let out = net.forward(&mut t, &p, img, sig, opts).unwrap();
    assert_eq!(t.shape(out.logits), [1, cfg.n_classes]);
    assert_eq!(t.shape(out.feature), [1, cfg.d]);
    assert!(t.value(out.logits).all_finite());
    assert!(t.value(out.feature).all_finite());
    assert_eq!(out.tokens.len(), cfg.stages);
    for (l, &tok) in out.tokens.iter().enumerate() {
        let w = if l + 1 < cfg.stages { cfg.stage_width(l + 1) } else { cfg.stage_width(l) };
        assert_eq!(t.shape(tok), [cfg.n_tokens(), w]);
    }
    assert_eq!(out.heads.len(), cfg.stages * cfg.heads);
}

#[test]
fn widths_grow_with_multiscale_only() {
    let cfg = ModelConfig::toy();
    assert_eq!(cfg.n_tokens(), 1 + cfg.n_channels);
    assert_eq!(cfg.stage_width(1), cfg.d + cfg.d_prime);
    let flat = ModelConfig { multiscale: false, ..cfg.clone() };
    assert_eq!(flat.final_width(), flat.d);
    assert_eq!(cfg.final_width(), cfg.d + (cfg.stages - 1) * cfg.d_prime);
}

#[test]
fn wrong_input_shapes_rejected() {
    let cfg = ModelConfig::toy();
    let (net, store) = Network::build(&cfg, 1, false).unwrap();
    let mut t = Tape::<f32>::new();
    let p = store.bind_constant(&mut t);
    let img = t.constant(Tensor::zeros(&[3, 8, 8]));
    let sig = t.constant(Tensor::zeros(&[cfg.n_channels, 40]));
    assert!(net.forward(&mut t, &p, img, sig, ForwardOptions::default()).is_err());
    let img = t.constant(Tensor::zeros(&[3, cfg.canvas, cfg.canvas]));
    let sig = t.constant(Tensor::zeros(&[4, 40]));
    assert!(net.forward(&mut t, &p, img, sig, ForwardOptions::default()).is_err());
}

#[test]
fn build_is_seeded() {
    let cfg = ModelConfig::toy();
    let (_, a) = Network::build(&cfg, 5, false).unwrap();
    let (_, b) = Network::build(&cfg, 5, false).unwrap();
    let (_, c) = Network::build(&cfg, 6, false).unwrap();
    assert_eq!(a.values(), b.values());
    assert_ne!(a.values(), c.values());
}

#[test]
fn fixed_gate_selects_one_map() {
    let [saw, _, mix, gate] = head_maps(3, 10, 8, GateMode::Fixed(1.0));
    assert!(mix.max_abs_diff(&saw) < 1e-12);
    assert!(gate.data().iter().all(|&g| g == 1.0));
    let [_, daw, mix, _] = head_maps(3, 10, 8, GateMode::Fixed(0.0));
    assert!(mix.max_abs_diff(&daw) < 1e-12);
}

#[test]
fn mix_is_convex_combination() {
    let [saw, daw, mix, gate] = head_maps(9, 6, 8, GateMode::Learned);
    let n = 6;
    for i in 0..n {
        let g = gate.data()[i];
        for j in 0..n {
            let k = i * n + j;
            let expect = g * saw.data()[k] + (1.0 - g) * daw.data()[k];
            assert!((mix.data()[k] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn freshly_built_block_is_identity() {
    let mut b = Builder::new(4, false);
    let block = HybridBlock::new(&mut b, "b", 8, 2, 5, 4, 1e-5);
    let store = b.finish().cast::<f64>();
    let mut t = Tape::new();
    let p = store.bind_constant(&mut t);
    let x0: Tensor<f64> = normal(&mut rng(4, 9), &[5, 8], 1.0);
    let x = t.constant(x0.clone());
    let y = block.forward(&mut t, &p, x, GateMode::Learned, &mut Vec::new()).unwrap();
    assert!(t.value(y).max_abs_diff(&x0) < 1e-12);
}

/// With a zero positional bias the similarity map follows a permutation of
/// the tokens. The difference map does not, since its convolutions run along
/// the key axis.
#[test]
fn token_order_matters_only_through_difference_map() {
    let (n, w) = (6, 8);
    let mut b = Builder::new(12, true);
    let head = AttentionHead::new(&mut b, "h", w, w / 2, n);
    let mut store = b.finish().cast::<f64>();
    let bias = store.id("h.pos_bias").unwrap();
    *store.get_mut(bias) = Tensor::zeros(&[n, n]);
    let x0: Tensor<f64> = normal(&mut rng(12, 1), &[n, w], 1.0);
    let perm = [3, 0, 5, 1, 4, 2];
    let xp = Tensor::from_fn(&[n, w], |k| x0.data()[perm[k / w] * w + k % w]);
    let maps = |x: &Tensor<f64>| {
        let mut t = Tape::new();
        let p = store.bind_constant(&mut t);
        let xv = t.constant(x.clone());
        let (_, tr) = head.forward(&mut t, &p, xv, GateMode::Learned).unwrap();
        (t.value(tr.saw).clone(), t.value(tr.daw).clone())
    };
    let (s0, d0) = maps(&x0);
    let (s1, d1) = maps(&xp);
    let mut daw_err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = s1.data()[i * n + j];
            let b = s0.data()[perm[i] * n + perm[j]];
            assert!((a - b).abs() < 1e-12);
            daw_err = daw_err.max((d1.data()[i * n + j] - d0.data()[perm[i] * n + perm[j]]).abs());
        }
    }
    assert!(daw_err > 1e-6);
}

#[test]
fn multiscale_steps_halve_resolution() {
    let mut b = Builder::new(2, true);
    let r2 = Rfm2d::new(&mut b, "a", 8, 2, 8);
    let r1 = Rfm1d::new(&mut b, "b", 9, 8, 8);
    let store = b.finish().cast::<f64>();
    let mut t = Tape::new();
    let p = store.bind_constant(&mut t);
    let m2 = t.constant(normal(&mut rng(2, 3), &[8, 4, 4], 1.0));
    let m1_val: Tensor<f64> = normal(&mut rng(2, 4), &[9, 16], 1.0);
    let m1 = t.constant(m1_val.clone());
    let (next2, z2) = r2.forward(&mut t, &p, m2).unwrap();
    let (next1, z1) = r1.forward(&mut t, &p, m1).unwrap();
    assert_eq!(t.shape(next2), [8, 2, 2]);
    assert_eq!(t.shape(z2), [1, 8]);
    assert_eq!(t.shape(next1), [9, 8]);
    assert_eq!(t.shape(z1), [9, 8]);

    let pooled = t.adaptive_max_pool1d(m1, 8).unwrap();
    let pv = t.value(pooled);
    for c in 0..9 {
        for j in 0..8 {
            let win = &m1_val.data()[c * 16 + 2 * j..c * 16 + 2 * j + 2];
            let mean = win.iter().sum::<f64>() / 2.0;
            let max = win.iter().cloned().fold(f64::MIN, f64::max);
            assert!(pv.at(&[c, j]) >= mean);
            assert_eq!(pv.at(&[c, j]), max);
        }
    }
}

#[test]
fn stem_gradients_match_finite_differences() {
    for c in stem_checks(7, 16).unwrap() {
        assert!(c.report.passes(GRAD_TOL), "{}: {}", c.name, c.report.max_rel_err);
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    for c in block_checks(7, 4, 8, 16).unwrap() {
        assert!(c.report.passes(GRAD_TOL), "{}: {}", c.name, c.report.max_rel_err);
    }
}

#[test]
fn toy_model_gradients_match_finite_differences() {
    let checks = model_checks(7, 6).unwrap();
    assert!(checks.iter().any(|c| c.name.contains("diff_mlp")));
    for c in checks {
        assert!(c.report.passes(GRAD_TOL), "{}: {}", c.name, c.report.max_rel_err);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), n in prop::sample::select(vec![4usize, 10])) {
        let [saw, daw, mix, gate] = head_maps(seed, n, 8, GateMode::Learned);
        for m in [&saw, &daw, &mix] {
            prop_assert!(m.data().iter().all(|&v| v >= 0.0));
            for s in row_sums(m) {
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
        prop_assert_eq!(gate.shape(), &[n, 1]);
        prop_assert!(gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
    }
}
