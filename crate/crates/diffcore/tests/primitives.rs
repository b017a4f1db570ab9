use diffcore::{conv_out_len, Conv2dSpec, DiffError, Tape, Tensor};

fn t(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::from_rows(rows)
}

fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k) = a.dims2().unwrap();
    let (_, n) = b.dims2().unwrap();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.at(&[i, p]) * b.at(&[p, j]);
            }
        }
    }
    out
}

/// Direct sliding-window cross-correlation, single group.
fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = 0.0;
                for c in 0..ci {
                    for a in 0..kh {
                        for b in 0..kw {
                            let iy = (y * stride + a) as i64 - pad as i64;
                            let ix = (xx * stride + b) as i64 - pad as i64;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                s += x.at(&[c, iy as usize, ix as usize]) * w.at(&[o, c, a, b]);
                            }
                        }
                    }
                }
                out.data_mut()[(o * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

#[test]
fn matmul_identity_and_known_product() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let i = tape.constant(t(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b_t = t(&[&[5.0, 6.0], &[7.0, 8.0]]);
    let b = tape.constant(b_t.clone());
    let ai = tape.matmul(a, i).unwrap();
    assert_eq!(tape.value(ai).data(), &[1.0, 2.0, 3.0, 4.0]);
    let ab = tape.matmul(a, b).unwrap();
    let oracle = naive_matmul(tape.value(a), &b_t);
    assert_eq!(oracle, vec![19.0, 22.0, 43.0, 50.0]);
    assert_eq!(tape.value(ab).data(), &oracle[..]);
}

#[test]
fn matmul_shape_error_reports_both_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(DiffError::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn matmul_grad_with_ones_is_row_sums() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(t(&[&[0.3, -1.0, 2.0], &[1.5, 0.0, -0.7]]));
    let b = tape.constant(Tensor::ones(&[3, 4]));
    let c = tape.matmul(a, b).unwrap();
    let s = tape.sum(c).unwrap();
    let g = tape.backward(s).unwrap();
    // d sum(AB)/dA_ij = sum_n B_jn = 4
    assert!(g.get(a).unwrap().data().iter().all(|&v| (v - 4.0).abs() < 1e-12));
}

#[test]
fn conv2d_center_of_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(&[1, 3, 3]));
    let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
    let y = tape.conv2d(x, w, None, Conv2dSpec::new(1, 1, 1)).unwrap();
    let oracle = naive_conv2d(tape.value(x), tape.value(w), 1, 1);
    assert_eq!(oracle.at(&[0, 1, 1]), 9.0);
    assert_eq!(tape.value(y), &oracle);
}

#[test]
fn conv2d_matches_sliding_window_oracle() {
    let x = Tensor::<f64>::from_fn(&[2, 7, 6], |i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
    let w = Tensor::<f64>::from_fn(&[3, 2, 3, 3], |i| ((i * 13 % 7) as f64 - 3.0) / 4.0);
    for (stride, pad) in [(1, 1), (2, 1), (2, 0), (1, 0)] {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let y = tape.conv2d(xv, wv, None, Conv2dSpec::new(stride, pad, 1)).unwrap();
        let oracle = naive_conv2d(&x, &w, stride, pad);
        assert!(tape.value(y).max_abs_diff(&oracle) < 1e-12, "stride {stride} pad {pad}");
    }
}

#[test]
fn conv2d_stride2_halves_and_identity_kernel() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_fn(&[2, 16, 16], |i| i as f64));
    let w = tape.constant(Tensor::ones(&[4, 2, 3, 3]));
    let y = tape.conv2d(x, w, None, Conv2dSpec::new(2, 1, 1)).unwrap();
    assert_eq!(tape.shape(y), &[4, 8, 8]);

    let eye = tape.constant(Tensor::from_fn(&[2, 2, 1, 1], |i| if i == 0 || i == 3 { 1.0 } else { 0.0 }));
    let same = tape.conv2d(x, eye, None, Conv2dSpec::new(1, 0, 1)).unwrap();
    assert_eq!(tape.value(same).data(), tape.value(x).data());
}

#[test]
fn conv2d_depthwise_and_group_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_fn(&[3, 4, 4], |i| i as f64));
    // depthwise 1x1 with per-channel scale c+1
    let w = tape.constant(Tensor::from_fn(&[3, 1, 1, 1], |i| (i + 1) as f64));
    let y = tape.conv2d(x, w, None, Conv2dSpec::new(1, 0, 3)).unwrap();
    for c in 0..3 {
        assert_eq!(tape.value(y).at(&[c, 2, 1]), tape.value(x).at(&[c, 2, 1]) * (c + 1) as f64);
    }
    let bad = tape.constant(Tensor::ones(&[2, 1, 3, 3]));
    assert!(matches!(
        tape.conv2d(x, bad, None, Conv2dSpec::new(1, 1, 2)),
        Err(DiffError::Config { .. })
    ));
    let even = tape.constant(Tensor::ones(&[1, 3, 2, 2]));
    assert!(tape.conv2d(x, even, None, Conv2dSpec::new(1, 0, 1)).is_err());
}

#[test]
fn conv1d_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[&[1.0, 2.0, 3.0]]));
    let k = tape.constant(Tensor::from_f64(&[1, 1, 3], &[1.0, 0.0, -1.0]).unwrap());
    let y = tape.conv1d(x, k, None, 1, 0, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[-2.0]);

    let one = tape.constant(Tensor::from_f64(&[1, 1, 1], &[1.0]).unwrap());
    let same = tape.conv1d(x, one, None, 1, 0, 1).unwrap();
    assert_eq!(tape.value(same).data(), tape.value(x).data());

    let long = tape.constant(Tensor::from_fn(&[2, 37], |i| i as f64));
    let k5 = tape.constant(Tensor::ones(&[3, 2, 5]));
    let y5 = tape.conv1d(long, k5, None, 1, 2, 1).unwrap();
    assert_eq!(tape.shape(y5), &[3, 37]);
}

#[test]
fn conv_output_extent_formula() {
    for len in 1..40 {
        for k in [1usize, 3, 5] {
            for s in 1..4 {
                for p in 0..3 {
                    if len + 2 * p >= k {
                        assert_eq!(conv_out_len(len, k, s, p), Some((len + 2 * p - k) / s + 1));
                    }
                }
            }
        }
    }
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[&[0.0, 0.0]]));
    let sa = tape.softmax_rows(a).unwrap();
    assert_eq!(tape.value(sa).data(), &[0.5, 0.5]);
    let b = tape.constant(t(&[&[2f64.ln(), 0.0]]));
    let sb = tape.softmax_rows(b).unwrap();
    assert!((tape.value(sb).data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((tape.value(sb).data()[1] - 1.0 / 3.0).abs() < 1e-15);

    let x = t(&[&[0.3, -1.2, 4.0], &[2.0, 2.0, -7.0]]);
    let xv = tape.constant(x.clone());
    let shifted = tape.constant(x.map(|v| v + 123.25));
    let s1 = tape.softmax_rows(xv).unwrap();
    let s2 = tape.softmax_rows(shifted).unwrap();
    assert!(tape.value(s1).max_abs_diff(tape.value(s2)) < 1e-12);
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let g = tape.constant(Tensor::ones(&[3]));
    let b = tape.constant(Tensor::zeros(&[3]));
    let c = tape.constant(t(&[&[5.0, 5.0, 5.0]]));
    let yc = tape.layer_norm(c, g, b, 1e-5).unwrap();
    assert!(tape.value(yc).data().iter().all(|&v| v == 0.0));
    let x = tape.constant(t(&[&[1.0, 2.0, 3.0]]));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    let expect = [-1.2247, 0.0, 1.2247];
    for (v, e) in tape.value(y).data().iter().zip(expect) {
        assert!((v - e).abs() < 1e-4, "{v} vs {e}");
    }
    let bad = tape.constant(Tensor::ones(&[4]));
    assert!(matches!(tape.layer_norm(x, bad, b, 1e-5), Err(DiffError::Shape { .. })));
}

#[test]
fn layer_norm_affine_statistics() {
    // Statistical oracle: after normalization the affine map sets mean=beta and std=gamma.
    let d = 512;
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::from_fn(&[1, d], |i| ((i * 7919 % 1000) as f64).sin() * 3.0 + 10.0));
    let g = tape.constant(Tensor::full(&[d], 2.5));
    let b = tape.constant(Tensor::full(&[d], -0.75));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    let v = tape.value(y).data();
    let mean = v.iter().sum::<f64>() / d as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64).sqrt();
    assert!((mean + 0.75).abs() < 1e-9);
    assert!((std - 2.5).abs() < 1e-4);
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::scalar(0.0));
    let s = tape.sigmoid(z).unwrap();
    assert_eq!(tape.value(s).item(), 0.5);

    let x = tape.constant(t(&[&[1.0, 2.0, 3.0, 4.0]]));
    let p = tape.adaptive_avg_pool1d(x, 2).unwrap();
    assert_eq!(tape.value(p).data(), &[1.5, 3.5]);
    let m = tape.adaptive_max_pool1d(x, 2).unwrap();
    assert_eq!(tape.value(m).data(), &[2.0, 4.0]);

    let v = tape.constant(t(&[&[0.2, -3.0, 1.7]]));
    let c = tape.cosine_similarity(v, v).unwrap();
    assert!((tape.value(c).item() - 1.0).abs() < 1e-15);

    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.add(a, b), Err(DiffError::Shape { .. })));
    let two = tape.constant(Tensor::scalar(2.0));
    let ok = tape.add(a, two).unwrap();
    assert!(tape.value(ok).data().iter().all(|&v| v == 2.0));
}

#[test]
fn structural_ops() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = tape.constant(t(&[&[5.0], &[6.0]]));
    let cat = tape.concat(&[a, b], 1).unwrap();
    assert_eq!(tape.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    let rows = tape.concat(&[a, a], 0).unwrap();
    assert_eq!(tape.shape(rows), &[4, 2]);
    let sl = tape.slice(cat, 1, 1, 2).unwrap();
    assert_eq!(tape.value(sl).data(), &[2.0, 5.0, 4.0, 6.0]);
    let tr = tape.transpose(cat).unwrap();
    assert_eq!(tape.value(tr).data(), &[1.0, 3.0, 2.0, 4.0, 5.0, 6.0]);
    let mr = tape.mean_rows(a).unwrap();
    assert_eq!(tape.value(mr).data(), &[2.0, 3.0]);
    let mx = tape.max_last(a).unwrap();
    assert_eq!(tape.value(mx).data(), &[2.0, 4.0]);
    let q = tape.constant(t(&[&[1.0], &[3.0]]));
    let k = tape.constant(t(&[&[2.0], &[5.0]]));
    let d = tape.pairwise_abs_diff(q, k).unwrap();
    assert_eq!(tape.shape(d), &[1, 2, 2]);
    assert_eq!(tape.value(d).data(), &[1.0, 4.0, 1.0, 2.0]);
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 6.0);

    let mut tape = Tape::<f64>::new();
    let x = tape.param(t(&[&[0.1, -2.0, 0.7, 3.0]]));
    let s = tape.softmax_rows(x).unwrap();
    let total = tape.sum(s).unwrap();
    let g = tape.backward(total).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    let y = tape.relu(x).unwrap();
    assert!(matches!(tape.backward(y), Err(DiffError::Usage(_))));
}

#[test]
fn abs_subgradient_at_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(t(&[&[0.0, -2.0, 3.0]]));
    let a = tape.abs(x).unwrap();
    let s = tape.sum(a).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, -1.0, 1.0]);
}

#[test]
fn checked_tape_rejects_non_finite() {
    let mut tape = Tape::<f64>::checked();
    let x = tape.constant(Tensor::scalar(1e300));
    assert!(matches!(tape.mul(x, x), Err(DiffError::NonFinite { op: "mul" })));
    let mut loose = Tape::<f64>::new();
    let x = loose.constant(Tensor::scalar(1e300));
    assert!(loose.mul(x, x).is_ok());
}

#[test]
fn fan_out_sums_path_gradients() {
    // f(x) = sum(x ⊙ x) + sum(3x) reuses x three times: grad = 2x + 3
    let x0 = t(&[&[0.5, -1.0, 2.0]]);
    let mut tape = Tape::<f64>::new();
    let x = tape.param(x0.clone());
    let sq = tape.mul(x, x).unwrap();
    let s1 = tape.sum(sq).unwrap();
    let tri = tape.scale(x, 3.0).unwrap();
    let s2 = tape.sum(tri).unwrap();
    let f = tape.add(s1, s2).unwrap();
    let g = tape.backward(f).unwrap();
    let expect: Vec<f64> = x0.data().iter().map(|v| 2.0 * v + 3.0).collect();
    assert_eq!(g.get(x).unwrap().data(), &expect[..]);

    // duplicating the input as two separate leaves gives the same total
    let mut tape = Tape::<f64>::new();
    let xa = tape.param(x0.clone());
    let xb = tape.param(x0.clone());
    let xc = tape.param(x0.clone());
    let sq = tape.mul(xa, xb).unwrap();
    let s1 = tape.sum(sq).unwrap();
    let tri = tape.scale(xc, 3.0).unwrap();
    let s2 = tape.sum(tri).unwrap();
    let f = tape.add(s1, s2).unwrap();
    let g = tape.backward(f).unwrap();
    for (i, want) in expect.iter().enumerate() {
        let total = g.get(xa).unwrap().data()[i] + g.get(xb).unwrap().data()[i] + g.get(xc).unwrap().data()[i];
        assert!((total - want).abs() < 1e-15);
    }
}
