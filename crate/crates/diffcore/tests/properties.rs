use diffcore::{conv_out_len, Conv2dSpec, Tape, Tensor};
use proptest::prelude::*;

fn matrix(r: usize, c: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-20.0f64..20.0, r * c).prop_map(move |v| Tensor::new(&[r, c], v).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c))) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let s = tape.softmax_rows(v).unwrap();
        let (_, c) = x.dims2().unwrap();
        for row in tape.value(s).data().chunks(c) {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn conv_extents_follow_formula(h in 1usize..20, w in 1usize..20, k in prop::sample::select(vec![1usize, 3, 5]),
                                   s in 1usize..4, p in 0usize..3) {
        prop_assume!(h + 2 * p >= k && w + 2 * p >= k);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[2, h, w]));
        let wt = tape.constant(Tensor::ones(&[3, 2, k, k]));
        let y = tape.conv2d(x, wt, None, Conv2dSpec::new(s, p, 1)).unwrap();
        prop_assert_eq!(tape.shape(y), &[3, (h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1][..]);
        prop_assert_eq!(conv_out_len(h, k, s, p), Some((h + 2 * p - k) / s + 1));
    }

    #[test]
    fn duplicated_input_gradient_is_sum_of_paths(x in matrix(2, 3), y in matrix(3, 2)) {
        // f(x) = sum((x·y) ⊙ (x·y)); computing the product twice from one leaf
        // must equal the sum of gradients from two separate copies.
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let yv = tape.constant(y.clone());
        let p1 = tape.matmul(xv, yv).unwrap();
        let p2 = tape.matmul(xv, yv).unwrap();
        let m = tape.mul(p1, p2).unwrap();
        let s = tape.sum(m).unwrap();
        let shared = tape.backward(s).unwrap().get(xv).unwrap().clone();

        let mut tape = Tape::new();
        let xa = tape.param(x.clone());
        let xb = tape.param(x);
        let yv = tape.constant(y);
        let p1 = tape.matmul(xa, yv).unwrap();
        let p2 = tape.matmul(xb, yv).unwrap();
        let m = tape.mul(p1, p2).unwrap();
        let s = tape.sum(m).unwrap();
        let g = tape.backward(s).unwrap();
        let (ga, gb) = (g.get(xa).unwrap(), g.get(xb).unwrap());
        for i in 0..shared.len() {
            let total = ga.data()[i] + gb.data()[i];
            prop_assert!((shared.data()[i] - total).abs() <= 1e-9 * total.abs().max(1.0));
        }
    }
}
