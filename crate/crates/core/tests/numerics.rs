mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{dot, grad_case, naive_conv1d, randn, rng, GradCase};
use slcnn::numerics::gradcheck::{flatten_grads, flatten_params, load_params};
use slcnn::numerics::pool::{avgpool1d_backward, maxpool1d_with_indices};
use slcnn::numerics::{
    avgpool1d, conv1d, conv1d_backward, grad_check, softmax, sgd_step, Activation, ActivationKind, BatchNorm1d,
    Dense, Dropout, FnObjective, GradCheckConfig, Mode, Padding,
};
use slcnn::{Parameterized, Tensor};

#[test]
fn every_case_passes_on_extra_seeds() {
    for case in GradCase::ALL {
        for seed in 100..110 {
            let r = grad_case(case, seed);
            assert!(r.passed(), "{case:?} seed {seed}: {}", r.max_rel_error);
        }
    }
}

#[test]
fn avgpool_and_relu_gradients() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let pool = r.random_range(2..=4);
        let shape = [2, 2, pool * 3];
        let x = randn(shape, &mut r);
        let w = randn([2, 2, 3], &mut r);
        let mut obj = FnObjective::new(x.into_vec(), |p: &[f64], _| {
            let x = Tensor::from_vec(shape, p.to_vec())?;
            let mut act = Activation::new(ActivationKind::Relu);
            let h = act.forward(&x);
            let y = avgpool1d(&h, pool)?;
            let g = act.backward(&avgpool1d_backward(&w, pool)?)?;
            Ok((dot(y.as_slice(), w.as_slice()), Some(g.into_vec())))
        });
        let rep = grad_check(&mut obj, &GradCheckConfig { seed, ..Default::default() }).unwrap();
        assert!(rep.passed(), "seed {seed}: {}", rep.max_rel_error);
    }
}

/// Backward results against the triple loop: each gradient entry is the
/// derivative of `sum(grad_out * conv(x))`, which is linear in x and w.
#[test]
fn conv_backward_matches_linear_oracle() {
    let mut r = rng(5);
    for _ in 0..50 {
        let padding = if r.random_bool(0.5) { Padding::Valid } else { Padding::Same };
        let (cin, cout, k, stride) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=3));
        let t = r.random_range(k..k + 10);
        let x = randn([2, cin, t], &mut r);
        let w = randn([cout, cin, k], &mut r);
        let zero_b = Tensor::zeros([1, cout, 1]);
        let y = conv1d(&x, &w, &zero_b, stride, padding).unwrap();
        let go = randn(y.shape(), &mut r);
        let (gx, gw, gb) = conv1d_backward(&x, &w, &go, stride, padding).unwrap();
        for i in 0..x.len() {
            let mut e = vec![0.0; x.len()];
            e[i] = 1.0;
            let basis = Tensor::from_vec(x.shape(), e).unwrap();
            let want = dot(&naive_conv1d(&basis, &w, &zero_b, stride, padding), go.as_slice());
            assert!((gx.as_slice()[i] - want).abs() < 1e-12);
        }
        for i in 0..w.len() {
            let mut e = vec![0.0; w.len()];
            e[i] = 1.0;
            let basis = Tensor::from_vec(w.shape(), e).unwrap();
            let want = dot(&naive_conv1d(&x, &basis, &zero_b, stride, padding), go.as_slice());
            assert!((gw.as_slice()[i] - want).abs() < 1e-12);
        }
        for o in 0..cout {
            let want: f64 = (0..2).map(|b| go.row(b, o).iter().sum::<f64>()).sum();
            assert!((gb.as_slice()[o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn f32_conv_tracks_f64() {
    let mut r = rng(9);
    let x = randn([2, 3, 50], &mut r);
    let w = randn([4, 3, 3], &mut r);
    let b = randn([1, 4, 1], &mut r);
    let hi = conv1d(&x, &w, &b, 1, Padding::Same).unwrap();
    let lo = conv1d(&x.cast::<f32>(), &w.cast(), &b.cast(), 1, Padding::Same).unwrap();
    for (a, b) in lo.as_slice().iter().zip(hi.as_slice()) {
        assert!((*a as f64 - b).abs() < 1e-5 * b.abs().max(1.0));
    }
}

#[test]
fn sgd_only_touches_params_and_lowers_loss() {
    let mut r = rng(3);
    let mut layer = Dense::<f64>::new(5, 3, &mut r);
    let x = randn([4, 5, 1], &mut r);
    let target = randn([4, 3, 1], &mut r);
    let loss = |l: &Dense<f64>| {
        let y = l.infer(&x).unwrap();
        y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    };
    let before = loss(&layer);
    let x_copy = x.clone();
    let y = layer.forward(&x).unwrap();
    let g = Tensor::from_vec(y.shape(), y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| 2.0 * (a - b)).collect()).unwrap();
    layer.backward(&g).unwrap();
    sgd_step(&mut layer, 1e-3, 0.9, true);
    assert_eq!(x, x_copy);
    assert!(loss(&layer) < before);
}

#[test]
fn zero_lr_is_bitwise_identity() {
    let mut r = rng(4);
    let mut layer = Dense::<f32>::new(4, 2, &mut r);
    let start = flatten_params(&mut layer);
    for _ in 0..5 {
        layer.visit_params(&mut |_, p| p.grad = p.grad.map(|_| 0.7));
        sgd_step(&mut layer, 0.0, 0.9, true);
    }
    let end = flatten_params(&mut layer);
    assert!(start.iter().zip(&end).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn flatten_and_load_are_inverse() {
    let mut r = rng(2);
    let mut layer = Dense::<f64>::new(3, 2, &mut r);
    let v: Vec<f64> = (0..layer.param_count()).map(|i| i as f64).collect();
    load_params(&mut layer, &v);
    assert_eq!(flatten_params(&mut layer), v);
    assert_eq!(flatten_grads(&mut layer), vec![0.0; v.len()]);
}

#[test]
fn dropout_is_identity_at_inference_and_unbiased_in_training() {
    let x = Tensor::<f64>::full([1, 1, 20000], 1.0);
    let mut d = Dropout::new(0.5, 1);
    assert_eq!(d.forward(&x, Mode::Infer), x);
    let y = d.forward(&x, Mode::Train);
    let mean = y.as_slice().iter().sum::<f64>() / y.len() as f64;
    assert!((mean - 1.0).abs() < 0.05, "{mean}");
    assert!(y.as_slice().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn batchnorm_infer_uses_running_stats() {
    let mut bn = BatchNorm1d::<f64>::new(2);
    bn.running_mean = Tensor::from_vec([1, 2, 1], vec![1.0, -1.0]).unwrap();
    bn.running_var = Tensor::from_vec([1, 2, 1], vec![4.0, 1.0]).unwrap();
    let x = Tensor::from_vec([1, 2, 1], vec![3.0, -1.0]).unwrap();
    let y = bn.forward(&x, Mode::Infer).unwrap();
    assert!((y.as_slice()[0] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    assert_eq!(y.as_slice()[1], 0.0);
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in proptest::collection::vec(-50.0f64..50.0, 2..8)) {
        let k = v.len();
        let p = softmax(&Tensor::from_vec([1, k, 1], v).unwrap());
        let s: f64 = p.as_slice().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000, alpha in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x1 = randn([1, 2, 12], &mut r);
        let x2 = randn([1, 2, 12], &mut r);
        let w = randn([2, 2, 3], &mut r);
        let b = Tensor::zeros([1, 2, 1]);
        let mix = Tensor::from_vec([1, 2, 12], x1.as_slice().iter().zip(x2.as_slice()).map(|(a, c)| alpha * a + c).collect()).unwrap();
        let lhs = conv1d(&mix, &w, &b, 2, Padding::Same).unwrap();
        let y1 = conv1d(&x1, &w, &b, 2, Padding::Same).unwrap();
        let y2 = conv1d(&x2, &w, &b, 2, Padding::Same).unwrap();
        for ((l, a), c) in lhs.as_slice().iter().zip(y1.as_slice()).zip(y2.as_slice()) {
            prop_assert!((l - (alpha * a + c)).abs() < 1e-9);
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized(seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = randn([3, 2, 5], &mut r);
        let mut bn = BatchNorm1d::<f64>::new(2);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|b| y.row(b, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / 15.0;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 15.0;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn maxpool_picks_window_maxima(v in proptest::collection::vec(-10.0f64..10.0, 1..6usize).prop_flat_map(|w| {
        let n = w.len();
        (Just(w), 1..=n)
    })) {
        let (vals, pool) = v;
        let t = vals.len() / pool * pool;
        prop_assume!(t > 0);
        let x = Tensor::from_vec([1, 1, t], vals[..t].to_vec()).unwrap();
        let (y, idx) = maxpool1d_with_indices(&x, pool).unwrap();
        for (j, (&m, &i)) in y.as_slice().iter().zip(&idx).enumerate() {
            let win = &vals[j * pool..(j + 1) * pool];
            prop_assert_eq!(m, win.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            prop_assert_eq!(vals[i], m);
        }
    }
}
