//! Oracles and gradient-check objectives shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slcnn::model::{ModelSpec, SampleCnn, Scale, Task};
use slcnn::numerics::gradcheck::{flatten_grads, flatten_params, load_params};
use slcnn::numerics::{
    bce, bce_logit_grad, ce, ce_logit_grad, conv1d, conv1d_backward, dense, dense_backward, grad_check,
    maxpool1d, sigmoid, softmax, BatchNorm1d, FnObjective, GradCheckConfig, GradCheckReport, Mode, Padding,
    Targets,
};
use slcnn::numerics::pool::{maxpool1d_backward, maxpool1d_with_indices};
use slcnn::{Parameterized, Shape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: impl Into<Shape>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Triple-loop cross-correlation over an explicitly zero-padded copy.
pub fn naive_conv1d(x: &Tensor<f64>, w: &Tensor<f64>, bias: &Tensor<f64>, stride: usize, padding: Padding) -> Vec<f64> {
    let (bsz, cin, t) = (x.shape().batch, x.shape().channels, x.shape().time);
    let (cout, k) = (w.shape().batch, w.shape().time);
    let (left, right) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => ((k - 1) / 2, k - 1 - (k - 1) / 2),
    };
    let tp = t + left + right;
    let tout = (tp - k) / stride + 1;
    let mut out = Vec::with_capacity(bsz * cout * tout);
    for b in 0..bsz {
        for o in 0..cout {
            for u in 0..tout {
                let mut acc = bias.as_slice()[o];
                for i in 0..cin {
                    for j in 0..k {
                        let p = u * stride + j;
                        let v = if p < left || p >= left + t { 0.0 } else { x.get(b, i, p - left) };
                        acc += w.get(o, i, j) * v;
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Wins plus half ties over every positive/negative pair.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li {
            p += 1;
        } else {
            n += 1;
        }
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    twice as f64 / (2 * p * n) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradCase {
    ConvValid,
    ConvSame,
    MaxPool,
    BatchNorm,
    Dense,
    SigmoidBce,
    SoftmaxCe,
    Model22Multi,
    Model22Single,
}

impl GradCase {
    pub const ALL: [GradCase; 9] = [
        GradCase::ConvValid,
        GradCase::ConvSame,
        GradCase::MaxPool,
        GradCase::BatchNorm,
        GradCase::Dense,
        GradCase::SigmoidBce,
        GradCase::SoftmaxCe,
        GradCase::Model22Multi,
        GradCase::Model22Single,
    ];
}

fn split3(p: &[f64], a: usize, b: usize) -> (&[f64], &[f64], &[f64]) {
    (&p[..a], &p[a..a + b], &p[a + b..])
}

fn run(point: Vec<f64>, seed: u64, f: impl FnMut(&[f64]) -> (f64, Vec<f64>)) -> GradCheckReport {
    let mut f = f;
    let mut obj = FnObjective::new(point, move |x: &[f64], _| {
        let (v, g) = f(x);
        Ok((v, Some(g)))
    });
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    grad_check(&mut obj, &cfg).expect("grad check runs")
}

fn conv_case(seed: u64, padding: Padding) -> GradCheckReport {
    let mut r = rng(seed);
    let (bsz, cin, cout) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3));
    let k = r.random_range(1..=5);
    let stride = r.random_range(1..=3);
    let t = r.random_range(k..k + 12);
    let x = randn([bsz, cin, t], &mut r);
    let w = randn([cout, cin, k], &mut r);
    let b = randn([1, cout, 1], &mut r);
    let y = conv1d(&x, &w, &b, stride, padding).unwrap();
    let weights = randn(y.shape(), &mut r);
    let (nx, nw) = (x.len(), w.len());
    let point: Vec<f64> = [x.as_slice(), w.as_slice(), b.as_slice()].concat();
    run(point, seed, move |p| {
        let (xs, ws, bs) = split3(p, nx, nw);
        let x = Tensor::from_vec([bsz, cin, t], xs.to_vec()).unwrap();
        let w = Tensor::from_vec([cout, cin, k], ws.to_vec()).unwrap();
        let b = Tensor::from_vec([1, cout, 1], bs.to_vec()).unwrap();
        let y = conv1d(&x, &w, &b, stride, padding).unwrap();
        let (gx, gw, gb) = conv1d_backward(&x, &w, &weights, stride, padding).unwrap();
        (dot(y.as_slice(), weights.as_slice()), [gx.as_slice(), gw.as_slice(), gb.as_slice()].concat())
    })
}

fn maxpool_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let pool = r.random_range(2..=5);
    let shape = [r.random_range(1..=3), r.random_range(1..=3), pool * r.random_range(1..=5)];
    let x = randn(shape, &mut r);
    let weights = randn(maxpool1d(&x, pool).unwrap().shape(), &mut r);
    run(x.into_vec(), seed, move |p| {
        let x = Tensor::from_vec(shape, p.to_vec()).unwrap();
        let (y, idx) = maxpool1d_with_indices(&x, pool).unwrap();
        let g = maxpool1d_backward(x.shape(), &idx, &weights).unwrap();
        (dot(y.as_slice(), weights.as_slice()), g.into_vec())
    })
}

fn batchnorm_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let c = r.random_range(1..=3);
    let shape = [r.random_range(1..=4), c, r.random_range(2..=6)];
    let x = randn(shape, &mut r);
    let gamma = randn([1, c, 1], &mut r);
    let beta = randn([1, c, 1], &mut r);
    let weights = randn(shape, &mut r);
    let n = x.len();
    let point = [x.as_slice(), gamma.as_slice(), beta.as_slice()].concat();
    run(point, seed, move |p| {
        let (xs, gs, bs) = split3(p, n, c);
        let mut bn = BatchNorm1d::<f64>::new(c);
        bn.gamma.value = Tensor::from_vec([1, c, 1], gs.to_vec()).unwrap();
        bn.beta.value = Tensor::from_vec([1, c, 1], bs.to_vec()).unwrap();
        let x = Tensor::from_vec(shape, xs.to_vec()).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let gx = bn.backward(&weights).unwrap();
        let grad = [gx.as_slice(), bn.gamma.grad.as_slice(), bn.beta.grad.as_slice()].concat();
        (dot(y.as_slice(), weights.as_slice()), grad)
    })
}

fn dense_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (bsz, nin, nout) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=4));
    let x = randn([bsz, nin, 1], &mut r);
    let w = randn([nout, nin, 1], &mut r);
    let b = randn([1, nout, 1], &mut r);
    let weights = randn([bsz, nout, 1], &mut r);
    let (nx, nw) = (x.len(), w.len());
    let point = [x.as_slice(), w.as_slice(), b.as_slice()].concat();
    run(point, seed, move |p| {
        let (xs, ws, bs) = split3(p, nx, nw);
        let x = Tensor::from_vec([bsz, nin, 1], xs.to_vec()).unwrap();
        let w = Tensor::from_vec([nout, nin, 1], ws.to_vec()).unwrap();
        let b = Tensor::from_vec([1, nout, 1], bs.to_vec()).unwrap();
        let y = dense(&x, &w, &b).unwrap();
        let (gx, gw, gb) = dense_backward(&x, &w, &weights).unwrap();
        (dot(y.as_slice(), weights.as_slice()), [gx.as_slice(), gw.as_slice(), gb.as_slice()].concat())
    })
}

fn sigmoid_bce_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let shape = [r.random_range(1..=5), r.random_range(1..=5), 1];
    let z = randn(shape, &mut r);
    let bits: Vec<f64> = (0..z.len()).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let y = Tensor::from_vec(shape, bits).unwrap();
    run(z.into_vec(), seed, move |p| {
        let z = Tensor::from_vec(shape, p.to_vec()).unwrap();
        let probs = sigmoid(&z);
        (bce(&probs, &y).unwrap(), bce_logit_grad(&probs, &y).unwrap().into_vec())
    })
}

fn softmax_ce_case(seed: u64) -> GradCheckReport {
    let mut r = rng(seed);
    let (bsz, k) = (r.random_range(1..=5), r.random_range(2..=6));
    let z = randn([bsz, k, 1], &mut r);
    let labels: Vec<usize> = (0..bsz).map(|_| r.random_range(0..k)).collect();
    run(z.into_vec(), seed, move |p| {
        let z = Tensor::from_vec([bsz, k, 1], p.to_vec()).unwrap();
        let probs = softmax(&z);
        (ce(&probs, &labels).unwrap(), ce_logit_grad(&probs, &labels).unwrap().into_vec())
    })
}

/// Loss of a full (2,2) model in training mode against its parameters and input.
fn model_case(seed: u64, task: Task) -> GradCheckReport {
    let mut r = rng(seed);
    let outputs = 4;
    let spec = ModelSpec::new(Scale::new(2, 2).unwrap(), 3, outputs, task).unwrap();
    let mut model = SampleCnn::<f64>::new(spec, seed).unwrap();
    let bsz = 3;
    let x = randn([bsz, 1, 8], &mut r);
    let targets = match task {
        Task::MultiLabel => Targets::Multi(Tensor::from_vec(
            [bsz, outputs, 1],
            (0..bsz * outputs).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap()),
        Task::SingleLabel => Targets::Single((0..bsz).map(|_| r.random_range(0..outputs)).collect()),
    };
    let np = model.param_count();
    let point = [flatten_params(&mut model), x.into_vec()].concat();
    run(point, seed, move |p| {
        load_params(&mut model, &p[..np]);
        let x = Tensor::from_vec([bsz, 1, 8], p[np..].to_vec()).unwrap();
        model.zero_grad();
        let probs = model.forward(&x, Mode::Train).unwrap();
        let (loss, g) = targets.loss_and_grad(&probs).unwrap();
        let gx = model.backward_logits(&g).unwrap();
        (loss, [flatten_grads(&mut model), gx.into_vec()].concat())
    })
}

pub fn grad_case(case: GradCase, seed: u64) -> GradCheckReport {
    match case {
        GradCase::ConvValid => conv_case(seed, Padding::Valid),
        GradCase::ConvSame => conv_case(seed, Padding::Same),
        GradCase::MaxPool => maxpool_case(seed),
        GradCase::BatchNorm => batchnorm_case(seed),
        GradCase::Dense => dense_case(seed),
        GradCase::SigmoidBce => sigmoid_bce_case(seed),
        GradCase::SoftmaxCe => softmax_ce_case(seed),
        GradCase::Model22Multi => model_case(seed, Task::MultiLabel),
        GradCase::Model22Single => model_case(seed, Task::SingleLabel),
    }
}

/// Recursively lists regular files under `root` as sorted relative paths.
pub fn list_files(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    fn walk(dir: &std::path::Path, root: &std::path::Path, out: &mut Vec<std::path::PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
