//! The `m^n` sample-level network.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Activation, ActivationKind, BatchNorm1d, Conv1d, Mode, Padding, Pool1d, PoolKind};
use crate::scalar::Scalar;
use crate::tensor::{Param, Parameterized, Tensor};

use super::spec::{LevelIndex, ModelSpec, Task};

/// conv -> batchnorm -> ReLU, optionally followed by pooling.
#[derive(Clone, Debug)]
struct Block<T: Scalar> {
    conv: Conv1d<T>,
    bn: BatchNorm1d<T>,
    act: Activation<T>,
    pool: Option<Pool1d>,
}

impl<T: Scalar> Block<T> {
    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv.infer(x)?;
        let h = self.act.infer(&self.bn.infer(&h)?);
        match &self.pool {
            Some(p) => p.infer(&h),
            None => Ok(h),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return self.infer(x);
        }
        let h = self.conv.forward(x)?;
        let h = self.bn.forward(&h, mode)?;
        let h = self.act.forward(&h);
        match &mut self.pool {
            Some(p) => p.forward(&h),
            None => Ok(h),
        }
    }

    fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        let g = match &mut self.pool {
            Some(p) => p.backward(g)?,
            None => g.clone(),
        };
        let g = self.act.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&format!("{prefix}.conv.weight"), &mut self.conv.weight);
        f(&format!("{prefix}.conv.bias"), &mut self.conv.bias);
        f(&format!("{prefix}.bn.gamma"), &mut self.bn.gamma);
        f(&format!("{prefix}.bn.beta"), &mut self.bn.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.bn.running_mean"), &mut self.bn.running_mean);
        f(&format!("{prefix}.bn.running_var"), &mut self.bn.running_var);
    }
}

/// Intermediate values of one inference pass.
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    /// Output of each hidden block, bottom to top.
    pub block_outputs: Vec<Tensor<T>>,
    /// Tensor fed to the output layer.
    pub head_input: Tensor<T>,
    pub logits: Tensor<T>,
    pub output: Tensor<T>,
}

/// Sample-level DCNN: a strided front-end conv, `n` conv/pool blocks and a
/// 1-tap conv head with a sigmoid or softmax.
#[derive(Clone, Debug)]
pub struct SampleCnn<T: Scalar> {
    spec: ModelSpec,
    frontend: Block<T>,
    blocks: Vec<Block<T>>,
    head: Conv1d<T>,
    head_act: Activation<T>,
}

impl<T: Scalar> SampleCnn<T> {
    /// Builds a max-pooling network with parameters drawn from `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        Self::with_pool(spec, seed, PoolKind::Max)
    }

    pub fn with_pool(spec: ModelSpec, seed: u64, pool: PoolKind) -> Result<Self> {
        let spec = ModelSpec::new(spec.scale, spec.channels, spec.num_outputs, spec.task)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, c) = (spec.m(), spec.channels);
        let frontend = Block {
            conv: Conv1d::new(1, c, m, m, Padding::Valid, &mut rng),
            bn: BatchNorm1d::new(c),
            act: Activation::new(ActivationKind::Relu),
            pool: None,
        };
        let blocks = (0..spec.n())
            .map(|_| Block {
                conv: Conv1d::new(c, c, m, 1, Padding::Same, &mut rng),
                bn: BatchNorm1d::new(c),
                act: Activation::new(ActivationKind::Relu),
                pool: Some(Pool1d::new(pool, m)),
            })
            .collect();
        let head = Conv1d::new(c, spec.num_outputs, 1, 1, Padding::Valid, &mut rng);
        let head_act = Activation::new(match spec.task {
            Task::SingleLabel => ActivationKind::Softmax,
            Task::MultiLabel => ActivationKind::Sigmoid,
        });
        Ok(SampleCnn {
            spec,
            frontend,
            blocks,
            head,
            head_act,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_length(&self) -> usize {
        self.spec.input_length().expect("validated at construction")
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.channels != 1 {
            return Err(Error::shape("samplecnn input", "1 channel", s));
        }
        if s.time != self.input_length() {
            return Err(Error::SegmentLength {
                expected: self.input_length(),
                actual: s.time,
            });
        }
        Ok(())
    }

    /// Inference pass recording every block output.
    pub fn trace(&self, x: &Tensor<T>) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut h = self.frontend.infer(x)?;
        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            h = b.infer(&h)?;
            block_outputs.push(h.clone());
        }
        let logits = self.head.infer(&h)?;
        let output = self.head_act.infer(&logits);
        Ok(Trace {
            block_outputs,
            head_input: h,
            logits,
            output,
        })
    }

    /// Inference-mode predictions, shape (batch, num_outputs, 1).
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.frontend.infer(x)?;
        for b in &self.blocks {
            h = b.infer(&h)?;
        }
        let logits = self.head.infer(&h)?;
        Ok(self.head_act.infer(&logits))
    }

    /// Block outputs at the requested levels, inference mode. Level `-j` has
    /// shape (batch, channels, m^(j-1)).
    pub fn forward_with_taps(
        &self,
        x: &Tensor<T>,
        levels: &[LevelIndex],
    ) -> Result<BTreeMap<LevelIndex, Tensor<T>>> {
        let n = self.blocks.len();
        for l in levels {
            l.check(n)?;
        }
        self.check_input(x)?;
        let deepest = levels.iter().map(|l| l.depth()).max().unwrap_or(0);
        let mut taps = BTreeMap::new();
        let mut h = self.frontend.infer(x)?;
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.infer(&h)?;
            let depth = n - i;
            if depth <= deepest {
                if let Some(&l) = levels.iter().find(|l| l.depth() == depth) {
                    taps.insert(l, h.clone());
                }
            }
        }
        Ok(taps)
    }

    /// Forward pass that caches activations for [`SampleCnn::backward_logits`]
    /// when `mode` is [`Mode::Train`].
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return self.predict(x);
        }
        self.check_input(x)?;
        let mut h = self.frontend.forward(x, mode)?;
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        let logits = self.head.forward(&h)?;
        Ok(self.head_act.infer(&logits))
    }

    /// Backpropagates a gradient with respect to the head logits, accumulating
    /// into every parameter. Returns the gradient with respect to the input.
    pub fn backward_logits(&mut self, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = self.head.backward(grad_logits)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        self.frontend.backward(&g)
    }
}

impl<T: Scalar> Parameterized<T> for SampleCnn<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.frontend.visit_params("frontend", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&format!("block{}", i + 1), f);
        }
        f("head.conv.weight", &mut self.head.weight);
        f("head.conv.bias", &mut self.head.bias);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.frontend.visit_buffers("frontend", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers(&format!("block{}", i + 1), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::Scale;

    fn spec(m: usize, n: usize, c: usize, task: Task) -> ModelSpec {
        ModelSpec::new(Scale::new(m, n).unwrap(), c, 3, task).unwrap()
    }

    #[test]
    fn exact_input_length_gives_one_frame() {
        let net = SampleCnn::<f32>::new(spec(2, 2, 4, Task::MultiLabel), 0).unwrap();
        assert_eq!(net.input_length(), 8);
        let x = Tensor::full([2, 1, 8], 0.1);
        let y = net.predict(&x).unwrap();
        assert_eq!(y.shape().dims(), [2, 3, 1]);
        assert!(y.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_length_names_expected_and_actual() {
        let net = SampleCnn::<f32>::new(spec(2, 2, 4, Task::MultiLabel), 0).unwrap();
        match net.predict(&Tensor::zeros([1, 1, 16])) {
            Err(Error::SegmentLength {
                expected: 8,
                actual: 16,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let s = spec(3, 3, 8, Task::SingleLabel);
        let mut a = SampleCnn::<f32>::new(s, 42).unwrap();
        let mut b = SampleCnn::<f32>::new(s, 42).unwrap();
        let mut c = SampleCnn::<f32>::new(s, 43).unwrap();
        let fa = crate::numerics::gradcheck::flatten_params(&mut a);
        let fb = crate::numerics::gradcheck::flatten_params(&mut b);
        let fc = crate::numerics::gradcheck::flatten_params(&mut c);
        assert_eq!(fa, fb);
        assert_ne!(fa, fc);
    }

    #[test]
    fn softmax_outputs_sum_to_one() {
        let net = SampleCnn::<f64>::new(spec(3, 2, 5, Task::SingleLabel), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn([4, 1, 27], 0.3, &mut rng);
        let y = net.predict(&x).unwrap();
        for b in 0..4 {
            let s: f64 = y.item(b).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn param_count_matches_visitor() {
        let mut net = SampleCnn::<f32>::new(spec(3, 4, 6, Task::MultiLabel), 0).unwrap();
        assert_eq!(net.param_count(), net.spec().param_count());
        assert_eq!(net.buffer_count(), net.spec().buffer_count());
    }

    #[test]
    fn taps_reject_levels_deeper_than_model() {
        let net = SampleCnn::<f32>::new(spec(2, 2, 4, Task::MultiLabel), 0).unwrap();
        let x = Tensor::zeros([1, 1, 8]);
        let levels = [LevelIndex::new(-3).unwrap()];
        assert!(matches!(
            net.forward_with_taps(&x, &levels),
            Err(Error::InvalidLevel { level: -3, blocks: 2 })
        ));
        let taps = net.forward_with_taps(&x, &[LevelIndex::TOP]).unwrap();
        assert_eq!(taps[&LevelIndex::TOP].shape().time, 1);
    }

    #[test]
    fn train_forward_matches_predict_output_shape() {
        let mut net = SampleCnn::<f64>::new(spec(2, 3, 4, Task::MultiLabel), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn([3, 1, 16], 1.0, &mut rng);
        let y = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape().dims(), [3, 3, 1]);
        let g = net.backward_logits(&Tensor::full([3, 3, 1], 0.1)).unwrap();
        assert_eq!(g.shape(), x.shape());
    }
}
