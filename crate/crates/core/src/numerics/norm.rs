//! Per-channel batch normalization over (batch, time).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Param, Parameterized, Shape, Tensor};

use super::Mode;

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BatchNorm1d<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: T,
    pub momentum: T,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> BatchNorm1d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(Tensor::full([1, channels, 1], T::one())),
            beta: Param::new(Tensor::zeros([1, channels, 1])),
            running_mean: Tensor::zeros([1, channels, 1]),
            running_var: Tensor::full([1, channels, 1], T::one()),
            eps: T::lit(BN_EPS),
            momentum: T::lit(BN_MOMENTUM),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, s: Shape) -> Result<()> {
        if s.channels != self.channels() {
            return Err(Error::shape(
                "batchnorm1d",
                format!("{} channels", self.channels()),
                s,
            ));
        }
        Ok(())
    }

    /// Inference-mode normalization with the running statistics.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        self.check(s)?;
        let mut y = x.clone();
        for c in 0..s.channels {
            let inv = T::one() / (self.running_var.as_slice()[c] + self.eps).sqrt();
            let scale = self.gamma.value.as_slice()[c] * inv;
            let mean = self.running_mean.as_slice()[c];
            let shift = self.beta.value.as_slice()[c];
            for b in 0..s.batch {
                for v in y.row_mut(b, c) {
                    *v = (*v - mean) * scale + shift;
                }
            }
        }
        Ok(y)
    }

    /// Normalizes with biased batch statistics and updates the running ones.
    fn train_forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        self.check(s)?;
        let population = s.batch * s.time;
        if population < 2 {
            return Err(Error::BatchPopulation { population });
        }
        let n = T::from_usize_lossy(population);
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(s.channels);
        let mut y = Tensor::zeros(s);
        let one_minus = T::one() - self.momentum;
        for c in 0..s.channels {
            let mut sum = T::zero();
            for b in 0..s.batch {
                sum += x.row(b, c).iter().copied().sum::<T>();
            }
            let mean = sum / n;
            let mut sq = T::zero();
            for b in 0..s.batch {
                sq += x.row(b, c).iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            let var = sq / n;
            let inv = T::one() / (var + self.eps).sqrt();
            inv_std.push(inv);
            let gamma = self.gamma.value.as_slice()[c];
            let beta = self.beta.value.as_slice()[c];
            for b in 0..s.batch {
                let xr = xhat.row_mut(b, c);
                for v in xr.iter_mut() {
                    *v = (*v - mean) * inv;
                }
                for (o, &h) in y.row_mut(b, c).iter_mut().zip(xhat.row(b, c)) {
                    *o = gamma * h + beta;
                }
            }
            let rm = &mut self.running_mean.as_mut_slice()[c];
            *rm = self.momentum * *rm + one_minus * mean;
            let rv = &mut self.running_var.as_mut_slice()[c];
            *rv = self.momentum * *rv + one_minus * var;
        }
        self.cache = Some(Cache { xhat, inv_std });
        y.debug_check("batchnorm1d");
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.train_forward(x),
            Mode::Infer => self.infer(x),
        }
    }

    /// Backward through the train-mode normalization.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or(Error::EmptyInput("batchnorm1d backward without train forward"))?;
        let s = cache.xhat.shape();
        if grad_out.shape() != s {
            return Err(Error::shape("batchnorm1d backward", s, grad_out.shape()));
        }
        let n = T::from_usize_lossy(s.batch * s.time);
        let mut gx = Tensor::zeros(s);
        for c in 0..s.channels {
            let gamma = self.gamma.value.as_slice()[c];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for b in 0..s.batch {
                for (&g, &h) in grad_out.row(b, c).iter().zip(cache.xhat.row(b, c)) {
                    sum_g += g;
                    sum_gx += g * h;
                }
            }
            self.beta.grad.as_mut_slice()[c] += sum_g;
            self.gamma.grad.as_mut_slice()[c] += sum_gx;
            let k = gamma * cache.inv_std[c] / n;
            for b in 0..s.batch {
                let hs = cache.xhat.row(b, c);
                let gs = grad_out.row(b, c);
                for ((o, &g), &h) in gx.row_mut(b, c).iter_mut().zip(gs).zip(hs) {
                    *o = k * (n * g - sum_g - h * sum_gx);
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm1d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }
}

/// Functional train-mode batch normalization, leaving `running` stats updated.
pub fn batchnorm1d<T: Scalar>(
    input: &Tensor<T>,
    layer: &mut BatchNorm1d<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    layer.forward(input, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_batch_hand_example() {
        let mut bn = BatchNorm1d::<f64>::new(1);
        let x = Tensor::from_vec([3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let expect = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        let got = y.as_slice();
        assert!((got[0] + expect).abs() < 1e-12);
        assert_eq!(got[1], 0.0);
        assert!((got[2] - expect).abs() < 1e-12);
        assert!((got[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let mut bn = BatchNorm1d::<f32>::new(2);
        bn.gamma.value.fill(0.0);
        bn.beta.value = Tensor::from_vec([1, 2, 1], vec![0.5, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn([4, 2, 5], 2.0, &mut rng);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for b in 0..4 {
            assert!(y.row(b, 0).iter().all(|&v| v == 0.5));
            assert!(y.row(b, 1).iter().all(|&v| v == -1.0));
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mut bn = BatchNorm1d::<f64>::new(3);
            let x = Tensor::randn([5, 3, 7], 3.0, &mut rng).map(|v| v + 4.0);
            let y = bn.forward(&x, Mode::Train).unwrap();
            for c in 0..3 {
                let vals: Vec<f64> = (0..5).flat_map(|b| y.row(b, c).to_vec()).collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                assert!(mean.abs() < 1e-5);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn single_value_population_is_rejected() {
        let mut bn = BatchNorm1d::<f32>::new(1);
        let x = Tensor::zeros([1, 1, 1]);
        assert!(matches!(
            bn.forward(&x, Mode::Train),
            Err(Error::BatchPopulation { population: 1 })
        ));
        assert!(bn.forward(&x, Mode::Infer).is_ok());
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut bn = BatchNorm1d::<f64>::new(1);
        let x = Tensor::from_vec([2, 1, 1], vec![1.0, 3.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.as_slice()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.as_slice()[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
    }
}
