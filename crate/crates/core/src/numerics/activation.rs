//! Pointwise activations and the channel-axis softmax.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Softmax over the channel axis independently at every (batch, time) position.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut y = x.clone();
    for b in 0..s.batch {
        for t in 0..s.time {
            let mut max = T::neg_infinity();
            for c in 0..s.channels {
                max = max.max(x.get(b, c, t));
            }
            let mut sum = T::zero();
            for c in 0..s.channels {
                let e = (x.get(b, c, t) - max).exp();
                y.set(b, c, t, e);
                sum += e;
            }
            for c in 0..s.channels {
                y.set(b, c, t, y.get(b, c, t) / sum);
            }
        }
    }
    y
}

/// Activation choice for layers that cache their output for backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Softmax,
}

#[derive(Clone, Debug)]
pub struct Activation<T: Scalar> {
    pub kind: ActivationKind,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, output: None }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        match self.kind {
            ActivationKind::Relu => relu(x),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Softmax => softmax(x),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self
            .output
            .take()
            .ok_or(Error::EmptyInput("activation backward without forward"))?;
        if y.shape() != grad_out.shape() {
            return Err(Error::shape("activation backward", y.shape(), grad_out.shape()));
        }
        let mut gx = grad_out.clone();
        match self.kind {
            ActivationKind::Relu => {
                for (g, &v) in gx.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    if v <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            ActivationKind::Sigmoid => {
                for (g, &v) in gx.as_mut_slice().iter_mut().zip(y.as_slice()) {
                    *g *= v * (T::one() - v);
                }
            }
            ActivationKind::Softmax => {
                let s = y.shape();
                for b in 0..s.batch {
                    for t in 0..s.time {
                        let dot: T = (0..s.channels)
                            .map(|c| y.get(b, c, t) * grad_out.get(b, c, t))
                            .sum();
                        for c in 0..s.channels {
                            gx.set(b, c, t, y.get(b, c, t) * (grad_out.get(b, c, t) - dot));
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}
