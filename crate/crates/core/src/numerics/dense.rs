//! Fully connected layer on (batch, features, 1) tensors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Param, Parameterized, Tensor};

use super::conv::add_into;

/// `y = W x + b` for every batch row. `weight` is (out, in, 1), `bias` (1, out, 1).
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let w = weight.shape();
    if s.time != 1 || s.channels != w.channels || w.time != 1 {
        return Err(Error::shape(
            "dense",
            format!("(B, {}, 1) for weights {}", w.channels, w),
            s,
        ));
    }
    if bias.len() != w.batch {
        return Err(Error::shape("dense bias", format!("{} entries", w.batch), bias.shape()));
    }
    let (n_in, n_out) = (w.channels, w.batch);
    let mut out = Vec::with_capacity(s.batch * n_out);
    for b in 0..s.batch {
        let x = input.item(b);
        for o in 0..n_out {
            let row = &weight.as_slice()[o * n_in..(o + 1) * n_in];
            let acc = row.iter().zip(x).fold(T::zero(), |a, (&wv, &xv)| a + wv * xv);
            out.push(acc + bias.as_slice()[o]);
        }
    }
    Tensor::from_vec([s.batch, n_out, 1], out)
}

/// Gradients of [`dense`] with respect to input, weight and bias.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = input.shape();
    let w = weight.shape();
    let (n_in, n_out) = (w.channels, w.batch);
    if grad_out.shape().dims() != [s.batch, n_out, 1] {
        return Err(Error::shape(
            "dense backward",
            format!("({}, {}, 1)", s.batch, n_out),
            grad_out.shape(),
        ));
    }
    let mut gx = Tensor::zeros(s);
    let mut gw = Tensor::zeros(w);
    let mut gb = Tensor::zeros([1, n_out, 1]);
    for b in 0..s.batch {
        let x = input.item(b);
        let go = grad_out.item(b);
        for (o, &g) in go.iter().enumerate() {
            gb.as_mut_slice()[o] += g;
            let wrow = &weight.as_slice()[o * n_in..(o + 1) * n_in];
            let gwrow = &mut gw.as_mut_slice()[o * n_in..(o + 1) * n_in];
            for (gwv, &xv) in gwrow.iter_mut().zip(x) {
                *gwv += g * xv;
            }
            let gxrow = &mut gx.as_mut_slice()[b * n_in..(b + 1) * n_in];
            for (gxv, &wv) in gxrow.iter_mut().zip(wrow) {
                *gxv += g * wv;
            }
        }
    }
    Ok((gx, gw, gb))
}

#[derive(Clone, Debug)]
pub struct Dense<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    /// He-initialised weights, zero bias.
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / n_in as f64).sqrt();
        Self::from_params(Tensor::randn([n_out, n_in, 1], std, rng), Tensor::zeros([1, n_out, 1]))
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Dense {
            weight: Param::new(weight),
            bias: Param::new(bias),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape().channels
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().batch
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense(x, &self.weight.value, &self.bias.value)
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or(Error::EmptyInput("dense backward without forward"))?;
        let (gx, gw, gb) = dense_backward(&x, &self.weight.value, grad_out)?;
        add_into(&mut self.weight.grad, &gw);
        add_into(&mut self.bias.grad, &gb);
        Ok(gx)
    }
}

impl<T: Scalar> Parameterized<T> for Dense<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}
