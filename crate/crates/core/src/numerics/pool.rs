//! Non-overlapping 1-D pooling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check(time: usize, pool: usize) -> Result<usize> {
    if pool == 0 || !time.is_multiple_of(pool) {
        return Err(Error::PoolLength { time, pool });
    }
    Ok(time / pool)
}

/// Max over windows of `pool` samples. Also returns the flat argmax index of
/// every output, first occurrence on ties.
pub fn maxpool1d_with_indices<T: Scalar>(input: &Tensor<T>, pool: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    let t_out = check(s.time, pool)?;
    let mut out = Vec::with_capacity(s.batch * s.channels * t_out);
    let mut idx = Vec::with_capacity(out.capacity());
    let x = input.as_slice();
    for (r, row) in x.chunks_exact(s.time.max(1)).enumerate() {
        for (w, win) in row.chunks_exact(pool).enumerate() {
            let mut best = 0;
            for (k, &v) in win.iter().enumerate().skip(1) {
                if v > win[best] {
                    best = k;
                }
            }
            out.push(win[best]);
            idx.push(r * s.time + w * pool + best);
        }
    }
    let out = Tensor::from_vec([s.batch, s.channels, t_out], out)?;
    Ok((out, idx))
}

pub fn maxpool1d<T: Scalar>(input: &Tensor<T>, pool: usize) -> Result<Tensor<T>> {
    maxpool1d_with_indices(input, pool).map(|(t, _)| t)
}

/// Routes each output gradient to its window's argmax.
pub fn maxpool1d_backward<T: Scalar>(
    input_shape: crate::tensor::Shape,
    indices: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != indices.len() {
        return Err(Error::shape("maxpool1d backward", indices.len(), grad_out.shape()));
    }
    let mut gx = Tensor::zeros(input_shape);
    let g = gx.as_mut_slice();
    for (&i, &v) in indices.iter().zip(grad_out.as_slice()) {
        g[i] += v;
    }
    Ok(gx)
}

pub fn avgpool1d<T: Scalar>(input: &Tensor<T>, pool: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    let t_out = check(s.time, pool)?;
    let scale = T::one() / T::from_usize_lossy(pool);
    let out = input
        .as_slice()
        .chunks_exact(pool)
        .map(|w| w.iter().copied().sum::<T>() * scale)
        .collect();
    Tensor::from_vec([s.batch, s.channels, t_out], out)
}

pub fn avgpool1d_backward<T: Scalar>(grad_out: &Tensor<T>, pool: usize) -> Result<Tensor<T>> {
    let s = grad_out.shape();
    let scale = T::one() / T::from_usize_lossy(pool);
    let data = grad_out
        .as_slice()
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g * scale, pool))
        .collect();
    Tensor::from_vec([s.batch, s.channels, s.time * pool], data)
}

/// Pooling choice for the hidden blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    /// Smooth substitute used by optimizer property tests.
    Avg,
}

/// Pooling layer with cached routing for backward.
#[derive(Clone, Debug)]
pub struct Pool1d {
    pub kind: PoolKind,
    pub size: usize,
    cache: Option<(crate::tensor::Shape, Vec<usize>)>,
}

impl Pool1d {
    pub fn new(kind: PoolKind, size: usize) -> Self {
        Pool1d {
            kind,
            size,
            cache: None,
        }
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            PoolKind::Max => maxpool1d(x, self.size),
            PoolKind::Avg => avgpool1d(x, self.size),
        }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self.kind {
            PoolKind::Max => {
                let (y, idx) = maxpool1d_with_indices(x, self.size)?;
                self.cache = Some((x.shape(), idx));
                Ok(y)
            }
            PoolKind::Avg => {
                self.cache = Some((x.shape(), Vec::new()));
                avgpool1d(x, self.size)
            }
        }
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, idx) = self
            .cache
            .take()
            .ok_or(Error::EmptyInput("pool backward without forward"))?;
        match self.kind {
            PoolKind::Max => maxpool1d_backward(shape, &idx, grad_out),
            PoolKind::Avg => avgpool1d_backward(grad_out, self.size),
        }
    }
}
