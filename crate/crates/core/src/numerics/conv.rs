//! Strided 1-D cross-correlation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Param, Parameterized, Shape, Tensor};

/// Zero padding applied before the kernel slides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output length `floor((T - k) / stride) + 1`.
    Valid,
    /// `k - 1` zeros split left `(k - 1) / 2`, right the rest; stride 1 keeps length `T`.
    Same,
}

impl Padding {
    fn amounts(self, kernel: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let left = (kernel - 1) / 2;
                (left, kernel - 1 - left)
            }
        }
    }
}

/// Output time length, or `None` when the padded input is shorter than the kernel.
pub fn conv1d_output_len(time: usize, kernel: usize, stride: usize, padding: Padding) -> Option<usize> {
    if kernel == 0 || stride == 0 {
        return None;
    }
    let (l, r) = padding.amounts(kernel);
    let padded = time + l + r;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    batch: usize,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad_left: usize,
    t_in: usize,
    t_out: usize,
}

impl Geometry {
    fn new<T: Scalar>(
        input: Shape,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let w = weight.shape();
        if input.channels != w.channels {
            return Err(Error::shape(
                "conv1d",
                format!("input channels {} (weights {})", w.channels, w),
                format!("input {}", input),
            ));
        }
        if bias.len() != w.batch {
            return Err(Error::shape(
                "conv1d bias",
                format!("{} entries", w.batch),
                bias.shape(),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidSpec("conv1d stride must be >= 1".into()));
        }
        let t_out = conv1d_output_len(input.time, w.time, stride, padding).ok_or_else(|| {
            Error::shape(
                "conv1d",
                format!("time length >= kernel {}", w.time),
                format!("input {}", input),
            )
        })?;
        Ok(Geometry {
            batch: input.batch,
            in_ch: input.channels,
            out_ch: w.batch,
            kernel: w.time,
            stride,
            pad_left: padding.amounts(w.time).0,
            t_in: input.time,
            t_out,
        })
    }

    /// Output positions `t` whose source index `t * stride + tap - pad_left` is in range.
    #[inline]
    fn span(&self, tap: usize) -> (usize, usize) {
        let lo = if self.pad_left > tap {
            (self.pad_left - tap).div_ceil(self.stride)
        } else {
            0
        };
        let end = self.t_in + self.pad_left;
        let hi = if end > tap {
            (end - tap).div_ceil(self.stride).min(self.t_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// Cross-correlation (no kernel flip) of `input` (B, Cin, T) with `weight`
/// (Cout, Cin, k) plus a per-output-channel `bias`.
pub fn conv1d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.shape(), weight, bias, stride, padding)?;
    let mut out = Tensor::zeros([g.batch, g.out_ch, g.t_out]);
    let w = weight.as_slice();
    let bias = bias.as_slice();
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let dst = out.row_mut(b, o);
            dst.fill(bias[o]);
            for i in 0..g.in_ch {
                let src = input.row(b, i);
                let wrow = &w[(o * g.in_ch + i) * g.kernel..][..g.kernel];
                for (tap, &wv) in wrow.iter().enumerate() {
                    let (lo, hi) = g.span(tap);
                    if lo >= hi {
                        continue;
                    }
                    let s0 = lo * g.stride + tap - g.pad_left;
                    if g.stride == 1 {
                        for (d, &x) in dst[lo..hi].iter_mut().zip(&src[s0..s0 + (hi - lo)]) {
                            *d += wv * x;
                        }
                    } else {
                        for (k, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d += wv * src[s0 + k * g.stride];
                        }
                    }
                }
            }
        }
    }
    out.debug_check("conv1d");
    Ok(out)
}

/// Gradients of [`conv1d`] with respect to input, weight and bias.
pub fn conv1d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let wshape = weight.shape();
    let bias_shape = Tensor::<T>::zeros([1, wshape.batch, 1]);
    let g = Geometry::new(input.shape(), weight, &bias_shape, stride, padding)?;
    let expected = Shape::new(g.batch, g.out_ch, g.t_out);
    if grad_out.shape() != expected {
        return Err(Error::shape("conv1d backward", expected, grad_out.shape()));
    }
    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(wshape);
    let mut gb = Tensor::zeros([1, g.out_ch, 1]);
    let w = weight.as_slice();
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let go = grad_out.row(b, o);
            gb.as_mut_slice()[o] += go.iter().copied().sum::<T>();
            for i in 0..g.in_ch {
                let src = input.row(b, i);
                let base = (o * g.in_ch + i) * g.kernel;
                for tap in 0..g.kernel {
                    let (lo, hi) = g.span(tap);
                    if lo >= hi {
                        continue;
                    }
                    let s0 = lo * g.stride + tap - g.pad_left;
                    let wv = w[base + tap];
                    let mut acc = T::zero();
                    let gxr = gx.row_mut(b, i);
                    if g.stride == 1 {
                        let n = hi - lo;
                        for ((&gv, &x), dx) in go[lo..hi]
                            .iter()
                            .zip(&src[s0..s0 + n])
                            .zip(gxr[s0..s0 + n].iter_mut())
                        {
                            acc += gv * x;
                            *dx += wv * gv;
                        }
                    } else {
                        for (k, &gv) in go[lo..hi].iter().enumerate() {
                            let s = s0 + k * g.stride;
                            acc += gv * src[s];
                            gxr[s] += wv * gv;
                        }
                    }
                    gw.as_mut_slice()[base + tap] += acc;
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Convolution layer with He-initialised weights and zero bias.
#[derive(Clone, Debug)]
pub struct Conv1d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: Padding,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_ch * kernel) as f64;
        let weight = Tensor::randn([out_ch, in_ch, kernel], (2.0 / fan_in).sqrt(), rng);
        Self::from_params(weight, Tensor::zeros([1, out_ch, 1]), stride, padding)
    }

    pub fn from_params(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: Padding) -> Self {
        Conv1d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            stride,
            padding,
            input: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().channels
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().batch
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape().time
    }

    /// Forward without caching; usable through a shared reference.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv1d(x, &self.weight.value, &self.bias.value, self.stride, self.padding)
    }

    /// Forward that keeps the input for [`Conv1d::backward`].
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or(Error::EmptyInput("conv1d backward without forward"))?;
        let (gx, gw, gb) = conv1d_backward(&x, &self.weight.value, grad_out, self.stride, self.padding)?;
        add_into(&mut self.weight.grad, &gw);
        add_into(&mut self.bias.grad, &gb);
        Ok(gx)
    }
}

impl<T: Scalar> Parameterized<T> for Conv1d<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

pub(crate) fn add_into<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>) {
    for (d, &s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec([1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn valid_stride_one_hand_example() {
        let y = conv1d(
            &series(&[1.0, 2.0, 3.0, 4.0]),
            &series(&[1.0, 0.0, -1.0]),
            &Tensor::zeros([1, 1, 1]),
            1,
            Padding::Valid,
        )
        .unwrap();
        assert_eq!(y.as_slice(), &[-2.0, -2.0]);
    }

    #[test]
    fn valid_stride_two_hand_example() {
        let y = conv1d(
            &series(&[1.0, 2.0, 3.0, 4.0, 5.0]),
            &series(&[1.0, -1.0]),
            &Tensor::zeros([1, 1, 1]),
            2,
            Padding::Valid,
        )
        .unwrap();
        assert_eq!(y.as_slice(), &[-1.0, -1.0]);
    }

    #[test]
    fn same_padding_keeps_length() {
        for k in 1..=5 {
            let x = series(&[1.0, -2.0, 0.5, 3.0, 1.0, 2.0, -1.0]);
            let w = Tensor::full([1, 1, k], 1.0);
            let y = conv1d(&x, &w, &Tensor::zeros([1, 1, 1]), 1, Padding::Same).unwrap();
            assert_eq!(y.shape().time, 7, "k = {k}");
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let x = Tensor::<f32>::zeros([1, 3, 8]);
        let w = Tensor::<f32>::zeros([4, 2, 3]);
        let err = conv1d(&x, &w, &Tensor::zeros([1, 4, 1]), 1, Padding::Valid).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(4, 2, 3)") && msg.contains("(1, 3, 8)"), "{msg}");
    }

    #[test]
    fn short_input_is_rejected() {
        let x = Tensor::<f32>::zeros([1, 1, 2]);
        let w = Tensor::<f32>::zeros([1, 1, 3]);
        assert!(conv1d(&x, &w, &Tensor::zeros([1, 1, 1]), 1, Padding::Valid).is_err());
    }

    #[test]
    fn backward_requires_forward() {
        let mut rng = rand::rng();
        let mut c = Conv1d::<f32>::new(1, 1, 2, 1, Padding::Valid, &mut rng);
        assert!(c.backward(&Tensor::zeros([1, 1, 1])).is_err());
    }
}
