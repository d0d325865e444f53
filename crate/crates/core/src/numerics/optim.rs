//! SGD with classical or Nesterov momentum.

use crate::scalar::Scalar;
use crate::tensor::Parameterized;

/// Applies one update in place to every parameter of `model`:
///
/// ```text
/// v <- momentum * v + g
/// w <- w - lr * v                     (classical)
/// w <- w - lr * (g + momentum * v)    (nesterov)
/// ```
///
/// With `lr == 0` the values are left bitwise untouched.
pub fn sgd_step<T: Scalar>(model: &mut (impl Parameterized<T> + ?Sized), lr: T, momentum: T, nesterov: bool) {
    model.visit_params(&mut |_, p| {
        let value = p.value.as_mut_slice();
        let grad = p.grad.as_slice();
        let buf = p.momentum.as_mut_slice();
        for ((w, &g), v) in value.iter_mut().zip(grad).zip(buf.iter_mut()) {
            *v = momentum * *v + g;
            if lr == T::zero() {
                continue;
            }
            let step = if nesterov { g + momentum * *v } else { *v };
            *w -= lr * step;
        }
    });
}
