//! Binary and categorical cross-entropy on (batch, classes, 1) probabilities.
//!
//! The `*_logit_grad` functions return the gradient with respect to the
//! pre-activation logits of the matching sigmoid/softmax head.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

fn check_targets<T: Scalar>(pred: &Tensor<T>, targets: &Tensor<T>) -> Result<()> {
    if pred.shape() != targets.shape() {
        return Err(Error::shape("bce", pred.shape(), targets.shape()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("bce"));
    }
    for &y in targets.as_slice() {
        if y != T::zero() && y != T::one() {
            return Err(Error::InvalidTarget {
                op: "bce",
                value: y.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(())
}

fn clamp<T: Scalar>(p: T) -> T {
    let lo = T::lit(PROB_CLAMP);
    p.max(lo).min(T::one() - lo)
}

/// Mean binary cross-entropy over every (example, label) pair.
pub fn bce<T: Scalar>(pred: &Tensor<T>, targets: &Tensor<T>) -> Result<T> {
    check_targets(pred, targets)?;
    let n = T::from_usize_lossy(pred.len());
    let total: T = pred
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(&p, &y)| {
            let p = clamp(p);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum();
    Ok(total / n)
}

/// Gradient of sigmoid followed by [`bce`], with respect to the logits.
pub fn bce_logit_grad<T: Scalar>(pred: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    check_targets(pred, targets)?;
    let n = T::from_usize_lossy(pred.len());
    let data = pred
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(&p, &y)| (p - y) / n)
        .collect();
    Tensor::from_vec(pred.shape(), data)
}

fn check_labels<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<()> {
    let s = probs.shape();
    if s.time != 1 || s.batch != labels.len() {
        return Err(Error::shape(
            "ce",
            format!("({}, C, 1)", labels.len()),
            s,
        ));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("ce"));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= s.channels) {
        return Err(Error::LabelRange {
            op: "ce",
            label,
            classes: s.channels,
        });
    }
    Ok(())
}

/// Mean categorical cross-entropy over the batch.
pub fn ce<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<T> {
    check_labels(probs, labels)?;
    let total: T = labels
        .iter()
        .enumerate()
        .map(|(b, &l)| -clamp(probs.get(b, l, 0)).ln())
        .sum();
    Ok(total / T::from_usize_lossy(labels.len()))
}

/// Gradient of softmax followed by [`ce`], with respect to the logits.
pub fn ce_logit_grad<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    check_labels(probs, labels)?;
    let inv = T::one() / T::from_usize_lossy(labels.len());
    let mut g = probs.map(|p| p * inv);
    for (b, &l) in labels.iter().enumerate() {
        let v = g.get(b, l, 0);
        g.set(b, l, 0, v - inv);
    }
    Ok(g)
}

/// Targets for one batch, matching the head type.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T> {
    /// One class index per example.
    Single(Vec<usize>),
    /// (batch, labels, 1) tensor of 0/1 values.
    Multi(Tensor<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn len(&self) -> usize {
        match self {
            Targets::Single(v) => v.len(),
            Targets::Multi(t) => t.shape().batch,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loss value and logit gradient for the given head probabilities.
    pub fn loss_and_grad(&self, probs: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        match self {
            Targets::Single(l) => Ok((ce(probs, l)?, ce_logit_grad(probs, l)?)),
            Targets::Multi(y) => Ok((bce(probs, y)?, bce_logit_grad(probs, y)?)),
        }
    }

    pub fn loss(&self, probs: &Tensor<T>) -> Result<T> {
        match self {
            Targets::Single(l) => ce(probs, l),
            Targets::Multi(y) => bce(probs, y),
        }
    }
}
