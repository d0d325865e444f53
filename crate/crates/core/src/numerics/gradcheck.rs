//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Parameterized;

/// A scalar function of a flat coordinate vector with an analytic gradient.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;
    fn get(&self, i: usize) -> T;
    fn set(&mut self, i: usize, v: T);
    fn value(&mut self) -> Result<T>;
    /// Gradient at the current point, one entry per coordinate.
    fn gradient(&mut self) -> Result<Vec<T>>;
}

/// Objective backed by a point vector and a closure returning
/// `(value, Some(gradient))` when asked for a gradient.
pub struct FnObjective<T, F> {
    pub point: Vec<T>,
    eval: F,
}

impl<T, F> FnObjective<T, F>
where
    T: Scalar,
    F: FnMut(&[T], bool) -> Result<(T, Option<Vec<T>>)>,
{
    pub fn new(point: Vec<T>, eval: F) -> Self {
        FnObjective { point, eval }
    }
}

impl<T, F> Objective<T> for FnObjective<T, F>
where
    T: Scalar,
    F: FnMut(&[T], bool) -> Result<(T, Option<Vec<T>>)>,
{
    fn dim(&self) -> usize {
        self.point.len()
    }

    fn get(&self, i: usize) -> T {
        self.point[i]
    }

    fn set(&mut self, i: usize, v: T) {
        self.point[i] = v;
    }

    fn value(&mut self) -> Result<T> {
        (self.eval)(&self.point, false).map(|r| r.0)
    }

    fn gradient(&mut self) -> Result<Vec<T>> {
        let (_, g) = (self.eval)(&self.point, true)?;
        Ok(g.expect("objective closure must return a gradient when asked"))
    }
}

/// Flattens all trainable parameter values in visit order.
pub fn flatten_params<T: Scalar>(model: &mut (impl Parameterized<T> + ?Sized)) -> Vec<T> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, p| out.extend_from_slice(p.value.as_slice()));
    out
}

pub fn flatten_grads<T: Scalar>(model: &mut (impl Parameterized<T> + ?Sized)) -> Vec<T> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, p| out.extend_from_slice(p.grad.as_slice()));
    out
}

/// Writes a flat vector produced by [`flatten_params`] back into the model.
pub fn load_params<T: Scalar>(model: &mut (impl Parameterized<T> + ?Sized), flat: &[T]) {
    let mut at = 0;
    model.visit_params(&mut |_, p| {
        let n = p.value.len();
        p.value.as_mut_slice().copy_from_slice(&flat[at..at + n]);
        at += n;
    });
    assert_eq!(at, flat.len(), "flat parameter vector length");
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Number of coordinates sampled (all of them when the dimension is smaller).
    pub samples: usize,
    pub seed: u64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor so near-zero gradients are compared absolutely.
    pub abs_floor: f64,
    /// One-sided slopes differing by more than this fraction mark a kink.
    pub kink_ratio: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            samples: 32,
            seed: 0,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            kink_ratio: 0.1,
        }
    }
}

/// Outcome per checked coordinate.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: Vec<CoordCheck>,
    /// Coordinates sitting on a non-differentiable point (e.g. a maxpool tie).
    pub excluded: Vec<usize>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares the analytic gradient of `obj` with central differences using
/// `h = 1e-5 * max(1, |x|)` on a random subset of coordinates.
pub fn grad_check<T: Scalar, O: Objective<T> + ?Sized>(obj: &mut O, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let dim = obj.dim();
    let analytic = obj.gradient()?;
    assert_eq!(analytic.len(), dim, "gradient length");
    let f0 = obj.value()?.to_f64().unwrap_or(f64::NAN);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut coords: Vec<usize> = if dim <= cfg.samples {
        (0..dim).collect()
    } else {
        sample(&mut rng, dim, cfg.samples).into_vec()
    };
    coords.sort_unstable();

    let mut checked = Vec::new();
    let mut excluded = Vec::new();
    let mut max_rel = 0.0f64;
    for i in coords {
        let x = obj.get(i);
        let xf = x.to_f64().unwrap_or(f64::NAN);
        let h = T::lit(1e-5 * xf.abs().max(1.0));
        obj.set(i, x + h);
        let fp = obj.value()?.to_f64().unwrap_or(f64::NAN);
        obj.set(i, x - h);
        let fm = obj.value()?.to_f64().unwrap_or(f64::NAN);
        obj.set(i, x);
        let hf = ((x + h) - (x - h)).to_f64().unwrap_or(f64::NAN) / 2.0;
        let fwd = (fp - f0) / hf;
        let bwd = (f0 - fm) / hf;
        let jump = (fwd - bwd).abs();
        if jump > cfg.kink_ratio * fwd.abs().max(bwd.abs()) && jump > cfg.abs_floor {
            excluded.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * hf);
        let a = analytic[i].to_f64().unwrap_or(f64::NAN);
        let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
        let rel = (a - numeric).abs() / denom;
        if rel.is_nan() {
            max_rel = f64::INFINITY;
        } else {
            max_rel = max_rel.max(rel);
        }
        checked.push(CoordCheck {
            index: i,
            analytic: a,
            numeric,
            rel_error: rel,
        });
    }
    Ok(GradCheckReport {
        checked,
        excluded,
        max_rel_error: max_rel,
        tolerance: cfg.tolerance,
    })
}
