//! Dense tensor engine: immutable row-major `f64` arrays, a Wengert tape
//! for reverse-mode differentiation, parameter storage, weights
//! serialization, and a finite-difference gradient checker.

mod gradcheck;
pub mod opchecks;
mod store;
mod tape;
mod weights;

pub use gradcheck::{grad_check, CoordinateCheck, GradCheckConfig, GradCheckReport};
pub use store::{Param, ParamStore};
pub use tape::{Tape, TapeParams, Var, ATTN_MASK_SENTINEL};
pub use weights::{load_entries, save_entries, WEIGHTS_MAGIC, WEIGHTS_VERSION};

use std::sync::Arc;

use rand::Rng;

use crate::error::{CoreError, Result};

/// Immutable dense n-dimensional array of `f64` in row-major order.
///
/// Cloning is cheap: the payload is shared behind an `Arc`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(CoreError::contract("Tensor::new", format!("zero extent in {shape:?}")));
        }
        if numel != data.len() {
            return Err(CoreError::contract(
                "Tensor::new",
                format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![0.0; numel]) }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![value; numel]) }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: Arc::new(vec![value]) }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(f).collect();
        Self { shape: shape.to_vec(), data: Arc::new(data) }
    }

    /// Gaussian init, standard Box–Muller over the given RNG.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| normal(rng) * std)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy with a single coordinate nudged; used by the gradient checker.
    pub fn with_nudged(&self, index: usize, delta: f64) -> Self {
        let mut data = self.data.as_ref().clone();
        data[index] += delta;
        Self { shape: self.shape.clone(), data: Arc::new(data) }
    }

    /// True iff the shapes match and every element is bit-identical.
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// One standard normal sample via Box–Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    // Avoid ln(0) by sampling u1 from (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn new_checks_numel() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn nudge_touches_one_coordinate() {
        let t = Tensor::zeros(&[2, 2]);
        let n = t.with_nudged(3, 0.5);
        assert_eq!(n.data(), &[0.0, 0.0, 0.0, 0.5]);
        assert_eq!(t.data(), &[0.0; 4]);
    }

    #[test]
    fn randn_is_seed_deterministic() {
        let mut a = StdRng::seed_from_u64(7);
        let mut b = StdRng::seed_from_u64(7);
        let ta = Tensor::randn(&[4, 4], 0.02, &mut a);
        let tb = Tensor::randn(&[4, 4], 0.02, &mut b);
        assert!(ta.bits_eq(&tb));
    }
}
