//! Dense row-major tensors of rank 1..=3 holding 64-bit floats.
//!
//! Shapes follow the `(batch, channels, length)` convention for rank-3
//! tensors and `(batch, features)` for rank-2. All layer kernels in
//! [`crate::nn`] operate on these.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    /// Build a tensor from explicit shape and row-major values.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::shape("tensor rank", "1..=3 extents", format!("{}", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::shape(
                "tensor size",
                format!("{} values for shape {:?}", expected, shape),
                format!("{}", values.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            values,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    /// Uniform values in `(lo, hi)`, drawn in row-major order.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            values,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Reinterpret the stored values under a new shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape, self.values.clone())
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.values[i * self.shape[1] + j]
    }

    #[inline]
    pub fn at3(&self, b: usize, c: usize, l: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.values[(b * self.shape[1] + c) * self.shape[2] + l]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        self.values[i * self.shape[1] + j] = v;
    }

    #[inline]
    pub fn set3(&mut self, b: usize, c: usize, l: usize, v: f64) {
        debug_assert_eq!(self.rank(), 3);
        self.values[(b * self.shape[1] + c) * self.shape[2] + l] = v;
    }

    /// Error if any stored value is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn size_must_match_shape() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[], vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn reshape_preserves_values() {
        let t = Tensor::new(&[2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let r = t.reshape(&[1, 2, 3]).unwrap();
        assert_eq!(r.shape(), &[1, 2, 3]);
        assert_eq!(r.values(), t.values());
        assert!(t.reshape(&[4, 2]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::new(&[2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(0, 1, 0), 2.0);
        assert_eq!(t.at3(1, 0, 1), 5.0);
        assert_eq!(t.at3(1, 1, 1), 7.0);
    }

    #[test]
    fn uniform_is_deterministic_per_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let ta = Tensor::uniform(&[2, 5], -1.0, 1.0, &mut a);
        let tb = Tensor::uniform(&[2, 5], -1.0, 1.0, &mut b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn finite_check_flags_nan() {
        let mut t = Tensor::zeros(&[2, 2]);
        assert!(t.check_finite("x").is_ok());
        t.values_mut()[3] = f64::NAN;
        assert!(t.check_finite("x").is_err());
    }
}
