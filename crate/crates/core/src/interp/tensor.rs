use std::collections::BTreeMap;

use half::f16;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::sketch::{Dtype, Number};

/// Dense row-major tensor. Values are held as `f64` but always rounded to the
/// precision of `dtype`, so a tensor never carries more precision than its
/// declared type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Rounds `x` to the nearest value representable in `dtype`
/// (round-to-nearest-even for the float types).
pub fn round_to(dtype: Dtype, x: f64) -> f64 {
    match dtype {
        Dtype::F16 => f16::from_f64(x).to_f64(),
        Dtype::F32 => x as f32 as f64,
        Dtype::I32 => x.round_ties_even().clamp(i32::MIN as f64, i32::MAX as f64),
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    /// Builds a tensor, rounding every value to `dtype`. Returns `None` when
    /// the data length does not match the shape.
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Option<Tensor> {
        if data.len() != numel(&shape) {
            return None;
        }
        let data = data.into_iter().map(|x| round_to(dtype, x)).collect();
        Some(Tensor { dtype, shape, data })
    }

    pub fn zeros(dtype: Dtype, shape: Vec<usize>) -> Tensor {
        let n = numel(&shape);
        Tensor { dtype, shape, data: vec![0.0; n] }
    }

    pub fn from_fn(dtype: Dtype, shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Tensor {
        let data = (0..numel(&shape)).map(|i| round_to(dtype, f(i))).collect();
        Tensor { dtype, shape, data }
    }

    /// Uniform values in `[lo, hi)`; integers for `i32`.
    pub fn random(dtype: Dtype, shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
        Tensor::from_fn(dtype, shape, |_| {
            if dtype == Dtype::I32 {
                rng.random_range(lo as i64..hi.max(lo + 1.0) as i64) as f64
            } else {
                rng.random_range(lo..hi)
            }
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        let st = strides(&self.shape);
        self.data[idx.iter().zip(&st).map(|(i, s)| i * s).sum::<usize>()]
    }

    pub fn set(&mut self, flat: usize, x: f64) {
        self.data[flat] = round_to(self.dtype, x);
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Concrete values for one evaluation of a sketch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub symbol_values: BTreeMap<String, i64>,
    pub constexpr_values: BTreeMap<String, Number>,
    pub tensor_values: BTreeMap<String, Tensor>,
}

impl Binding {
    pub fn symbol(mut self, name: &str, v: i64) -> Binding {
        self.symbol_values.insert(name.to_string(), v);
        self
    }

    pub fn constexpr(mut self, name: &str, v: Number) -> Binding {
        self.constexpr_values.insert(name.to_string(), v);
        self
    }

    pub fn tensor(mut self, name: &str, t: Tensor) -> Binding {
        self.tensor_values.insert(name.to_string(), t);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f16_rounds_to_nearest_even() {
        // 1 + 2^-11 sits exactly between two f16 values; the even one is 1.0.
        assert_eq!(round_to(Dtype::F16, 1.0 + 2f64.powi(-11)), 1.0);
        assert_eq!(round_to(Dtype::F16, 1.0 + 3.0 * 2f64.powi(-11)), 1.0 + 2f64.powi(-9));
        assert_eq!(round_to(Dtype::I32, 2.5), 2.0);
        assert_eq!(round_to(Dtype::F32, 0.1), 0.1f32 as f64);
    }

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(Dtype::F32, vec![2, 3], vec![0.0; 5]).is_none());
        let t = Tensor::new(Dtype::F32, vec![2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(t.get(&[1, 2]), 5.0);
        assert_eq!(strides(&[2, 3, 4]), vec![12, 4, 1]);
    }
}
