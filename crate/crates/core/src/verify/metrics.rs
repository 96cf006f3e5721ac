//! Correctness and performance metrics.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::Tensor;
use crate::sketch::Dtype;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("ShapeMismatch: generated {gen:?} vs reference {reference:?}")]
    ShapeMismatch { gen: Vec<usize>, reference: Vec<usize> },
    #[error("DomainError: {0}")]
    Domain(String),
}

/// Pass-gate threshold `tau` and the denominator guard `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub tau: f64,
    pub epsilon: f64,
}

impl Tolerance {
    pub fn for_dtype(d: Dtype) -> Tolerance {
        match d {
            Dtype::F16 => Tolerance { tau: 0.004, epsilon: 1e-3 },
            Dtype::F32 | Dtype::I32 => Tolerance { tau: 0.001, epsilon: 1e-6 },
        }
    }
}

/// Relative error where the reference is larger than `epsilon` in
/// magnitude, absolute error otherwise.
pub fn element_error(gen: f64, reference: f64, tol: &Tolerance) -> f64 {
    let d = (gen - reference).abs();
    if reference.abs() > tol.epsilon {
        d / reference.abs()
    } else {
        d
    }
}

pub fn elementwise_error(gen: &Tensor, reference: &Tensor, tol: &Tolerance) -> Result<Vec<f64>, MetricError> {
    if gen.shape != reference.shape || gen.dtype != reference.dtype {
        return Err(MetricError::ShapeMismatch { gen: gen.shape.clone(), reference: reference.shape.clone() });
    }
    Ok(gen.data.iter().zip(&reference.data).map(|(&g, &r)| {
        let e = element_error(g, r, tol);
        // A NaN anywhere must count as a violation.
        if e.is_nan() { f64::INFINITY } else { e }
    }).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub passed: bool,
    pub violations: usize,
    pub total: usize,
    pub violation_fraction: f64,
}

/// Passes when the fraction of elements with error above `tau` is at most
/// `tau`. An empty error list passes trivially.
pub fn check_pass(errors: &[f64], tol: &Tolerance) -> Gate {
    let violations = errors.iter().filter(|&&e| e > tol.tau).count();
    let total = errors.len();
    let violation_fraction = if total == 0 { 0.0 } else { violations as f64 / total as f64 };
    Gate { passed: violation_fraction <= tol.tau, violations, total, violation_fraction }
}

/// Binomial coefficient, zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Unbiased pass@k averaged over tasks, as an exact rational.
pub fn pass_at_k(n: u64, correct: &[u64], k: u64) -> Result<BigRational, MetricError> {
    if correct.is_empty() {
        return Err(MetricError::Domain("no tasks".into()));
    }
    if k < 1 || k > n {
        return Err(MetricError::Domain(format!("k={k} must lie in 1..={n}")));
    }
    if let Some(c) = correct.iter().find(|&&c| c > n) {
        return Err(MetricError::Domain(format!("correct count {c} exceeds n={n}")));
    }
    let total = BigRational::from_integer(binomial(n, k).into());
    let mut sum = BigRational::zero();
    for &c in correct {
        let miss = BigRational::from_integer(binomial(n - c, k).into());
        sum += BigRational::one() - miss / &total;
    }
    Ok(sum / BigRational::from_integer((correct.len() as u64).into()))
}

pub fn pass_at_k_f64(n: u64, correct: &[u64], k: u64) -> Result<f64, MetricError> {
    pass_at_k(n, correct, k).map(|r| r.to_f64().unwrap_or(f64::NAN))
}

/// `exp(mean(ln s))`. Empty input gives `None`.
pub fn geometric_mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() || xs.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return None;
    }
    let mean = xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64;
    Some(mean.exp())
}

/// Fraction of speedups at or above `p`.
pub fn fast_p(speedups: &[f64], p: f64) -> f64 {
    if speedups.is_empty() {
        return 0.0;
    }
    speedups.iter().filter(|&&s| s >= p).count() as f64 / speedups.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupSummary {
    pub speedups: Vec<f64>,
    pub geometric_mean: f64,
    /// `(p, fast_p)` in the order the thresholds were given.
    pub fast_p: Vec<(f64, f64)>,
}

/// Per-kernel speedups `T_base / T_gen`, their geometric mean and `fast_p`
/// for each threshold.
pub fn speedup_metrics(latencies: &[(f64, f64)], thresholds: &[f64]) -> Result<SpeedupSummary, MetricError> {
    if latencies.is_empty() {
        return Err(MetricError::Domain("no latency pairs".into()));
    }
    if let Some((b, g)) = latencies.iter().find(|(b, g)| !(*b > 0.0 && *g > 0.0)) {
        return Err(MetricError::Domain(format!("non-positive time in pair ({b}, {g})")));
    }
    let speedups: Vec<f64> = latencies.iter().map(|(b, g)| b / g).collect();
    let geometric_mean = geometric_mean(&speedups).ok_or_else(|| MetricError::Domain("speedup overflow".into()))?;
    let fast_p = thresholds.iter().map(|&p| (p, fast_p(&speedups, p))).collect();
    Ok(SpeedupSummary { speedups, geometric_mean, fast_p })
}

/// Arithmetic mean of timed samples.
pub fn mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}
