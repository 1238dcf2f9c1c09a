//! Scalar abstraction and shared numeric kernels.
//!
//! The math-heavy modules (splines, likelihoods, information criteria) are
//! generic over [`Scalar`] so they work at `f32` or `f64`. The sampling
//! pipeline is pinned to [`crate::Real`] (= `f64`); the generic kernels are
//! what it builds on.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Natural log of the gamma function, valid for positive arguments.
    fn gamma_ln(self) -> Self;

    /// Lossy conversion from `f64`, for constants.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in scalar type")
    }
}

impl Scalar for f64 {
    fn gamma_ln(self) -> f64 {
        ln_gamma_f64(self)
    }
}

impl Scalar for f32 {
    fn gamma_ln(self) -> f32 {
        ln_gamma_f64(self as f64) as f32
    }
}

// Lanczos approximation, g = 7, 9 coefficients.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 via the Lanczos series.
pub fn ln_gamma_f64(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires a positive argument, got {x}");
    if x < 0.5 {
        // Recurrence keeps the series on its accurate branch.
        return ln_gamma_f64(x + 1.0) - x.ln();
    }
    let z = x - 1.0;
    let mut series = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        series += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + series.ln()
}

/// log(Σ exp(x_i)) with max-subtraction. Returns −∞ for an empty slice or
/// when every entry is −∞.
pub fn log_sum_exp<S: Scalar>(values: &[S]) -> S {
    let m = values
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    if !m.is_finite() {
        return m;
    }
    let s: S = values.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

/// Softmax of a slice of logits; shift-invariant and overflow-guarded.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let m = logits
        .iter()
        .copied()
        .fold(S::neg_infinity(), |a, b| if b > a { b } else { a });
    let mut out: Vec<S> = logits.iter().map(|&v| (v - m).exp()).collect();
    let total: S = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / total;
    }
    out
}

/// Type-7 (linear interpolation) quantile of an unsorted sample.
///
/// This is the convention all posterior summaries in this crate use, so
/// exported tables are reproducible bit-for-bit.
pub fn quantile<S: Scalar>(sample: &[S], p: f64) -> S {
    assert!(!sample.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&p), "quantile level must be in [0,1]");
    let mut sorted: Vec<S> = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in quantile input"));
    quantile_sorted(&sorted, p)
}

/// Type-7 quantile of an already sorted sample.
pub fn quantile_sorted<S: Scalar>(sorted: &[S], p: f64) -> S {
    let n = sorted.len();
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = S::c(h - lo as f64);
        sorted[lo] + w * (sorted[hi] - sorted[lo])
    }
}

/// Sample mean.
pub fn mean<S: Scalar>(sample: &[S]) -> S {
    let total: S = sample.iter().copied().sum();
    total / S::c(sample.len() as f64)
}

/// Unbiased (n−1 denominator) sample variance.
pub fn sample_variance<S: Scalar>(sample: &[S]) -> S {
    let n = sample.len();
    assert!(n >= 2, "sample variance needs at least two values");
    let m = mean(sample);
    let ss: S = sample.iter().map(|&v| (v - m) * (v - m)).sum();
    ss / S::c((n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ln_gamma_matches_statrs() {
        let args = [0.001, 0.04, 0.5, 1.0, 1.5, 2.0, 7.3, 100.0, 4321.5, 1e8];
        for &x in &args {
            let ours = ln_gamma_f64(x);
            let reference = statrs::function::gamma::ln_gamma(x);
            let tol = 1e-11 * ours.abs().max(1.0);
            assert!(
                (ours - reference).abs() <= tol,
                "ln_gamma({x}): {ours} vs {reference}"
            );
        }
    }

    #[test]
    fn ln_gamma_integer_factorials() {
        // Γ(n) = (n−1)!
        let mut fact = 1.0f64;
        for n in 1..15u32 {
            assert_abs_diff_eq!(ln_gamma_f64(n as f64), fact.ln(), epsilon = 1e-10);
            fact *= n as f64;
        }
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_abs_diff_eq!(
            log_sum_exp(&[0.0f64, 0.0]),
            std::f64::consts::LN_2,
            epsilon = 1e-14
        );
        // Dominated by the max without overflow.
        assert_abs_diff_eq!(
            log_sum_exp(&[1000.0f64, 0.0]),
            1000.0,
            epsilon = 1e-12
        );
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn softmax_is_simplex_and_shift_invariant() {
        let a = softmax(&[1.0f64, 0.0, -2.0]);
        let b = softmax(&[101.0f64, 100.0, 98.0]);
        let sum: f64 = a.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn quantile_type7_interpolates() {
        let xs = [1.0f64, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile(&xs, 0.0), 1.0);
        assert_abs_diff_eq!(quantile(&xs, 1.0), 4.0);
        // h = 3*0.5 = 1.5 → between 2 and 3
        assert_abs_diff_eq!(quantile(&xs, 0.5), 2.5);
        // h = 3*0.25 = 0.75
        assert_abs_diff_eq!(quantile(&xs, 0.25), 1.75);
    }

    #[test]
    fn kernels_work_at_f32() {
        let v = softmax(&[0.5f32, -0.5]);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-6);
        assert!((2.0f32.gamma_ln() - 0.0).abs() < 1e-6);
    }
}
