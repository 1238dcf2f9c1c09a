//! Natural cubic spline bases and the exposure×lag cross-basis.
//!
//! The basis functions follow the truncated-power natural-spline
//! construction: with knots ξ₀ < … < ξ_{m−1} (boundaries at the ends) and
//!
//! ```text
//! d_j(x) = [ (x−ξ_j)₊³ − (x−ξ_{m−1})₊³ ] / (ξ_{m−1} − ξ_j)
//! ```
//!
//! the basis is {1, x, d_0 − d_{m−2}, …, d_{m−3} − d_{m−2}} (the constant is
//! dropped when the basis carries no intercept). Every function is linear
//! beyond the boundary knots and C² at the knots.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

#[derive(Error, Debug, PartialEq)]
pub enum SplineError {
    #[error("interior knots must be strictly increasing, got {0} then {1}")]
    KnotsNotIncreasing(f64, f64),
    #[error("boundary knots must satisfy left < right, got ({0}, {1})")]
    BadBoundary(f64, f64),
    #[error("interior knot {0} lies outside the open boundary interval ({1}, {2})")]
    KnotOutsideBoundary(f64, f64, f64),
    #[error("knot value is not finite")]
    NonFiniteKnot,
    #[error("evaluation point is not finite")]
    NonFiniteInput,
    #[error("series of length {len} cannot support max lag {max_lag}")]
    SeriesTooShort { len: usize, max_lag: usize },
    #[error("exposure at area {area}, time {time} is not finite")]
    NonFiniteExposure { area: usize, time: usize },
}

/// Specification of one natural cubic spline basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec<S: Scalar> {
    interior_knots: Vec<S>,
    boundary: (S, S),
    include_intercept: bool,
}

impl<S: Scalar> SplineSpec<S> {
    pub fn new(
        interior_knots: Vec<S>,
        boundary: (S, S),
        include_intercept: bool,
    ) -> Result<Self, SplineError> {
        let (lo, hi) = boundary;
        if !lo.is_finite() || !hi.is_finite() {
            return Err(SplineError::NonFiniteKnot);
        }
        if lo >= hi {
            return Err(SplineError::BadBoundary(
                lo.to_f64().unwrap_or(f64::NAN),
                hi.to_f64().unwrap_or(f64::NAN),
            ));
        }
        for w in interior_knots.windows(2) {
            if !(w[0] < w[1]) {
                return Err(SplineError::KnotsNotIncreasing(
                    w[0].to_f64().unwrap_or(f64::NAN),
                    w[1].to_f64().unwrap_or(f64::NAN),
                ));
            }
        }
        for &k in &interior_knots {
            if !k.is_finite() {
                return Err(SplineError::NonFiniteKnot);
            }
            if !(k > lo && k < hi) {
                return Err(SplineError::KnotOutsideBoundary(
                    k.to_f64().unwrap_or(f64::NAN),
                    lo.to_f64().unwrap_or(f64::NAN),
                    hi.to_f64().unwrap_or(f64::NAN),
                ));
            }
        }
        Ok(Self {
            interior_knots,
            boundary,
            include_intercept,
        })
    }

    /// Interior knots equally spaced between `lo` and `hi` (exclusive).
    pub fn equally_spaced(
        n_interior: usize,
        lo: S,
        hi: S,
        include_intercept: bool,
    ) -> Result<Self, SplineError> {
        let span = hi - lo;
        let step = span / S::c((n_interior + 1) as f64);
        let knots = (1..=n_interior).map(|j| lo + step * S::c(j as f64)).collect();
        Self::new(knots, (lo, hi), include_intercept)
    }

    pub fn interior_knots(&self) -> &[S] {
        &self.interior_knots
    }

    pub fn boundary(&self) -> (S, S) {
        self.boundary
    }

    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    /// Number of basis functions: #interior + 1, plus 1 with an intercept.
    pub fn dim(&self) -> usize {
        self.interior_knots.len() + 1 + usize::from(self.include_intercept)
    }

    /// All knots, boundaries included, in increasing order.
    pub fn all_knots(&self) -> Vec<S> {
        let mut ks = Vec::with_capacity(self.interior_knots.len() + 2);
        ks.push(self.boundary.0);
        ks.extend_from_slice(&self.interior_knots);
        ks.push(self.boundary.1);
        ks
    }

    /// Evaluate the basis at `x`.
    pub fn eval(&self, x: S) -> Result<Vec<S>, SplineError> {
        if !x.is_finite() {
            return Err(SplineError::NonFiniteInput);
        }
        let mut out = vec![S::zero(); self.dim()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Evaluate into a caller-provided slice of length `dim()`.
    /// The input must be finite; callers validate data up front.
    pub fn eval_into(&self, x: S, out: &mut [S]) {
        debug_assert!(x.is_finite());
        debug_assert_eq!(out.len(), self.dim());
        let m = self.interior_knots.len() + 2;
        let knot = |j: usize| -> S {
            if j == 0 {
                self.boundary.0
            } else if j == m - 1 {
                self.boundary.1
            } else {
                self.interior_knots[j - 1]
            }
        };
        let mut idx = 0;
        if self.include_intercept {
            out[idx] = S::one();
            idx += 1;
        }
        out[idx] = x;
        idx += 1;
        if m == 2 {
            return;
        }
        let last = trunc_cubic(x, knot(m - 1));
        let d = |j: usize| (trunc_cubic(x, knot(j)) - last) / (knot(m - 1) - knot(j));
        let d_ref = d(m - 2);
        for j in 0..m - 2 {
            out[idx + j] = d(j) - d_ref;
        }
    }
}

#[inline]
fn trunc_cubic<S: Scalar>(x: S, knot: S) -> S {
    let t = x - knot;
    if t > S::zero() {
        t * t * t
    } else {
        S::zero()
    }
}

/// Specification of the exposure×lag tensor basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossBasisSpec<S: Scalar> {
    pub max_lag: usize,
    pub exposure_basis: SplineSpec<S>,
    pub lag_basis: SplineSpec<S>,
}

impl<S: Scalar> CrossBasisSpec<S> {
    pub fn new(
        max_lag: usize,
        exposure_basis: SplineSpec<S>,
        lag_basis: SplineSpec<S>,
    ) -> Result<Self, SplineError> {
        let (_, hi) = lag_basis.boundary();
        if hi > S::c(max_lag as f64) {
            // A lag knot beyond L would shape the basis over lags never used.
            return Err(SplineError::KnotOutsideBoundary(
                hi.to_f64().unwrap_or(f64::NAN),
                0.0,
                max_lag as f64,
            ));
        }
        Ok(Self {
            max_lag,
            exposure_basis,
            lag_basis,
        })
    }

    /// Columns of the cross-basis: v_x · v_ℓ.
    pub fn dim(&self) -> usize {
        self.exposure_basis.dim() * self.lag_basis.dim()
    }

    /// Lag-basis values tabulated at integer lags 0..=L; row ℓ, column k.
    pub fn lag_table(&self) -> Array2<S> {
        let vl = self.lag_basis.dim();
        let mut table = Array2::zeros((self.max_lag + 1, vl));
        for lag in 0..=self.max_lag {
            let mut row = table.row_mut(lag);
            self.lag_basis
                .eval_into(S::c(lag as f64), row.as_slice_mut().expect("contiguous row"));
        }
        table
    }
}

/// Cross-basis rows for a panel: one row per (area, time) with time > L.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossBasis<S: Scalar> {
    rows: Array2<S>,
    n_areas: usize,
    n_times: usize,
    max_lag: usize,
}

impl<S: Scalar> CrossBasis<S> {
    pub fn n_areas(&self) -> usize {
        self.n_areas
    }

    /// Panel length T (including the leading L times excluded from rows).
    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Times per area that have a cross-basis row: T − L.
    pub fn times_per_area(&self) -> usize {
        self.n_times - self.max_lag
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// First and last 1-based times with a row: (L+1, T).
    pub fn valid_time_range(&self) -> (usize, usize) {
        (self.max_lag + 1, self.n_times)
    }

    /// Row for area `i` (0-based) at 0-based time `t0` (must be ≥ L).
    pub fn row(&self, area: usize, t0: usize) -> ndarray::ArrayView1<'_, S> {
        debug_assert!(t0 >= self.max_lag && t0 < self.n_times);
        self.rows.row(self.obs_index(area, t0))
    }

    /// Flat observation index of (area, t0), matching log-likelihood exports.
    pub fn obs_index(&self, area: usize, t0: usize) -> usize {
        area * self.times_per_area() + (t0 - self.max_lag)
    }

    pub fn n_obs(&self) -> usize {
        self.rows.nrows()
    }

    pub fn rows(&self) -> &Array2<S> {
        &self.rows
    }
}

/// Lagged design of a single series: row for t (0-based t = L..T−1) holds
/// (x_t, x_{t−1}, …, x_{t−L}).
pub fn build_lag_matrix<S: Scalar>(series: &[S], max_lag: usize) -> Result<Array2<S>, SplineError> {
    let t_len = series.len();
    if t_len <= max_lag {
        return Err(SplineError::SeriesTooShort {
            len: t_len,
            max_lag,
        });
    }
    let mut out = Array2::zeros((t_len - max_lag, max_lag + 1));
    for t in max_lag..t_len {
        for lag in 0..=max_lag {
            out[(t - max_lag, lag)] = series[t - lag];
        }
    }
    Ok(out)
}

/// Build the cross-basis for an exposure panel (areas × times).
///
/// Row entries follow `b[j·v_ℓ + k] = Σ_ℓ Bx_j(x_{i,t−ℓ}) · Bl_k(ℓ)`.
pub fn build_crossbasis<S: Scalar>(
    exposure: &Array2<S>,
    spec: &CrossBasisSpec<S>,
) -> Result<CrossBasis<S>, SplineError> {
    let (n_areas, n_times) = exposure.dim();
    let max_lag = spec.max_lag;
    if n_times <= max_lag {
        return Err(SplineError::SeriesTooShort {
            len: n_times,
            max_lag,
        });
    }
    for ((i, t), &x) in exposure.indexed_iter() {
        if !x.is_finite() {
            return Err(SplineError::NonFiniteExposure { area: i, time: t + 1 });
        }
    }
    let vx = spec.exposure_basis.dim();
    let vl = spec.lag_basis.dim();
    let lag_table = spec.lag_table();
    let times_out = n_times - max_lag;
    let mut rows = Array2::zeros((n_areas * times_out, vx * vl));
    let mut ex = vec![S::zero(); vx];
    for i in 0..n_areas {
        for t0 in max_lag..n_times {
            let row_idx = i * times_out + (t0 - max_lag);
            let mut row = rows.row_mut(row_idx);
            for lag in 0..=max_lag {
                spec.exposure_basis.eval_into(exposure[(i, t0 - lag)], &mut ex);
                for (j, &e) in ex.iter().enumerate() {
                    for k in 0..vl {
                        row[j * vl + k] = row[j * vl + k] + e * lag_table[(lag, k)];
                    }
                }
            }
        }
    }
    Ok(CrossBasis {
        rows,
        n_areas,
        n_times,
        max_lag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: build each natural basis function as a vector of
    /// truncated-power coefficients by solving the tail constraints
    /// Σβ = 0 and Σβ·ξ = 0 numerically, then evaluate naively.
    fn truncated_power_oracle(spec: &SplineSpec<f64>, x: f64) -> Vec<f64> {
        let ks = spec.all_knots();
        let m = ks.len();
        let pow3 = |x: f64, k: f64| if x > k { (x - k).powi(3) } else { 0.0 };
        let mut out = Vec::new();
        if spec.include_intercept() {
            out.push(1.0);
        }
        out.push(x);
        for j in 0..m.saturating_sub(2) {
            // β_j fixed by the shared normalization; solve the 2×2 system
            //   β_{m−2} + β_{m−1} = −β_j
            //   ξ_{m−2}β_{m−2} + ξ_{m−1}β_{m−1} = −ξ_j β_j
            // for the two trailing coefficients.
            let beta_j = 1.0 / (ks[m - 1] - ks[j]);
            let rhs = [-beta_j, -ks[j] * beta_j];
            let a = [[1.0, 1.0], [ks[m - 2], ks[m - 1]]];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            let beta_m2 = (rhs[0] * a[1][1] - a[0][1] * rhs[1]) / det;
            let beta_m1 = (a[0][0] * rhs[1] - rhs[0] * a[1][0]) / det;
            let mut val = beta_j * pow3(x, ks[j]);
            val += beta_m2 * pow3(x, ks[m - 2]);
            val += beta_m1 * pow3(x, ks[m - 1]);
            out.push(val);
        }
        out
    }

    /// Finite-difference curvature. `side` picks the stencil: 0 centered,
    /// +1 right-sided, −1 left-sided (one-sided stencils stay inside a
    /// linear tail when evaluated at a boundary knot).
    fn second_derivative_h(
        spec: &SplineSpec<f64>,
        x: f64,
        j: usize,
        side: i8,
        h: f64,
    ) -> f64 {
        let f = |x: f64| spec.eval(x).unwrap()[j];
        match side {
            0 => (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h),
            1 => (f(x + 2.0 * h) - 2.0 * f(x + h) + f(x)) / (h * h),
            _ => (f(x) - 2.0 * f(x - h) + f(x - 2.0 * h)) / (h * h),
        }
    }

    fn second_derivative(spec: &SplineSpec<f64>, x: f64, j: usize, side: i8) -> f64 {
        second_derivative_h(spec, x, j, side, 5e-3)
    }

    #[test]
    fn dimension_contract() {
        let s = SplineSpec::new(vec![0.3, 0.6], (0.0, 1.0), false).unwrap();
        assert_eq!(s.dim(), 3);
        let s = SplineSpec::new(vec![0.5], (0.0, 1.0), true).unwrap();
        assert_eq!(s.dim(), 3);
        let s = SplineSpec::<f64>::new(vec![], (0.0, 1.0), false).unwrap();
        assert_eq!(s.dim(), 1);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(SplineSpec::new(vec![0.6, 0.3], (0.0, 1.0), false).is_err());
        assert!(SplineSpec::new(vec![0.5], (1.0, 0.0), false).is_err());
        assert!(SplineSpec::new(vec![1.5], (0.0, 1.0), false).is_err());
        assert!(SplineSpec::new(vec![f64::NAN], (0.0, 1.0), false).is_err());
        let s = SplineSpec::new(vec![0.5], (0.0, 1.0), false).unwrap();
        assert_eq!(s.eval(f64::NAN), Err(SplineError::NonFiniteInput));
    }

    #[test]
    fn zero_interior_knots_is_a_line() {
        let s = SplineSpec::<f64>::new(vec![], (0.0, 2.0), false).unwrap();
        let b1 = s.eval(0.3).unwrap();
        let b2 = s.eval(1.1).unwrap();
        let b3 = s.eval(1.9).unwrap();
        assert_eq!(b1.len(), 1);
        // Differences proportional to the x differences.
        let slope12 = (b2[0] - b1[0]) / (1.1 - 0.3);
        let slope23 = (b3[0] - b2[0]) / (1.9 - 1.1);
        assert_abs_diff_eq!(slope12, slope23, epsilon = 1e-12);
    }

    #[test]
    fn second_derivative_vanishes_at_and_beyond_boundaries() {
        let s = SplineSpec::new(vec![0.4, 0.7], (0.0, 1.0), true).unwrap();
        for j in 0..s.dim() {
            // At the boundary knots: outward stencils (curvature of the tail).
            for (x, side) in [(0.0, -1i8), (1.0, 1)] {
                let d2 = second_derivative(&s, x, j, side);
                assert!(d2.abs() < 1e-8, "basis {j} has curvature {d2} at x = {x}");
            }
            // Beyond the boundaries: centered stencils inside the tails.
            for &x in &[-0.5, -2.0, 1.5, 3.0] {
                let d2 = second_derivative(&s, x, j, 0);
                assert!(d2.abs() < 1e-8, "basis {j} has curvature {d2} at x = {x}");
            }
        }
    }

    #[test]
    fn matches_truncated_power_oracle_on_grid() {
        let s = SplineSpec::new(vec![0.35, 0.65], (0.1, 0.9), false).unwrap();
        for g in 0..50 {
            let x = -0.2 + 1.4 * (g as f64) / 49.0;
            let ours = s.eval(x).unwrap();
            let oracle = truncated_power_oracle(&s, x);
            for (a, b) in ours.iter().zip(&oracle) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
        // Same check with an intercept basis and asymmetric knots.
        let s = SplineSpec::new(vec![1.0, 2.5, 6.0], (-1.0, 8.0), true).unwrap();
        for g in 0..50 {
            let x = -3.0 + 13.0 * (g as f64) / 49.0;
            let ours = s.eval(x).unwrap();
            let oracle = truncated_power_oracle(&s, x);
            for (a, b) in ours.iter().zip(&oracle) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn lag_matrix_definition() {
        let m = build_lag_matrix(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(m.nrows(), 2);
        assert_eq!(m.row(0).to_vec(), vec![3.0, 2.0, 1.0]);
        assert_eq!(m.row(1).to_vec(), vec![4.0, 3.0, 2.0]);
    }

    #[test]
    fn lag_matrix_identity_at_lag_zero() {
        let series = [5.0, 6.0, 7.0];
        let m = build_lag_matrix(&series, 0).unwrap();
        assert_eq!(m.ncols(), 1);
        assert_eq!(m.column(0).to_vec(), series.to_vec());
    }

    #[test]
    fn lag_matrix_constant_series() {
        let m = build_lag_matrix(&[2.5; 6], 3).unwrap();
        assert!(m.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn lag_matrix_rejects_short_series() {
        assert!(build_lag_matrix(&[1.0, 2.0], 2).is_err());
    }

    fn linear_basis(lo: f64, hi: f64) -> SplineSpec<f64> {
        SplineSpec::new(vec![], (lo, hi), false).unwrap()
    }

    #[test]
    fn crossbasis_linear_lag_weights() {
        // Linear exposure basis against the linear lag basis Bl(ℓ) = ℓ:
        // the single column is Σ_ℓ ℓ·x_{t−ℓ}.
        let exposure =
            Array2::from_shape_vec((1, 5), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let spec = CrossBasisSpec::new(2, linear_basis(0.0, 10.0), linear_basis(0.0, 2.0))
            .unwrap();
        let cb = build_crossbasis(&exposure, &spec).unwrap();
        assert_eq!(cb.dim(), 1);
        let expect_t2 = 0.0 * 3.0 + 1.0 * 2.0 + 2.0 * 1.0;
        assert_abs_diff_eq!(cb.row(0, 2)[0], expect_t2, epsilon = 1e-12);
    }

    #[test]
    fn crossbasis_collapses_to_moving_sum() {
        // Constant-in-lag weighting lives in the intercept column of the
        // {1, ℓ} lag basis: paired with the linear exposure basis it gives
        // Σ_ℓ x_{i,t−ℓ}, the unconstrained distributed-lag moving sum.
        let exposure =
            Array2::from_shape_vec((1, 5), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let lag = SplineSpec::new(vec![], (0.0, 2.0), true).unwrap();
        let spec = CrossBasisSpec::new(2, linear_basis(0.0, 10.0), lag).unwrap();
        let cb = build_crossbasis(&exposure, &spec).unwrap();
        assert_eq!(cb.dim(), 2);
        assert_abs_diff_eq!(cb.row(0, 2)[0], 1.0 + 2.0 + 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cb.row(0, 4)[0], 3.0 + 4.0 + 5.0, epsilon = 1e-12);
    }

    #[test]
    fn crossbasis_reference_configuration_has_nine_columns() {
        // Exposure: 2 interior knots, no intercept (3 params); lag: 1 knot
        // plus intercept (3 params); L = 8 → 9 columns.
        let exposure_basis = SplineSpec::equally_spaced(2, 0.0, 1.0, false).unwrap();
        let lag_basis = SplineSpec::new(vec![4.0], (0.0, 8.0), true).unwrap();
        let spec = CrossBasisSpec::new(8, exposure_basis, lag_basis).unwrap();
        assert_eq!(spec.dim(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let exposure = Array2::from_shape_fn((3, 20), |_| rng.random::<f64>());
        let cb = build_crossbasis(&exposure, &spec).unwrap();
        assert_eq!(cb.dim(), 9);
        assert_eq!(cb.n_obs(), 3 * (20 - 8));
        assert_eq!(cb.valid_time_range(), (9, 20));
    }

    #[test]
    fn crossbasis_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let exposure = Array2::from_shape_fn((2, 12), |_| rng.random::<f64>() * 3.0);
        let exposure_basis = SplineSpec::new(vec![1.5], (0.2, 2.8), false).unwrap();
        let lag_basis = SplineSpec::new(vec![], (0.0, 3.0), true).unwrap();
        let spec = CrossBasisSpec::new(3, exposure_basis.clone(), lag_basis.clone()).unwrap();
        assert_eq!(spec.dim(), 4); // 2 × 2
        let cb = build_crossbasis(&exposure, &spec).unwrap();

        let vx = exposure_basis.dim();
        let vl = lag_basis.dim();
        for i in 0..2 {
            for t0 in 3..12 {
                for j in 0..vx {
                    for k in 0..vl {
                        let mut acc = 0.0;
                        for lag in 0..=3usize {
                            let bx = exposure_basis.eval(exposure[(i, t0 - lag)]).unwrap();
                            let bl = lag_basis.eval(lag as f64).unwrap();
                            acc += bx[j] * bl[k];
                        }
                        assert_abs_diff_eq!(
                            cb.row(i, t0)[j * vl + k],
                            acc,
                            epsilon = 1e-12
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn crossbasis_rejects_non_finite_exposure() {
        let mut exposure = Array2::from_elem((1, 6), 1.0);
        exposure[(0, 3)] = f64::NAN;
        let spec = CrossBasisSpec::new(1, linear_basis(0.0, 2.0), linear_basis(0.0, 1.0))
            .unwrap();
        assert!(matches!(
            build_crossbasis(&exposure, &spec),
            Err(SplineError::NonFiniteExposure { area: 0, time: 4 })
        ));
    }

    #[test]
    fn crossbasis_rejects_lag_knot_beyond_max_lag() {
        let lag_basis = SplineSpec::new(vec![4.0], (0.0, 8.0), true).unwrap();
        assert!(CrossBasisSpec::new(6, linear_basis(0.0, 1.0), lag_basis).is_err());
    }

    proptest! {
        /// Contraction with η is linear: b·(η₁+η₂) = b·η₁ + b·η₂, checked
        /// through s(x;η) sums over a random row.
        #[test]
        fn contraction_linear_in_eta(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let exposure = Array2::from_shape_fn((1, 8), |_| rng.random::<f64>());
            let exposure_basis = SplineSpec::new(vec![0.5], (0.0, 1.0), false).unwrap();
            let lag_basis = SplineSpec::new(vec![], (0.0, 2.0), true).unwrap();
            let spec = CrossBasisSpec::new(2, exposure_basis, lag_basis).unwrap();
            let cb = build_crossbasis(&exposure, &spec).unwrap();
            let p = cb.dim();
            let eta1: Vec<f64> = (0..p).map(|_| rng.random::<f64>() - 0.5).collect();
            let eta2: Vec<f64> = (0..p).map(|_| rng.random::<f64>() - 0.5).collect();
            for t0 in 2..8 {
                let row = cb.row(0, t0);
                let s1: f64 = row.iter().zip(&eta1).map(|(b, e)| b * e).sum();
                let s2: f64 = row.iter().zip(&eta2).map(|(b, e)| b * e).sum();
                let s12: f64 = row
                    .iter()
                    .zip(eta1.iter().zip(&eta2))
                    .map(|(b, (e1, e2))| b * (e1 + e2))
                    .sum();
                prop_assert!((s12 - (s1 + s2)).abs() < 1e-10);
            }
        }

        /// Natural tails: beyond the boundary knots every basis function is
        /// linear (finite-difference curvature below 1e−8).
        #[test]
        fn tails_are_linear(offset in 0.02f64..5.0, seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k1 = 0.2 + 0.3 * rng.random::<f64>();
            let k2 = k1 + 0.1 + 0.3 * rng.random::<f64>();
            let s = SplineSpec::new(vec![k1, k2], (0.0, 1.0), false).unwrap();
            for j in 0..s.dim() {
                for &x in &[1.0 + offset, -offset] {
                    // Stencil width 0.02 keeps cancellation noise well below
                    // the 1e−8 bound even far out in the tail; the tails are
                    // exactly polynomial-linear, so no truncation error.
                    let d2 = second_derivative_h(&s, x, j, 0, 0.02);
                    prop_assert!(d2.abs() < 1e-8, "curvature {} at {}", d2, x);
                }
            }
        }

        /// Shifting time labels does not change row values.
        #[test]
        fn shift_invariance(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let spec = CrossBasisSpec::new(
                2,
                SplineSpec::new(vec![0.5], (0.0, 1.0), false).unwrap(),
                SplineSpec::new(vec![], (0.0, 2.0), true).unwrap(),
            ).unwrap();
            let a = build_crossbasis(
                &Array2::from_shape_vec((1, 8), values[..8].to_vec()).unwrap(),
                &spec,
            ).unwrap();
            let b = build_crossbasis(
                &Array2::from_shape_vec((1, 10), values.clone()).unwrap(),
                &spec,
            ).unwrap();
            // Same underlying values at shifted positions give equal rows.
            for t0 in 2..8 {
                let ra = a.row(0, t0);
                let rb = b.row(0, t0);
                for (x, y) in ra.iter().zip(rb.iter()) {
                    prop_assert_eq!(x, y);
                }
            }
        }
    }
}
