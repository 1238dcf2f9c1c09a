//! Posterior products: relative-risk surfaces, cumulative relative risk,
//! WAIC, membership summaries with Shannon entropy, and random-effect
//! summaries.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ParameterState;
use crate::num::{log_sum_exp, quantile_sorted, Scalar};
use crate::spline::SplineError;
use crate::sampler::PosteriorDraws;
use crate::{CrossBasisSpec, Real};

#[derive(Error, Debug, PartialEq)]
pub enum OutputError {
    #[error("no posterior draws available")]
    EmptyDraws,
    #[error("WAIC needs at least 2 draws, got {0}")]
    NotEnoughDraws(usize),
    #[error("membership row is off the simplex by {0:e}")]
    OffSimplex(Real),
    #[error("cluster index {0} out of range for C = {1}")]
    ClusterOutOfRange(usize, usize),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

const LOWER_Q: f64 = 0.025;
const UPPER_Q: f64 = 0.975;

/// Posterior relative-risk surface over an exposure×lag grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RRSurface {
    pub exposure_grid: Vec<Real>,
    pub lag_grid: Vec<usize>,
    /// Posterior mean RR, indexed (exposure, lag).
    pub rr: Array2<Real>,
    pub rr_low: Array2<Real>,
    pub rr_high: Array2<Real>,
    /// Plug-in surface from the posterior-mean coefficients.
    pub rr_plugin: Array2<Real>,
    pub reference_value: Real,
    /// 0-based cluster index; `None` for the standard model's single surface.
    pub cluster: Option<usize>,
}

/// Cluster membership summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// n × C posterior membership probabilities P(z_i = c | Y).
    pub membership_probs: Array2<Real>,
    /// Posterior-mode assignment per area (0-based, lowest index on ties).
    pub map_assignment: Vec<usize>,
    /// Shannon entropy of each membership row, in bits.
    pub entropy: Vec<Real>,
}

/// WAIC decomposition (pWAIC2 effective-parameter form).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Waic {
    pub waic: Real,
    pub lppd: Real,
    pub p_waic2: Real,
}

/// Per-draw log relative risks at one grid point, shared by the surface and
/// cumulative-risk paths: log RR = Σ_j [Bx_j(x) − Bx_j(x_ref)]·Σ_k η_jk·Bl_k(ℓ).
fn log_rr_draws(
    draws: &PosteriorDraws,
    spec: &CrossBasisSpec,
    cluster: usize,
    reference: Real,
    exposure_grid: &[Real],
    lag_grid: &[usize],
) -> Result<Vec<Array2<Real>>, OutputError> {
    if draws.draws.is_empty() {
        return Err(OutputError::EmptyDraws);
    }
    let n_clusters = draws.draws[0].n_clusters();
    if cluster >= n_clusters {
        return Err(OutputError::ClusterOutOfRange(cluster, n_clusters));
    }
    let vx = spec.exposure_basis.dim();
    let vl = spec.lag_basis.dim();
    let bref = spec.exposure_basis.eval(reference)?;
    // Exposure-basis differences per grid point.
    let mut dx = Array2::zeros((exposure_grid.len(), vx));
    for (g, &x) in exposure_grid.iter().enumerate() {
        let bx = spec.exposure_basis.eval(x)?;
        for j in 0..vx {
            dx[(g, j)] = bx[j] - bref[j];
        }
    }
    let lag_table = spec.lag_table();
    let mut out = Vec::with_capacity(draws.draws.len());
    for st in &draws.draws {
        // m[j][ℓ] = Σ_k η_jk · Bl_k(ℓ)
        let mut m = Array2::zeros((vx, lag_grid.len()));
        for j in 0..vx {
            for (li, &lag) in lag_grid.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..vl {
                    acc += st.eta[(cluster, j * vl + k)] * lag_table[(lag, k)];
                }
                m[(j, li)] = acc;
            }
        }
        let mut lrr = Array2::zeros((exposure_grid.len(), lag_grid.len()));
        for g in 0..exposure_grid.len() {
            for li in 0..lag_grid.len() {
                let mut acc = 0.0;
                for j in 0..vx {
                    acc += dx[(g, j)] * m[(j, li)];
                }
                lrr[(g, li)] = acc;
            }
        }
        out.push(lrr);
    }
    Ok(out)
}

/// Relative-risk surface for one cluster, with draw-based bands and the
/// plug-in (posterior-mean coefficient) surface alongside.
pub fn rr_surface(
    draws: &PosteriorDraws,
    spec: &CrossBasisSpec,
    cluster: usize,
    reference: Real,
    exposure_grid: &[Real],
    lag_grid: &[usize],
) -> Result<RRSurface, OutputError> {
    let per_draw = log_rr_draws(draws, spec, cluster, reference, exposure_grid, lag_grid)?;
    let s = per_draw.len();
    let shape = (exposure_grid.len(), lag_grid.len());
    let mut rr = Array2::zeros(shape);
    let mut rr_low = Array2::zeros(shape);
    let mut rr_high = Array2::zeros(shape);
    let mut sample = vec![0.0; s];
    for g in 0..shape.0 {
        for li in 0..shape.1 {
            for (k, lrr) in per_draw.iter().enumerate() {
                sample[k] = lrr[(g, li)].exp();
            }
            rr[(g, li)] = sample.iter().sum::<Real>() / s as Real;
            sample.sort_by(|a, b| a.partial_cmp(b).expect("finite rr"));
            rr_low[(g, li)] = quantile_sorted(&sample, LOWER_Q);
            rr_high[(g, li)] = quantile_sorted(&sample, UPPER_Q);
        }
    }
    // Plug-in surface: same contraction at the posterior-mean η.
    let mean_state = posterior_mean_eta(draws);
    let plugin_draws = PosteriorDraws {
        draws: vec![mean_state],
        loglik: Array2::zeros((1, 0)),
        acceptance: Vec::new(),
        config: draws.config.clone(),
        warnings: Vec::new(),
    };
    let plugin =
        log_rr_draws(&plugin_draws, spec, cluster, reference, exposure_grid, lag_grid)?;
    let rr_plugin = plugin[0].mapv(Real::exp);
    Ok(RRSurface {
        exposure_grid: exposure_grid.to_vec(),
        lag_grid: lag_grid.to_vec(),
        rr,
        rr_low,
        rr_high,
        rr_plugin,
        reference_value: reference,
        cluster: if draws.draws[0].n_clusters() > 1 {
            Some(cluster)
        } else {
            None
        },
    })
}

fn posterior_mean_eta(draws: &PosteriorDraws) -> ParameterState {
    let mut mean = draws.draws[0].clone();
    let s = draws.draws.len() as Real;
    let mut eta: Array2<Real> = Array2::zeros(mean.eta.dim());
    for st in &draws.draws {
        eta = eta + &st.eta;
    }
    mean.eta = eta.mapv(|v| v / s);
    mean
}

/// Cumulative relative-risk curve over all lags 0..=L with a 95% band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CumulativeRR {
    pub exposure_grid: Vec<Real>,
    pub rr: Vec<Real>,
    pub rr_low: Vec<Real>,
    pub rr_high: Vec<Real>,
    pub reference_value: Real,
    pub cluster: Option<usize>,
}

pub fn cumulative_rr(
    draws: &PosteriorDraws,
    spec: &CrossBasisSpec,
    cluster: usize,
    reference: Real,
    exposure_grid: &[Real],
) -> Result<CumulativeRR, OutputError> {
    let lag_grid: Vec<usize> = (0..=spec.max_lag).collect();
    let per_draw = log_rr_draws(draws, spec, cluster, reference, exposure_grid, &lag_grid)?;
    let s = per_draw.len();
    let mut rr = vec![0.0; exposure_grid.len()];
    let mut rr_low = vec![0.0; exposure_grid.len()];
    let mut rr_high = vec![0.0; exposure_grid.len()];
    let mut sample = vec![0.0; s];
    for g in 0..exposure_grid.len() {
        for (k, lrr) in per_draw.iter().enumerate() {
            let log_cum: Real = (0..lag_grid.len()).map(|li| lrr[(g, li)]).sum();
            sample[k] = log_cum.exp();
        }
        rr[g] = sample.iter().sum::<Real>() / s as Real;
        sample.sort_by(|a, b| a.partial_cmp(b).expect("finite rr"));
        rr_low[g] = quantile_sorted(&sample, LOWER_Q);
        rr_high[g] = quantile_sorted(&sample, UPPER_Q);
    }
    Ok(CumulativeRR {
        exposure_grid: exposure_grid.to_vec(),
        rr,
        rr_low,
        rr_high,
        reference_value: reference,
        cluster: if draws.draws[0].n_clusters() > 1 {
            Some(cluster)
        } else {
            None
        },
    })
}

/// WAIC with the pWAIC2 penalty: lppd = Σ_obs ln(mean_s exp ll) via
/// log-sum-exp, p = Σ_obs var_s(ll) with the S−1 denominator,
/// waic = −2(lppd − p).
pub fn waic(loglik: &ArrayView2<Real>) -> Result<Waic, OutputError> {
    let s = loglik.nrows();
    if s < 2 {
        return Err(OutputError::NotEnoughDraws(s));
    }
    let (lppd, p) = waic_pointwise(loglik)?
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (l, p)| (a + l, b + p));
    Ok(Waic {
        waic: -2.0 * (lppd - p),
        lppd,
        p_waic2: p,
    })
}

/// Per-observation (lppd_i, p_i) pairs; the basis for WAIC differences.
pub fn waic_pointwise(loglik: &ArrayView2<Real>) -> Result<Vec<(Real, Real)>, OutputError> {
    let s = loglik.nrows();
    if s < 2 {
        return Err(OutputError::NotEnoughDraws(s));
    }
    let ln_s = (s as Real).ln();
    let mut out = Vec::with_capacity(loglik.ncols());
    let mut col = vec![0.0; s];
    for o in 0..loglik.ncols() {
        for k in 0..s {
            col[k] = loglik[(k, o)];
        }
        let lppd_i = log_sum_exp(&col) - ln_s;
        let mean = col.iter().sum::<Real>() / s as Real;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / (s as Real - 1.0);
        out.push((lppd_i, var));
    }
    Ok(out)
}

/// Difference in WAIC (a − b) with its standard error
/// √(N·var(waic_i^a − waic_i^b)).
pub fn waic_difference(
    a: &ArrayView2<Real>,
    b: &ArrayView2<Real>,
) -> Result<(Real, Real), OutputError> {
    let pa = waic_pointwise(a)?;
    let pb = waic_pointwise(b)?;
    assert_eq!(pa.len(), pb.len(), "loglik matrices cover different data");
    let n = pa.len();
    let diffs: Vec<Real> = pa
        .iter()
        .zip(&pb)
        .map(|((la, va), (lb, vb))| -2.0 * (la - va) + 2.0 * (lb - vb))
        .collect();
    let total: Real = diffs.iter().sum();
    let mean = total / n as Real;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<Real>() / (n as Real - 1.0);
    Ok((total, (n as Real * var).sqrt()))
}

/// Shannon entropy of a membership row, in bits; 0·log₂0 = 0.
pub fn entropy<S: Scalar>(membership_row: &[S]) -> Result<S, OutputError> {
    let total: S = membership_row.iter().copied().sum();
    let dev = (total - S::one()).abs();
    if dev > S::c(1e-9) || membership_row.iter().any(|p| *p < S::zero()) {
        return Err(OutputError::OffSimplex(dev.to_f64().unwrap_or(f64::NAN)));
    }
    let ln2 = S::c(std::f64::consts::LN_2);
    let mut h = S::zero();
    for &p in membership_row {
        if p > S::zero() {
            h = h - p * (p.ln() / ln2);
        }
    }
    Ok(h)
}

/// Membership probabilities, modal assignment, and entropy from relabeled
/// draws. Probabilities are the fraction of retained draws assigning each
/// area to each cluster.
pub fn cluster_summary(draws: &PosteriorDraws) -> Result<ClusterSummary, OutputError> {
    if draws.draws.is_empty() {
        return Err(OutputError::EmptyDraws);
    }
    let n = draws.draws[0].z.len();
    let n_clusters = draws.draws[0].n_clusters();
    let s = draws.draws.len() as Real;
    let mut probs = Array2::zeros((n, n_clusters));
    for st in &draws.draws {
        for (i, &zi) in st.z.iter().enumerate() {
            probs[(i, zi)] += 1.0 / s;
        }
    }
    let mut map_assignment = vec![0usize; n];
    let mut ent = vec![0.0; n];
    for i in 0..n {
        let row: Vec<Real> = (0..n_clusters).map(|c| probs[(i, c)]).collect();
        let mut best = 0usize;
        for (c, p) in row.iter().enumerate() {
            if *p > row[best] {
                best = c;
            }
        }
        map_assignment[i] = best;
        ent[i] = entropy(&row)?;
    }
    Ok(ClusterSummary {
        membership_probs: probs,
        map_assignment,
        entropy: ent,
    })
}

/// Posterior mean and 95% band for one scalar series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mean: Real,
    pub low: Real,
    pub high: Real,
}

fn summarize(sample: &mut [Real]) -> SummaryRow {
    let mean = sample.iter().sum::<Real>() / sample.len() as Real;
    sample.sort_by(|a, b| a.partial_cmp(b).expect("finite sample"));
    SummaryRow {
        mean,
        low: quantile_sorted(sample, LOWER_Q),
        high: quantile_sorted(sample, UPPER_Q),
    }
}

/// Per-area summaries of u_i + v_i and per-time summaries of γ_t.
pub fn effect_summaries(
    draws: &PosteriorDraws,
) -> Result<(Vec<SummaryRow>, Vec<SummaryRow>), OutputError> {
    if draws.draws.is_empty() {
        return Err(OutputError::EmptyDraws);
    }
    let n = draws.draws[0].u.len();
    let t_len = draws.draws[0].gamma.len();
    let s = draws.draws.len();
    let mut spatial = Vec::with_capacity(n);
    let mut sample = vec![0.0; s];
    for i in 0..n {
        for (k, st) in draws.draws.iter().enumerate() {
            sample[k] = st.u[i] + st.v[i];
        }
        spatial.push(summarize(&mut sample));
    }
    let mut temporal = Vec::with_capacity(t_len);
    for t0 in 0..t_len {
        for (k, st) in draws.draws.iter().enumerate() {
            sample[k] = st.gamma[t0];
        }
        temporal.push(summarize(&mut sample));
    }
    Ok((spatial, temporal))
}

/// Effective sample size from the initial positive autocorrelation sum:
/// N / (1 + 2·Σ ρ_k), truncated when ρ_k drops below 0.05.
pub fn effective_sample_size(chain: &[Real]) -> Real {
    let n = chain.len();
    if n < 2 {
        return n as Real;
    }
    let mean = chain.iter().sum::<Real>() / n as Real;
    let var = chain.iter().map(|x| (x - mean) * (x - mean)).sum::<Real>() / n as Real;
    if var <= 0.0 {
        return n as Real;
    }
    let mut rho_sum = 0.0;
    for k in 1..=(n / 2).min(200) {
        let cov: Real = (0..n - k)
            .map(|i| (chain[i] - mean) * (chain[i + k] - mean))
            .sum::<Real>()
            / (n - k) as Real;
        let rho = cov / var;
        if rho < 0.05 {
            break;
        }
        rho_sum += rho;
    }
    n as Real / (1.0 + 2.0 * rho_sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParameterState;
    use crate::sampler::{PosteriorDraws, SamplerConfig};
    use crate::spline::SplineSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn draws_from_etas(etas: Vec<Vec<Real>>, n_clusters: usize) -> PosteriorDraws {
        let p = etas[0].len() / n_clusters;
        let draws = etas
            .into_iter()
            .map(|flat| {
                let mut st = ParameterState::zeros(2, 4, n_clusters, p, false);
                st.eta = Array2::from_shape_vec((n_clusters, p), flat).unwrap();
                st
            })
            .collect();
        PosteriorDraws {
            draws,
            loglik: Array2::zeros((0, 0)),
            acceptance: Vec::new(),
            config: SamplerConfig::default(),
            warnings: Vec::new(),
        }
    }

    fn linear_spec() -> CrossBasisSpec {
        // v_x = 1 linear exposure basis; v_ℓ = 2 ({1, ℓ}); only the
        // intercept column is exercised below by zeroing the slope entry.
        CrossBasisSpec::new(
            2,
            SplineSpec::new(vec![], (0.0, 1.0), false).unwrap(),
            SplineSpec::new(vec![], (0.0, 2.0), true).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rr_is_one_at_reference_with_zero_width() {
        let spec = linear_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let etas: Vec<Vec<Real>> = (0..20)
            .map(|_| vec![rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5])
            .collect();
        let draws = draws_from_etas(etas, 1);
        let grid = vec![0.1, 0.4, 0.8];
        let lags = vec![0, 1, 2];
        let surf = rr_surface(&draws, &spec, 0, 0.4, &grid, &lags).unwrap();
        for li in 0..lags.len() {
            assert_eq!(surf.rr[(1, li)], 1.0);
            assert_eq!(surf.rr_low[(1, li)], 1.0);
            assert_eq!(surf.rr_high[(1, li)], 1.0);
            assert_eq!(surf.rr_plugin[(1, li)], 1.0);
        }
    }

    #[test]
    fn rr_is_one_everywhere_with_zero_eta() {
        let spec = linear_spec();
        let draws = draws_from_etas(vec![vec![0.0, 0.0]; 5], 1);
        let surf = rr_surface(&draws, &spec, 0, 0.3, &[0.1, 0.5], &[0, 1]).unwrap();
        assert!(surf.rr.iter().all(|&v| v == 1.0));
        assert!(surf.rr_low.iter().all(|&v| v == 1.0));
        assert!(surf.rr_high.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rr_closed_form_linear_basis() {
        // Single draw, exposure basis = x, constant-in-lag via the intercept
        // column (slope entry zero): RR(x, ℓ) = exp(β(x − x_ref)).
        let spec = linear_spec();
        let beta = 0.7;
        let draws = draws_from_etas(vec![vec![beta, 0.0]], 1);
        let x_ref = 0.25;
        let grid = vec![0.1, 0.25, 0.5, 0.9];
        let surf = rr_surface(&draws, &spec, 0, x_ref, &grid, &[0, 1, 2]).unwrap();
        for (g, &x) in grid.iter().enumerate() {
            for li in 0..3 {
                let expect = (beta * (x - x_ref)).exp();
                assert_abs_diff_eq!(surf.rr[(g, li)], expect, epsilon = 1e-10);
            }
        }
        // Cumulative follows the closed form exp((L+1)·β(x−x_ref)).
        let cum = cumulative_rr(&draws, &spec, 0, x_ref, &grid).unwrap();
        for (g, &x) in grid.iter().enumerate() {
            let expect = (3.0 * beta * (x - x_ref)).exp();
            assert_abs_diff_eq!(cum.rr[g], expect, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(cum.rr[1], 1.0, epsilon = 0.0);
    }

    #[test]
    fn rr_invariant_to_alpha_shift() {
        let spec = linear_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let etas: Vec<Vec<Real>> =
            (0..10).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let mut draws = draws_from_etas(etas, 1);
        let grid = vec![0.2, 0.6];
        let a = rr_surface(&draws, &spec, 0, 0.2, &grid, &[0, 1]).unwrap();
        for st in draws.draws.iter_mut() {
            st.alpha += 3.7;
        }
        let b = rr_surface(&draws, &spec, 0, 0.2, &grid, &[0, 1]).unwrap();
        assert_eq!(a.rr, b.rr);
        assert_eq!(a.rr_low, b.rr_low);
    }

    #[test]
    fn cumulative_equals_product_over_lags_per_draw() {
        let spec = linear_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let eta: Vec<Real> = vec![rng.random::<f64>(), rng.random::<f64>() - 0.5];
        let draws = draws_from_etas(vec![eta], 1);
        let grid = vec![0.15, 0.85];
        let lags: Vec<usize> = (0..=2).collect();
        let surf = rr_surface(&draws, &spec, 0, 0.5, &grid, &lags).unwrap();
        let cum = cumulative_rr(&draws, &spec, 0, 0.5, &grid).unwrap();
        for g in 0..grid.len() {
            let product: Real = (0..lags.len()).map(|li| surf.rr[(g, li)]).product();
            assert_abs_diff_eq!(cum.rr[g], product, epsilon = 1e-12);
        }
    }

    #[test]
    fn rr_rejects_empty_draws() {
        let spec = linear_spec();
        let draws = PosteriorDraws {
            draws: Vec::new(),
            loglik: Array2::zeros((0, 0)),
            acceptance: Vec::new(),
            config: SamplerConfig::default(),
            warnings: Vec::new(),
        };
        assert!(matches!(
            rr_surface(&draws, &spec, 0, 0.5, &[0.5], &[0]),
            Err(OutputError::EmptyDraws)
        ));
    }

    #[test]
    fn waic_identical_draws_have_zero_penalty() {
        let row = [(-1.2f64), -0.4, -2.2];
        let mut ll = Array2::zeros((3, 3));
        for k in 0..3 {
            for o in 0..3 {
                ll[(k, o)] = row[o];
            }
        }
        let w = waic(&ll.view()).unwrap();
        assert_abs_diff_eq!(w.p_waic2, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.waic, -2.0 * row.iter().sum::<f64>(), epsilon = 1e-10);
    }

    #[test]
    fn waic_two_draw_hand_computation() {
        // 1 observation, draws ln 0.5 and ln 0.25.
        let ll = Array2::from_shape_vec((2, 1), vec![0.5f64.ln(), 0.25f64.ln()]).unwrap();
        let w = waic(&ll.view()).unwrap();
        let lppd = 0.375f64.ln();
        let p = (2.0f64.ln().powi(2)) / 2.0; // var of {ln.5, ln.25}, S−1 = 1
        assert_abs_diff_eq!(w.lppd, lppd, epsilon = 1e-12);
        assert_abs_diff_eq!(w.p_waic2, p, epsilon = 1e-12);
        assert_abs_diff_eq!(w.waic, -2.0 * (lppd - p), epsilon = 1e-12);
    }

    #[test]
    fn waic_matches_naive_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let ll = Array2::from_shape_fn((5, 10), |_| -3.0 * rng.random::<f64>());
        let w = waic(&ll.view()).unwrap();
        let (mut lppd, mut p) = (0.0, 0.0);
        for o in 0..10 {
            let col: Vec<f64> = (0..5).map(|k| ll[(k, o)]).collect();
            let mean_exp = col.iter().map(|v| v.exp()).sum::<f64>() / 5.0;
            lppd += mean_exp.ln();
            let m = col.iter().sum::<f64>() / 5.0;
            p += col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0;
        }
        assert_abs_diff_eq!(w.lppd, lppd, epsilon = 1e-12);
        assert_abs_diff_eq!(w.p_waic2, p, epsilon = 1e-12);
        assert_abs_diff_eq!(w.waic, -2.0 * (lppd - p), epsilon = 1e-12);
    }

    #[test]
    fn waic_duplication_consistency() {
        // Duplicating every draw keeps lppd identical and the penalty equal
        // once both are converted to the population-variance convention.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s = 6;
        let ll = Array2::from_shape_fn((s, 4), |_| -2.0 * rng.random::<f64>());
        let mut dup = Array2::zeros((2 * s, 4));
        for k in 0..s {
            for o in 0..4 {
                dup[(k, o)] = ll[(k, o)];
                dup[(k + s, o)] = ll[(k, o)];
            }
        }
        let a = waic(&ll.view()).unwrap();
        let b = waic(&dup.view()).unwrap();
        assert_abs_diff_eq!(a.lppd, b.lppd, epsilon = 1e-12);
        let pop_a = a.p_waic2 * (s as f64 - 1.0) / s as f64;
        let pop_b = b.p_waic2 * (2.0 * s as f64 - 1.0) / (2.0 * s as f64);
        assert_abs_diff_eq!(pop_a, pop_b, epsilon = 1e-12);
    }

    #[test]
    fn waic_needs_two_draws() {
        let ll = Array2::zeros((1, 3));
        assert!(matches!(
            waic(&ll.view()),
            Err(OutputError::NotEnoughDraws(1))
        ));
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(entropy(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            entropy(&[0.2, 0.2, 0.2, 0.2, 0.2]).unwrap(),
            2.321928,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(entropy(&[0.5, 0.5, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(entropy(&[0.5, 0.4]).is_err());
    }

    #[test]
    fn cluster_summary_counting() {
        let n_clusters = 3;
        let p = 1;
        let mut states = Vec::new();
        // Area 0 always cluster 2; area 1 split between 0 and 1 evenly.
        for k in 0..4 {
            let mut st = ParameterState::zeros(2, 4, n_clusters, p, false);
            st.z = vec![2, k % 2];
            states.push(st);
        }
        let draws = PosteriorDraws {
            draws: states,
            loglik: Array2::zeros((0, 0)),
            acceptance: Vec::new(),
            config: SamplerConfig::default(),
            warnings: Vec::new(),
        };
        let cs = cluster_summary(&draws).unwrap();
        assert_abs_diff_eq!(cs.membership_probs[(0, 2)], 1.0);
        assert_eq!(cs.map_assignment[0], 2);
        assert_abs_diff_eq!(cs.entropy[0], 0.0);
        assert_abs_diff_eq!(cs.membership_probs[(1, 0)], 0.5);
        assert_abs_diff_eq!(cs.membership_probs[(1, 1)], 0.5);
        // Tie-break: lowest cluster index.
        assert_eq!(cs.map_assignment[1], 0);
        assert_abs_diff_eq!(cs.entropy[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cluster_summary_matches_frequency_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let n = 5;
        let n_clusters = 3;
        let s = 40;
        let mut states = Vec::new();
        let mut counts = vec![vec![0usize; n_clusters]; n];
        for _ in 0..s {
            let mut st = ParameterState::zeros(n, 4, n_clusters, 1, false);
            for i in 0..n {
                st.z[i] = rng.random_range(0..n_clusters);
                counts[i][st.z[i]] += 1;
            }
            states.push(st);
        }
        let draws = PosteriorDraws {
            draws: states,
            loglik: Array2::zeros((0, 0)),
            acceptance: Vec::new(),
            config: SamplerConfig::default(),
            warnings: Vec::new(),
        };
        let cs = cluster_summary(&draws).unwrap();
        for i in 0..n {
            for c in 0..n_clusters {
                assert_abs_diff_eq!(
                    cs.membership_probs[(i, c)],
                    counts[i][c] as f64 / s as f64,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn effect_summaries_single_and_symmetric() {
        let mut st = ParameterState::zeros(3, 4, 1, 1, false);
        st.u = vec![0.1, -0.2, 0.4];
        st.v = vec![0.0, 0.1, -0.1];
        st.gamma = vec![0.3, -0.3, 0.0, 0.1];
        let single = PosteriorDraws {
            draws: vec![st.clone()],
            loglik: Array2::zeros((0, 0)),
            acceptance: Vec::new(),
            config: SamplerConfig::default(),
            warnings: Vec::new(),
        };
        let (sp, tmp_t) = effect_summaries(&single).unwrap();
        assert_abs_diff_eq!(sp[2].mean, 0.3, epsilon = 1e-12);
        assert_eq!(sp[2].low, sp[2].high);
        assert_abs_diff_eq!(tmp_t[0].mean, 0.3);

        let mut neg = st.clone();
        neg.u.iter_mut().for_each(|x| *x = -*x);
        neg.v.iter_mut().for_each(|x| *x = -*x);
        neg.gamma.iter_mut().for_each(|x| *x = -*x);
        let pair = PosteriorDraws {
            draws: vec![st, neg],
            loglik: Array2::zeros((0, 0)),
            acceptance: Vec::new(),
            config: SamplerConfig::default(),
            warnings: Vec::new(),
        };
        let (sp, _) = effect_summaries(&pair).unwrap();
        for row in &sp {
            assert_abs_diff_eq!(row.mean, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn effect_quantiles_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = 23;
        let states: Vec<ParameterState> = (0..s)
            .map(|_| {
                let mut st = ParameterState::zeros(1, 3, 1, 1, false);
                st.u[0] = rng.random::<f64>();
                st
            })
            .collect();
        let us: Vec<f64> = states.iter().map(|st| st.u[0] + st.v[0]).collect();
        let draws = PosteriorDraws {
            draws: states,
            loglik: Array2::zeros((0, 0)),
            acceptance: Vec::new(),
            config: SamplerConfig::default(),
            warnings: Vec::new(),
        };
        let (sp, _) = effect_summaries(&draws).unwrap();
        let mut sorted = us.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_abs_diff_eq!(sp[0].low, quantile_sorted(&sorted, 0.025), epsilon = 1e-12);
        assert_abs_diff_eq!(sp[0].high, quantile_sorted(&sorted, 0.975), epsilon = 1e-12);
    }

    #[test]
    fn ess_detects_autocorrelation() {
        let iid: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..400).map(|_| rng.random::<f64>()).collect()
        };
        let ess_iid = effective_sample_size(&iid);
        assert!(ess_iid > 200.0, "iid ESS {ess_iid}");
        // Strongly autocorrelated chain.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = 0.0;
        let slow: Vec<f64> = (0..400)
            .map(|_| {
                x = 0.95 * x + rng.random::<f64>() - 0.5;
                x
            })
            .collect();
        let ess_slow = effective_sample_size(&slow);
        assert!(ess_slow < ess_iid / 3.0, "slow ESS {ess_slow} vs {ess_iid}");
    }

    proptest! {
        /// Entropy is permutation-invariant and maximal at the uniform row.
        #[test]
        fn entropy_properties(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = 2 + (seed as usize % 5);
            let mut row: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 0.01).collect();
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            let h = entropy(&row).unwrap();
            let mut shuffled = row.clone();
            shuffled.shuffle(&mut rng);
            let h2 = entropy(&shuffled).unwrap();
            prop_assert!((h - h2).abs() < 1e-12);
            let uniform = vec![1.0 / c as f64; c];
            let hu = entropy(&uniform).unwrap();
            prop_assert!(h <= hu + 1e-12);
            prop_assert!(h >= -1e-12 && hu <= (c as f64).log2() + 1e-12);
        }
    }
}
