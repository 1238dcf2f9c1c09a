//! Model state, priors, and likelihood for the three model variants.
//!
//! The observation model is a negative binomial with mean λ and dispersion
//! r (success probability p = r/(r+λ), variance λ(λ+r)/r). The linear
//! predictor is
//!
//! ```text
//! log λ_it(c) = log N_i + α + b_itᵀη_c + u_i + v_i + γ_t
//! ```
//!
//! with a BYM pair (intrinsic CAR `u`, iid `v`) over areas and a
//! second-order random walk `γ` over times. Mixture variants draw a cluster
//! label z_i per area; cluster membership probabilities q_i are Dirichlet
//! (flat variant) or a softmax of per-cluster BYM fields (spatial variant).

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{pairwise_difference_sum, AdjacencyGraph};
use crate::num::{softmax, Scalar};
use crate::spline::{CrossBasis, CrossBasisSpec};
use crate::Real;

#[derive(Error, Debug, PartialEq)]
pub enum ModelError {
    #[error("mean parameter must be positive and finite, got {0}")]
    BadMean(f64),
    #[error("dispersion parameter must be positive and finite, got {0}")]
    BadDispersion(f64),
    #[error("time {0} is outside the valid range {1}..={2} (1-based)")]
    TimeOutOfRange(usize, usize, usize),
    #[error("cluster index {0} out of range for C = {1}")]
    ClusterOutOfRange(usize, usize),
    #[error("area index {0} out of range for n = {1}")]
    AreaOutOfRange(usize, usize),
    #[error("offset for area {0} must be positive and finite, got {1}")]
    BadOffset(usize, f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("standard model requires C = 1, got {0}")]
    StandardNeedsSingleCluster(usize),
    #[error("cluster count must be at least 1")]
    NoClusters,
}

/// Areal count panel: counts, exposure, offsets, and the adjacency graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PanelDataset {
    pub area_ids: Vec<String>,
    /// n × T counts.
    pub y: Array2<u64>,
    /// n × T exposure.
    pub x: Array2<Real>,
    /// Per-area population offsets N_i.
    pub offsets: Vec<Real>,
    pub graph: AdjacencyGraph,
}

impl PanelDataset {
    pub fn new(
        area_ids: Vec<String>,
        y: Array2<u64>,
        x: Array2<Real>,
        offsets: Vec<Real>,
        graph: AdjacencyGraph,
    ) -> Result<Self, ModelError> {
        let n = y.nrows();
        if x.dim() != y.dim() {
            return Err(ModelError::DimensionMismatch(format!(
                "exposure is {:?} but counts are {:?}",
                x.dim(),
                y.dim()
            )));
        }
        if area_ids.len() != n || offsets.len() != n || graph.n() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "areas: ids {}, offsets {}, graph {}, counts {}",
                area_ids.len(),
                offsets.len(),
                graph.n(),
                n
            )));
        }
        for (i, &o) in offsets.iter().enumerate() {
            if !(o > 0.0 && o.is_finite()) {
                return Err(ModelError::BadOffset(i, o));
            }
        }
        Ok(Self {
            area_ids,
            y,
            x,
            offsets,
            graph,
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn t_len(&self) -> usize {
        self.y.ncols()
    }
}

/// Prior hyperparameters shared by all variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Gamma shape for the dispersion r.
    pub r_shape: Real,
    /// Gamma rate for the dispersion r.
    pub r_rate: Real,
    /// Normal sd of the intercept prior (variance 100 ⇒ sd 10).
    pub alpha_sd: Real,
    /// Normal sd of every cross-basis coefficient.
    pub eta_sd: Real,
    /// Uniform upper bound for σ_u.
    pub sigma_u_upper: Real,
    /// Uniform upper bound for σ_v.
    pub sigma_v_upper: Real,
    /// Uniform upper bound for σ_γ.
    pub sigma_gamma_upper: Real,
    /// HalfNormal scale for the assignment-field sds (spatial variant).
    pub assignment_sd_scale: Real,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            r_shape: 0.001,
            r_rate: 0.001,
            alpha_sd: 10.0,
            eta_sd: 100.0,
            sigma_u_upper: 10.0,
            sigma_v_upper: 10.0,
            sigma_gamma_upper: 10.0,
            assignment_sd_scale: 1.0,
        }
    }
}

/// Model variant: one shared surface, or a C-component mixture with flat or
/// spatially-smoothed cluster assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Standard,
    MixtureFlat,
    MixtureSpatial,
}

impl Variant {
    pub fn is_mixture(self) -> bool {
        !matches!(self, Variant::Standard)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::MixtureFlat => "mixture-flat",
            Variant::MixtureSpatial => "mixture-spatial",
        }
    }
}

/// Full model specification.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub n_clusters: usize,
    pub crossbasis: CrossBasisSpec<Real>,
    pub priors: PriorSpec,
}

impl ModelSpec {
    /// Validate the variant/cluster-count pairing. Mixture variants with
    /// C = 1 are allowed at this level (they collapse to the standard
    /// model); the CLI layer additionally requires C ≥ 2 for mixtures.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_clusters == 0 {
            return Err(ModelError::NoClusters);
        }
        if self.variant == Variant::Standard && self.n_clusters != 1 {
            return Err(ModelError::StandardNeedsSingleCluster(self.n_clusters));
        }
        Ok(())
    }
}

/// One full point in parameter space.
///
/// The dispersion is stored on the log scale (`log_r`), which keeps the
/// heavy lower tail of its Gamma(0.001, 0.001) prior representable; `r()`
/// recovers the natural-scale value. Cluster labels `z` are 0-based. In the
/// spatial variant the last cluster's assignment fields are pinned to zero
/// (reference category), so only rows 0..C−1 of `assignment_u`/`assignment_v`
/// are ever updated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub alpha: Real,
    pub log_r: Real,
    /// C × p cross-basis coefficients, one row per cluster.
    pub eta: Array2<Real>,
    pub u: Vec<Real>,
    pub v: Vec<Real>,
    pub gamma: Vec<Real>,
    pub sigma_u: Real,
    pub sigma_v: Real,
    pub sigma_gamma: Real,
    /// Cluster label per area, 0-based.
    pub z: Vec<usize>,
    /// n × C membership probabilities, each row on the simplex.
    pub q: Array2<Real>,
    /// C × n structured assignment fields (spatial variant; empty otherwise).
    pub assignment_u: Array2<Real>,
    /// C × n unstructured assignment fields (spatial variant).
    pub assignment_v: Array2<Real>,
    pub sigma_uc: Vec<Real>,
    pub sigma_vc: Vec<Real>,
}

impl ParameterState {
    /// Zero-initialized state of the right shape; σ's start at 1, q uniform.
    pub fn zeros(n: usize, t_len: usize, n_clusters: usize, p: usize, spatial: bool) -> Self {
        let (fu, fv) = if spatial {
            (
                Array2::zeros((n_clusters, n)),
                Array2::zeros((n_clusters, n)),
            )
        } else {
            (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
        };
        Self {
            alpha: 0.0,
            log_r: 0.0,
            eta: Array2::zeros((n_clusters, p)),
            u: vec![0.0; n],
            v: vec![0.0; n],
            gamma: vec![0.0; t_len],
            sigma_u: 1.0,
            sigma_v: 1.0,
            sigma_gamma: 1.0,
            z: vec![0; n],
            q: Array2::from_elem((n, n_clusters), 1.0 / n_clusters as Real),
            assignment_u: fu,
            assignment_v: fv,
            sigma_uc: vec![1.0; if spatial { n_clusters } else { 0 }],
            sigma_vc: vec![1.0; if spatial { n_clusters } else { 0 }],
        }
    }

    /// Dispersion on the natural scale.
    pub fn r(&self) -> Real {
        self.log_r.exp()
    }

    pub fn n_clusters(&self) -> usize {
        self.eta.nrows()
    }
}

/// Log pmf of the negative binomial with mean `lambda` and dispersion `r`.
///
/// With p = r/(r+λ): log Γ(y+r) − log Γ(r) − log y! + r·log p + y·log(1−p).
/// Approaches the Poisson(λ) log pmf as r → ∞.
pub fn nb_log_pmf<S: Scalar>(y: u64, lambda: S, r: S) -> Result<S, ModelError> {
    if !(lambda > S::zero() && lambda.is_finite()) {
        return Err(ModelError::BadMean(lambda.to_f64().unwrap_or(f64::NAN)));
    }
    if !(r > S::zero() && r.is_finite()) {
        return Err(ModelError::BadDispersion(r.to_f64().unwrap_or(f64::NAN)));
    }
    let yf = S::c(y as f64);
    let ln_y_fact = (yf + S::one()).gamma_ln();
    Ok(nb_log_pmf_core(
        yf,
        lambda.ln(),
        r,
        r.ln(),
        r.gamma_ln(),
        ln_y_fact,
    ))
}

/// Shared NB kernel on the log-mean scale. All likelihood evaluations in the
/// crate route through this so different call sites agree bit-for-bit.
#[inline]
pub fn nb_log_pmf_core<S: Scalar>(
    y: S,
    ln_lambda: S,
    r: S,
    ln_r: S,
    ln_gamma_r: S,
    ln_y_factorial: S,
) -> S {
    // ln(r+λ) from the log-scale pieces, stable for extreme imbalance.
    let m = if ln_r > ln_lambda { ln_r } else { ln_lambda };
    let ln_r_plus_lambda = m + ((ln_r - m).exp() + (ln_lambda - m).exp()).ln();
    (y + r).gamma_ln() - ln_gamma_r - ln_y_factorial
        + r * (ln_r - ln_r_plus_lambda)
        + y * (ln_lambda - ln_r_plus_lambda)
}

/// Linear predictor log λ_it(c) for 1-based time `t`.
pub fn linear_predictor(
    state: &ParameterState,
    dataset: &PanelDataset,
    crossbasis: &CrossBasis<Real>,
    area: usize,
    t: usize,
    cluster: usize,
) -> Result<Real, ModelError> {
    let (t_min, t_max) = crossbasis.valid_time_range();
    if t < t_min || t > t_max {
        return Err(ModelError::TimeOutOfRange(t, t_min, t_max));
    }
    if area >= dataset.n() {
        return Err(ModelError::AreaOutOfRange(area, dataset.n()));
    }
    if cluster >= state.n_clusters() {
        return Err(ModelError::ClusterOutOfRange(cluster, state.n_clusters()));
    }
    let t0 = t - 1;
    let row = crossbasis.row(area, t0);
    let s_xb: Real = row
        .iter()
        .zip(state.eta.row(cluster).iter())
        .map(|(b, e)| b * e)
        .sum();
    Ok(ln_mean(
        dataset.offsets[area].ln(),
        state.alpha,
        s_xb,
        state.u[area],
        state.v[area],
        state.gamma[t0],
    ))
}

/// The linear-predictor formula itself; every evaluation path uses this.
#[inline]
pub fn ln_mean(
    ln_offset: Real,
    alpha: Real,
    s_xb: Real,
    u_i: Real,
    v_i: Real,
    gamma_t: Real,
) -> Real {
    ln_offset + alpha + s_xb + u_i + v_i + gamma_t
}

/// Log likelihood of area `i` under cluster `c`, summed over valid times.
pub fn area_cluster_loglik(
    state: &ParameterState,
    dataset: &PanelDataset,
    crossbasis: &CrossBasis<Real>,
    area: usize,
    cluster: usize,
) -> Result<Real, ModelError> {
    let (t_min, t_max) = crossbasis.valid_time_range();
    let r = state.r();
    let ln_r = state.log_r;
    let ln_gamma_r = r.gamma_ln();
    let mut total = 0.0;
    for t in t_min..=t_max {
        let ln_lambda = linear_predictor(state, dataset, crossbasis, area, t, cluster)?;
        let y = dataset.y[(area, t - 1)] as Real;
        let ln_y_fact = (y + 1.0).gamma_ln();
        total += nb_log_pmf_core(y, ln_lambda, r, ln_r, ln_gamma_r, ln_y_fact);
    }
    Ok(total)
}

/// Membership probabilities at area `i`: softmax over clusters of
/// u_i^c + v_i^c.
pub fn assignment_probabilities(
    assignment_u: &Array2<Real>,
    assignment_v: &Array2<Real>,
    area: usize,
) -> Vec<Real> {
    let n_clusters = assignment_u.nrows();
    let logits: Vec<Real> = (0..n_clusters)
        .map(|c| assignment_u[(c, area)] + assignment_v[(c, area)])
        .collect();
    softmax(&logits)
}

/// Sum of squared second differences of the temporal effect.
pub fn rw2_penalty(gamma: &[Real]) -> Real {
    gamma
        .windows(3)
        .map(|w| {
            let d = w[2] - 2.0 * w[1] + w[0];
            d * d
        })
        .sum()
}

fn ln_normal(x: Real, sd: Real) -> Real {
    let z = x / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn ln_half_normal(x: Real, scale: Real) -> Real {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = x / scale;
    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln() - 0.5 * z * z
}

/// Gaussian Markov random field term at a stated rank:
/// −(rank/2)·ln(2πσ²) − s/(2σ²). The structure-dependent determinant factor
/// is a field- and σ-free constant and is dropped.
fn ln_gmrf(s: Real, sigma: Real, rank: usize) -> Real {
    let rank = rank as Real;
    -0.5 * rank * (2.0 * std::f64::consts::PI).ln() - rank * sigma.ln() - s / (2.0 * sigma * sigma)
}

fn ln_uniform_sd(sigma: Real, upper: Real) -> Real {
    if sigma > 0.0 && sigma < upper {
        -upper.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Joint log prior of a state, up to variant-constant terms.
///
/// Conventions (documented so the terms are reproducible):
/// - r: full Gamma(shape, rate) density;
/// - α and every η entry: full Normal densities;
/// - u: intrinsic CAR pairwise form at rank n_non-isolated − #components;
/// - v: iid Normal under the sum-to-zero constraint, i.e. rank n−1;
/// - γ: second-order random-walk penalty at rank T−2;
/// - σ_u, σ_v, σ_γ: Uniform(0, L) with −∞ outside the support;
/// - flat mixture: Dirichlet(1,…,1) contributes 0;
/// - spatial mixture: per-cluster CAR + iid Normal fields for clusters
///   1..C−1 (cluster C is the pinned reference) and HalfNormal densities
///   for their sds.
pub fn log_prior(state: &ParameterState, spec: &ModelSpec, graph: &AdjacencyGraph) -> Real {
    let pr = &spec.priors;
    let n = state.u.len();
    let t_len = state.gamma.len();
    let mut lp = 0.0;

    // Dispersion.
    let r = state.r();
    lp += pr.r_shape * pr.r_rate.ln() - pr.r_shape.gamma_ln() + (pr.r_shape - 1.0) * r.ln()
        - pr.r_rate * r;

    // Intercept and surface coefficients.
    lp += ln_normal(state.alpha, pr.alpha_sd);
    for e in state.eta.iter() {
        lp += ln_normal(*e, pr.eta_sd);
    }

    // Variance-parameter supports first: outside support short-circuits.
    let sup = ln_uniform_sd(state.sigma_u, pr.sigma_u_upper)
        + ln_uniform_sd(state.sigma_v, pr.sigma_v_upper)
        + ln_uniform_sd(state.sigma_gamma, pr.sigma_gamma_upper);
    if sup == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    lp += sup;

    // BYM fields and temporal effect.
    let s_u = pairwise_difference_sum(&state.u, graph);
    lp += ln_gmrf(s_u, state.sigma_u, graph.car_rank());
    let s_v: Real = state.v.iter().map(|v| v * v).sum();
    lp += ln_gmrf(s_v, state.sigma_v, n.saturating_sub(1));
    lp += ln_gmrf(rw2_penalty(&state.gamma), state.sigma_gamma, t_len.saturating_sub(2));

    if spec.variant == Variant::MixtureSpatial {
        let n_clusters = state.n_clusters();
        for c in 0..n_clusters.saturating_sub(1) {
            let field_u: Vec<Real> = state.assignment_u.row(c).to_vec();
            let s_uc = pairwise_difference_sum(&field_u, graph);
            let sd_uc = state.sigma_uc[c];
            let sd_vc = state.sigma_vc[c];
            if sd_uc <= 0.0 || sd_vc <= 0.0 {
                return f64::NEG_INFINITY;
            }
            lp += ln_gmrf(s_uc, sd_uc, graph.car_rank());
            let s_vc: Real = state.assignment_v.row(c).iter().map(|v| v * v).sum();
            lp += ln_gmrf(s_vc, sd_vc, n);
            lp += ln_half_normal(sd_uc, pr.assignment_sd_scale);
            lp += ln_half_normal(sd_vc, pr.assignment_sd_scale);
        }
    }
    // MixtureFlat: Dir(1,…,1) is constant over the simplex — contributes 0.

    lp
}

/// Total log likelihood at the drawn labels: Σ_i ℓ_i(z_i).
pub fn total_loglik(
    state: &ParameterState,
    dataset: &PanelDataset,
    crossbasis: &CrossBasis<Real>,
) -> Result<Real, ModelError> {
    let mut total = 0.0;
    for i in 0..dataset.n() {
        total += area_cluster_loglik(state, dataset, crossbasis, i, state.z[i])?;
    }
    Ok(total)
}

/// Log posterior kernel: likelihood + label term Σ_i ln q_{i,z_i} + prior.
pub fn log_posterior(
    state: &ParameterState,
    dataset: &PanelDataset,
    crossbasis: &CrossBasis<Real>,
    spec: &ModelSpec,
) -> Result<Real, ModelError> {
    let mut lp = total_loglik(state, dataset, crossbasis)?;
    if state.n_clusters() > 1 {
        for i in 0..dataset.n() {
            lp += state.q[(i, state.z[i])].ln();
        }
    }
    lp += log_prior(state, spec, &dataset.graph);
    Ok(lp)
}
