//! Adaptive Metropolis-within-Gibbs sampler for all model variants.
//!
//! One sweep updates, in order: r, α, the η blocks, u sites, v sites, γ
//! sites, the σ's, then (mixtures) z and the membership machinery — a
//! conjugate Dirichlet draw of q in the flat variant, Metropolis updates of
//! the per-cluster assignment fields in the spatial variant.
//!
//! Sum-to-zero recentring keeps α identified: after the u sites the
//! per-component mean of u moves into v, after the v sites the mean of v
//! moves into α, and likewise for γ — each transfer leaves every linear
//! predictor unchanged. Proposal scales adapt toward target acceptance
//! rates during burn-in only (Robbins–Monro with step 1/⌈sweep/window⌉) and
//! are frozen afterwards.
//!
//! Mixture draws are relabeled at retention time by matching each draw's
//! η_c rows to reference means (collected over the last quarter of burn-in)
//! with a minimum-cost assignment.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::min_cost_assignment;
use crate::graph::pairwise_difference_sum;
use crate::model::{
    ln_mean, log_posterior, log_prior, nb_log_pmf_core, rw2_penalty, ModelError, ModelSpec,
    PanelDataset, ParameterState, Variant,
};
use crate::num::{log_sum_exp, softmax, Scalar};
use crate::spline::{build_crossbasis, SplineError};
use crate::{CrossBasis, Real};

#[derive(Error, Debug)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite log posterior at initialization: {0}")]
    NonFiniteInit(String),
    #[error("all cluster weights vanished for area {0}; data degenerate under every cluster")]
    DegenerateZ(usize),
    #[error("checkpoint incompatible with this run: {0}")]
    BadCheckpoint(String),
}

/// How the pointwise log-likelihood matrix is recorded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoglikKind {
    /// log p(y_it | λ_it(z_i)) at the drawn labels.
    Conditional,
    /// log Σ_c q_ic · p(y_it | λ_it(c)), marginalizing the label.
    Marginal,
}

/// Initial proposal multipliers per block family.
///
/// Every proposal sd is `multiplier × base`, where the base is an analytic
/// conditional-sd proxy (Fisher-information approximation through the
/// current variance parameters), so these start near 1 and burn-in
/// adaptation only makes O(1) corrections. The dispersion walk has no
/// analytic base (base 1), so its entry is an absolute log-scale step;
/// prior-only runs against the very diffuse Gamma prior need a much larger
/// value (~1500) than data fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialScales {
    pub r: Real,
    pub alpha: Real,
    pub eta: Real,
    /// Per-cluster surface-level walk along the near-constant direction.
    pub eta_level: Real,
    pub site: Real,
    pub sigma: Real,
    pub assignment: Real,
}

impl Default for InitialScales {
    fn default() -> Self {
        Self {
            r: 0.2,
            alpha: 1.0,
            eta: 1.0,
            eta_level: 0.5,
            site: 1.0,
            sigma: 1.0,
            assignment: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub adaptation_window: usize,
    /// Target acceptance for scalar and single-site moves.
    pub target_accept_scalar: Real,
    /// Target acceptance for the η block moves.
    pub target_accept_block: Real,
    pub n_chains: usize,
    /// Disable the data likelihood; the chain then samples the prior.
    pub prior_only: bool,
    pub loglik_kind: LoglikKind,
    pub initial_scales: InitialScales,
    /// Keep z at its initialization for this many leading sweeps so the
    /// cluster surfaces can differentiate before labels move (`None` =
    /// burn_in/10). The freeze always ends within burn-in.
    pub z_freeze_sweeps: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iterations: 80_000,
            burn_in: 40_000,
            thinning: 10,
            seed: 1,
            adaptation_window: 50,
            target_accept_scalar: 0.44,
            target_accept_block: 0.234,
            n_chains: 1,
            prior_only: false,
            loglik_kind: LoglikKind::Conditional,
            initial_scales: InitialScales::default(),
            z_freeze_sweeps: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.burn_in >= self.n_iterations {
            return Err(SamplerError::BadConfig(format!(
                "burn_in {} must be below n_iterations {}",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thinning == 0 {
            return Err(SamplerError::BadConfig("thinning must be at least 1".into()));
        }
        if self.adaptation_window == 0 {
            return Err(SamplerError::BadConfig(
                "adaptation_window must be at least 1".into(),
            ));
        }
        if self.n_chains == 0 {
            return Err(SamplerError::BadConfig("n_chains must be at least 1".into()));
        }
        Ok(())
    }

    /// Retained draw count: ⌊(n_iterations − burn_in)/thinning⌋.
    pub fn n_retained(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thinning
    }

    /// Number of leading sweeps with frozen labels.
    pub fn z_freeze(&self) -> usize {
        self.z_freeze_sweeps
            .unwrap_or(self.burn_in / 10)
            .min(self.burn_in)
    }
}

/// Acceptance bookkeeping for one proposal unit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub attempts: u64,
    pub accepts: u64,
}

impl Counts {
    fn add(&mut self, accepted: bool) {
        self.attempts += 1;
        self.accepts += u64::from(accepted);
    }

    pub fn rate(&self) -> Real {
        if self.attempts == 0 {
            0.0
        } else {
            self.accepts as Real / self.attempts as Real
        }
    }

    fn merge(&mut self, other: &Counts) {
        self.attempts += other.attempts;
        self.accepts += other.accepts;
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct AcceptGroup {
    r: Counts,
    alpha: Counts,
    eta: Vec<Counts>,
    eta_gamma: Vec<Counts>,
    eta_level: Vec<Counts>,
    u: Vec<Counts>,
    v: Vec<Counts>,
    gamma: Vec<Counts>,
    sigma_u: Counts,
    sigma_v: Counts,
    sigma_gamma: Counts,
    /// Flattened (cluster, area) counts for the assignment fields.
    assign_u: Vec<Counts>,
    assign_v: Vec<Counts>,
    sigma_uc: Vec<Counts>,
    sigma_vc: Vec<Counts>,
}

impl AcceptGroup {
    fn sized(n: usize, t_len: usize, n_clusters: usize, spatial: bool) -> Self {
        let f = if spatial { n_clusters * n } else { 0 };
        let fc = if spatial { n_clusters } else { 0 };
        Self {
            eta: vec![Counts::default(); n_clusters],
            eta_gamma: vec![Counts::default(); n_clusters],
            eta_level: vec![Counts::default(); n_clusters],
            u: vec![Counts::default(); n],
            v: vec![Counts::default(); n],
            gamma: vec![Counts::default(); t_len],
            assign_u: vec![Counts::default(); f],
            assign_v: vec![Counts::default(); f],
            sigma_uc: vec![Counts::default(); fc],
            sigma_vc: vec![Counts::default(); fc],
            ..Default::default()
        }
    }

    fn reset(&mut self) {
        let zero = |v: &mut Vec<Counts>| v.iter_mut().for_each(|c| *c = Counts::default());
        self.r = Counts::default();
        self.alpha = Counts::default();
        self.sigma_u = Counts::default();
        self.sigma_v = Counts::default();
        self.sigma_gamma = Counts::default();
        zero(&mut self.eta);
        zero(&mut self.eta_gamma);
        zero(&mut self.eta_level);
        zero(&mut self.u);
        zero(&mut self.v);
        zero(&mut self.gamma);
        zero(&mut self.assign_u);
        zero(&mut self.assign_v);
        zero(&mut self.sigma_uc);
        zero(&mut self.sigma_vc);
    }
}

/// Proposal sds, mirroring the acceptance groups.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scales {
    r: Real,
    alpha: Real,
    eta: Vec<Real>,
    /// Per-cluster lower-triangular proposal factors (row-major p×p),
    /// adapted to the empirical η covariance during burn-in.
    eta_chol: Vec<Vec<Real>>,
    eta_gamma: Vec<Real>,
    eta_level: Vec<Real>,
    u: Vec<Real>,
    v: Vec<Real>,
    gamma: Vec<Real>,
    sigma_u: Real,
    sigma_v: Real,
    sigma_gamma: Real,
    assign_u: Vec<Real>,
    assign_v: Vec<Real>,
    sigma_uc: Vec<Real>,
    sigma_vc: Vec<Real>,
}

impl Scales {
    fn new(
        init: &InitialScales,
        n: usize,
        t_len: usize,
        n_clusters: usize,
        spatial: bool,
    ) -> Self {
        let f = if spatial { n_clusters * n } else { 0 };
        let fc = if spatial { n_clusters } else { 0 };
        Self {
            r: init.r,
            alpha: init.alpha,
            eta: vec![init.eta; n_clusters],
            eta_chol: Vec::new(),
            eta_gamma: vec![init.eta; n_clusters],
            eta_level: vec![init.eta_level; n_clusters],
            u: vec![init.site; n],
            v: vec![init.site; n],
            gamma: vec![init.site; t_len],
            sigma_u: init.sigma,
            sigma_v: init.sigma,
            sigma_gamma: init.sigma,
            assign_u: vec![init.assignment; f],
            assign_v: vec![init.assignment; f],
            sigma_uc: vec![init.sigma; fc],
            sigma_vc: vec![init.sigma; fc],
        }
    }
}

/// Analytic conditional-sd proxies used to precondition every proposal.
/// Likelihood curvature is approximated once at initialization from crude
/// per-area rates; prior curvature terms use the live variance parameters,
/// which the corresponding site moves never change, so proposals remain
/// symmetric and the post-burn-in kernel is a fixed function of the state.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Precond {
    /// Per-area likelihood information of a constant predictor shift,
    /// summed over that area's modeled times.
    area_info: Vec<Real>,
    /// Per-time likelihood information summed over areas (0 before lag L).
    time_info: Vec<Real>,
    /// Likelihood information on α (sum of `area_info`).
    alpha_info: Real,
    /// Diagonal cross-basis information I_jj = Σ b_j²·w.
    eta_info: Vec<Real>,
    /// Quadratic-form diagonal of the RW2 penalty per time index.
    rw2_diag: Vec<Real>,
    /// Least-squares direction e with B·e ≈ 1: the near-constant (level)
    /// direction of the surface coefficients.
    level_dir: Vec<Real>,
    /// Per-area mean of b·level_dir over modeled times.
    level_area_mean: Vec<Real>,
}

/// Running first and second moments of a cluster's η chain, used to adapt
/// the block-proposal covariance during burn-in (Haario-style).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct EtaMoments {
    n: usize,
    sum: Vec<Real>,
    sum_outer: Vec<Real>,
}

impl EtaMoments {
    fn sized(p: usize) -> Self {
        Self {
            n: 0,
            sum: vec![0.0; p],
            sum_outer: vec![0.0; p * p],
        }
    }

    fn push(&mut self, x: ndarray::ArrayView1<'_, Real>) {
        let p = self.sum.len();
        self.n += 1;
        for j in 0..p {
            self.sum[j] += x[j];
            for k in 0..p {
                self.sum_outer[j * p + k] += x[j] * x[k];
            }
        }
    }

    /// Sample covariance (None until enough draws accumulated).
    fn covariance(&self) -> Option<Vec<Real>> {
        let p = self.sum.len();
        if self.n < 2 * p {
            return None;
        }
        let n = self.n as Real;
        let mut cov = vec![0.0; p * p];
        for j in 0..p {
            for k in 0..p {
                cov[j * p + k] =
                    (self.sum_outer[j * p + k] - self.sum[j] * self.sum[k] / n) / (n - 1.0);
            }
        }
        Some(cov)
    }
}

/// Lower-triangular Cholesky factor of a (jittered) SPD matrix, row-major.
fn cholesky(mut a: Vec<Real>, p: usize) -> Option<Vec<Real>> {
    // Relative jitter keeps near-singular empirical covariances usable.
    let mut jitter = 0.0;
    let max_diag = (0..p).map(|j| a[j * p + j]).fold(0.0f64, f64::max);
    for _ in 0..6 {
        let mut l = vec![0.0; p * p];
        let mut ok = true;
        'outer: for i in 0..p {
            for j in 0..=i {
                let mut sum = a[i * p + j];
                for k in 0..j {
                    sum -= l[i * p + k] * l[j * p + k];
                }
                if i == j {
                    if sum <= 0.0 {
                        ok = false;
                        break 'outer;
                    }
                    l[i * p + i] = sum.sqrt();
                } else {
                    l[i * p + j] = sum / l[j * p + j];
                }
            }
        }
        if ok {
            return Some(l);
        }
        jitter = if jitter == 0.0 { max_diag * 1e-8 + 1e-12 } else { jitter * 100.0 };
        for j in 0..p {
            a[j * p + j] += jitter;
        }
    }
    None
}

/// Summary row of the acceptance report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockAcceptance {
    pub block: String,
    pub attempts: u64,
    pub accepts: u64,
    pub rate: Real,
    /// Final proposal sd (geometric mean across sites for site blocks).
    pub scale: Real,
}

/// Retained MCMC output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: Vec<ParameterState>,
    /// S × n·(T−L) pointwise log likelihood, observation-major as
    /// `obs = i·(T−L) + (t − L − 1)` for 1-based t.
    pub loglik: Array2<Real>,
    pub acceptance: Vec<BlockAcceptance>,
    pub config: SamplerConfig,
    pub warnings: Vec<String>,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }
}

/// Resumable snapshot of a running chain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub sweep: usize,
    pub config: SamplerConfig,
    pub state: ParameterState,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: (u64, u64),
    scales: Scales,
    eta_accum: Vec<EtaMoments>,
    window: AcceptGroup,
    totals: AcceptGroup,
    relabel_sum: Array2<Real>,
    relabel_n: usize,
    relabel_ref: Option<Array2<Real>>,
    draws: Vec<ParameterState>,
    loglik_rows: Vec<Vec<Real>>,
    empty_counts: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Metropolis primitives
// ---------------------------------------------------------------------------

fn std_normal<R: Rng>(rng: &mut R) -> Real {
    StandardNormal.sample(rng)
}

fn ln_uniform<R: Rng>(rng: &mut R) -> Real {
    let u: Real = rng.random();
    u.ln()
}

/// Random-walk step on a scalar. Draws the proposal, evaluates the target at
/// both points, and always consumes one accept uniform.
pub fn mh_scalar_step<R: Rng>(
    rng: &mut R,
    current: Real,
    scale: Real,
    mut log_target: impl FnMut(Real) -> Real,
) -> (Real, bool) {
    let proposal = current + scale * std_normal(rng);
    let delta = log_target(proposal) - log_target(current);
    if ln_uniform(rng) < delta {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Random-walk step on a positive scalar via its log, with the log-scale
/// Jacobian; `log_target` is the density in the natural parameterization.
pub fn mh_log_scalar_step<R: Rng>(
    rng: &mut R,
    current: Real,
    scale: Real,
    mut log_target: impl FnMut(Real) -> Real,
) -> (Real, bool) {
    let proposal = (current.ln() + scale * std_normal(rng)).exp();
    let delta = log_target(proposal) - log_target(current) + proposal.ln() - current.ln();
    if proposal > 0.0 && proposal.is_finite() && ln_uniform(rng) < delta {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Gaussian random-walk block move with a shared scale across coordinates.
pub fn mh_block_step<R: Rng>(
    rng: &mut R,
    current: &mut [Real],
    scale: Real,
    mut log_target: impl FnMut(&[Real]) -> Real,
) -> bool {
    let proposal: Vec<Real> = current.iter().map(|&x| x + scale * std_normal(rng)).collect();
    let delta = log_target(&proposal) - log_target(current);
    if ln_uniform(rng) < delta {
        current.copy_from_slice(&proposal);
        true
    } else {
        false
    }
}

// ---------------------------------------------------------------------------
// Likelihood context
// ---------------------------------------------------------------------------

/// Borrowed data bundle with the cached pieces likelihood evaluation needs.
struct LikContext<'a> {
    data: &'a PanelDataset,
    xb: &'a CrossBasis,
    ln_offsets: &'a [Real],
    y_f: &'a [Real],
    ln_y_fact: &'a [Real],
    prior_only: bool,
}

/// Dispersion-derived constants reused across a pass.
#[derive(Clone, Copy)]
struct RTerms {
    r: Real,
    ln_r: Real,
    ln_gamma_r: Real,
}

impl RTerms {
    fn of(log_r: Real) -> Self {
        let r = log_r.exp();
        Self {
            r,
            ln_r: log_r,
            ln_gamma_r: r.gamma_ln(),
        }
    }
}

impl LikContext<'_> {
    fn max_lag(&self) -> usize {
        self.xb.max_lag()
    }

    fn t_len(&self) -> usize {
        self.xb.n_times()
    }

    #[inline]
    fn ln_lambda(&self, st: &ParameterState, i: usize, t0: usize, c: usize) -> Real {
        let row = self.xb.row(i, t0);
        let eta = st.eta.row(c);
        let mut s = 0.0;
        for (b, e) in row.iter().zip(eta.iter()) {
            s += b * e;
        }
        ln_mean(self.ln_offsets[i], st.alpha, s, st.u[i], st.v[i], st.gamma[t0])
    }

    #[inline]
    fn obs_ll(&self, obs: usize, ln_lambda: Real, rt: &RTerms) -> Real {
        nb_log_pmf_core(
            self.y_f[obs],
            ln_lambda,
            rt.r,
            rt.ln_r,
            rt.ln_gamma_r,
            self.ln_y_fact[obs],
        )
    }

    /// Σ_t log p(y_it | λ_it(c)).
    fn area_ll(&self, st: &ParameterState, i: usize, c: usize) -> Real {
        if self.prior_only {
            return 0.0;
        }
        let rt = RTerms::of(st.log_r);
        let mut acc = 0.0;
        for t0 in self.max_lag()..self.t_len() {
            let obs = self.xb.obs_index(i, t0);
            acc += self.obs_ll(obs, self.ln_lambda(st, i, t0, c), &rt);
        }
        acc
    }

    /// Area likelihood at the drawn label, current and with the linear
    /// predictor shifted by `delta` (u_i and v_i site proposals).
    fn area_ll_pair(&self, st: &ParameterState, i: usize, delta: Real) -> (Real, Real) {
        if self.prior_only {
            return (0.0, 0.0);
        }
        let rt = RTerms::of(st.log_r);
        let c = st.z[i];
        let (mut cur, mut prop) = (0.0, 0.0);
        for t0 in self.max_lag()..self.t_len() {
            let obs = self.xb.obs_index(i, t0);
            let ll = self.ln_lambda(st, i, t0, c);
            cur += self.obs_ll(obs, ll, &rt);
            prop += self.obs_ll(obs, ll + delta, &rt);
        }
        (cur, prop)
    }

    /// Full-data likelihood, current and uniformly shifted (α proposals).
    fn full_ll_pair(&self, st: &ParameterState, delta: Real) -> (Real, Real) {
        if self.prior_only {
            return (0.0, 0.0);
        }
        let rt = RTerms::of(st.log_r);
        let (mut cur, mut prop) = (0.0, 0.0);
        for i in 0..self.data.n() {
            let c = st.z[i];
            for t0 in self.max_lag()..self.t_len() {
                let obs = self.xb.obs_index(i, t0);
                let ll = self.ln_lambda(st, i, t0, c);
                cur += self.obs_ll(obs, ll, &rt);
                prop += self.obs_ll(obs, ll + delta, &rt);
            }
        }
        (cur, prop)
    }

    /// Full-data likelihood under the current and a proposed dispersion.
    fn full_ll_r_pair(&self, st: &ParameterState, log_r_new: Real) -> (Real, Real) {
        if self.prior_only {
            return (0.0, 0.0);
        }
        let cur_rt = RTerms::of(st.log_r);
        let new_rt = RTerms::of(log_r_new);
        let (mut cur, mut prop) = (0.0, 0.0);
        for i in 0..self.data.n() {
            let c = st.z[i];
            for t0 in self.max_lag()..self.t_len() {
                let obs = self.xb.obs_index(i, t0);
                let ll = self.ln_lambda(st, i, t0, c);
                cur += self.obs_ll(obs, ll, &cur_rt);
                prop += self.obs_ll(obs, ll, &new_rt);
            }
        }
        (cur, prop)
    }

    /// Likelihood over cluster-c areas under the current η_c and under a
    /// perturbed η_c with a per-area shift subtracted from every predictor
    /// (the mean-compensated block move).
    fn cluster_eta_shifted_pair(
        &self,
        st: &ParameterState,
        c: usize,
        eta_step: &[Real],
        area_shift: &[Real],
    ) -> (Real, Real) {
        if self.prior_only {
            return (0.0, 0.0);
        }
        let rt = RTerms::of(st.log_r);
        let (mut cur, mut prop) = (0.0, 0.0);
        for i in 0..self.data.n() {
            if st.z[i] != c {
                continue;
            }
            for t0 in self.max_lag()..self.t_len() {
                let obs = self.xb.obs_index(i, t0);
                let row = self.xb.row(i, t0);
                let mut step = 0.0;
                for (j, b) in row.iter().enumerate() {
                    step += b * eta_step[j];
                }
                let ll = self.ln_lambda(st, i, t0, c);
                cur += self.obs_ll(obs, ll, &rt);
                prop += self.obs_ll(obs, ll + step - area_shift[i], &rt);
            }
        }
        (cur, prop)
    }

    /// Per-area mean of the predictor change b·e over modeled times.
    fn area_mean_contraction(&self, st: &ParameterState, c: usize, eta_step: &[Real]) -> Vec<Real> {
        let n = self.data.n();
        let m = (self.t_len() - self.max_lag()) as Real;
        let mut out = vec![0.0; n];
        for (i, slot) in out.iter_mut().enumerate() {
            if st.z[i] != c {
                continue;
            }
            let mut acc = 0.0;
            for t0 in self.max_lag()..self.t_len() {
                let row = self.xb.row(i, t0);
                for (j, b) in row.iter().enumerate() {
                    acc += b * eta_step[j];
                }
            }
            *slot = acc / m;
        }
        out
    }

    /// Likelihood of one time slice, current and shifted (γ_t proposals).
    fn time_ll_pair(&self, st: &ParameterState, t0: usize, delta: Real) -> (Real, Real) {
        if self.prior_only || t0 < self.max_lag() {
            return (0.0, 0.0);
        }
        let rt = RTerms::of(st.log_r);
        let (mut cur, mut prop) = (0.0, 0.0);
        for i in 0..self.data.n() {
            let obs = self.xb.obs_index(i, t0);
            let ll = self.ln_lambda(st, i, t0, st.z[i]);
            cur += self.obs_ll(obs, ll, &rt);
            prop += self.obs_ll(obs, ll + delta, &rt);
        }
        (cur, prop)
    }

    /// Pointwise log-likelihood row for one retained draw.
    fn loglik_row(&self, st: &ParameterState, kind: LoglikKind) -> Vec<Real> {
        let n_obs = self.xb.n_obs();
        if self.prior_only {
            return vec![0.0; n_obs];
        }
        let rt = RTerms::of(st.log_r);
        let n_clusters = st.n_clusters();
        let mut row = vec![0.0; n_obs];
        for i in 0..self.data.n() {
            for t0 in self.max_lag()..self.t_len() {
                let obs = self.xb.obs_index(i, t0);
                row[obs] = match kind {
                    LoglikKind::Conditional => {
                        self.obs_ll(obs, self.ln_lambda(st, i, t0, st.z[i]), &rt)
                    }
                    LoglikKind::Marginal => {
                        let terms: Vec<Real> = (0..n_clusters)
                            .map(|c| {
                                st.q[(i, c)].ln()
                                    + self.obs_ll(obs, self.ln_lambda(st, i, t0, c), &rt)
                            })
                            .collect();
                        log_sum_exp(&terms)
                    }
                };
            }
        }
        row
    }
}

// ---------------------------------------------------------------------------
// Sampler
// ---------------------------------------------------------------------------

pub struct Sampler<'a> {
    data: &'a PanelDataset,
    spec: ModelSpec,
    cfg: SamplerConfig,
    xb: CrossBasis,
    ln_offsets: Vec<Real>,
    y_f: Vec<Real>,
    ln_y_fact: Vec<Real>,
    state: ParameterState,
    rng: ChaCha8Rng,
    rng_seed_bytes: [u8; 32],
    sweep: usize,
    scales: Scales,
    precond: Precond,
    eta_accum: Vec<EtaMoments>,
    window: AcceptGroup,
    totals: AcceptGroup,
    relabel_sum: Array2<Real>,
    relabel_n: usize,
    relabel_ref: Option<Array2<Real>>,
    draws: Vec<ParameterState>,
    loglik_rows: Vec<Vec<Real>>,
    empty_counts: Vec<usize>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        data: &'a PanelDataset,
        spec: ModelSpec,
        cfg: SamplerConfig,
    ) -> Result<Self, SamplerError> {
        cfg.validate()?;
        spec.validate()?;
        let xb = build_crossbasis(&data.x, &spec.crossbasis)?;
        let n = data.n();
        let t_len = data.t_len();
        let n_clusters = spec.n_clusters;
        let spatial = spec.variant == Variant::MixtureSpatial;
        let p = spec.crossbasis.dim();

        let ln_offsets: Vec<Real> = data.offsets.iter().map(|o| o.ln()).collect();
        let n_obs = xb.n_obs();
        let mut y_f = vec![0.0; n_obs];
        let mut ln_y_fact = vec![0.0; n_obs];
        for i in 0..n {
            for t0 in xb.max_lag()..t_len {
                let obs = xb.obs_index(i, t0);
                let y = data.y[(i, t0)] as Real;
                y_f[obs] = y;
                ln_y_fact[obs] = (y + 1.0).gamma_ln();
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let rng_seed_bytes = rng.get_seed();

        let mut state = ParameterState::zeros(n, t_len, n_clusters, p, spatial);
        // Crude level start: mean incidence across modeled cells.
        let mut rate_sum = 0.0;
        let mut cells = 0usize;
        for i in 0..n {
            for t0 in xb.max_lag()..t_len {
                rate_sum += data.y[(i, t0)] as Real / data.offsets[i];
                cells += 1;
            }
        }
        state.alpha = (rate_sum / cells.max(1) as Real).max(1e-8).ln();
        state.log_r = 10.0f64.ln();
        if n_clusters > 1 {
            state.z = init_labels(data, &xb, n_clusters, &mut rng);
        }
        if !cfg.prior_only {
            // Start each surface at a crude per-cluster ridge fit of log
            // crude rates, so the shared temporal field does not swallow
            // cluster-specific exposure patterns before the surfaces move.
            init_eta(&mut state, data, &xb);
        }

        let scales = Scales::new(&cfg.initial_scales, n, t_len, n_clusters, spatial);
        let window = AcceptGroup::sized(n, t_len, n_clusters, spatial);
        let totals = AcceptGroup::sized(n, t_len, n_clusters, spatial);
        let precond = build_precond(data, &xb, cfg.prior_only);
        let eta_accum = vec![EtaMoments::sized(p); n_clusters];

        let sampler = Self {
            data,
            spec,
            cfg,
            xb,
            ln_offsets,
            y_f,
            ln_y_fact,
            state,
            rng,
            rng_seed_bytes,
            sweep: 0,
            scales,
            precond,
            eta_accum,
            window,
            totals,
            relabel_sum: Array2::zeros((n_clusters, p)),
            relabel_n: 0,
            relabel_ref: None,
            draws: Vec::new(),
            loglik_rows: Vec::new(),
            empty_counts: vec![0; n_clusters],
        };
        sampler.check_init()?;
        Ok(sampler)
    }

    fn check_init(&self) -> Result<(), SamplerError> {
        let lp = if self.cfg.prior_only {
            log_prior(&self.state, &self.spec, &self.data.graph)
        } else {
            log_posterior(&self.state, self.data, &self.xb, &self.spec)?
        };
        if !lp.is_finite() {
            let prior = log_prior(&self.state, &self.spec, &self.data.graph);
            return Err(SamplerError::NonFiniteInit(format!(
                "log posterior = {lp} (prior {prior}); alpha = {}, log_r = {}, sigmas = ({}, {}, {})",
                self.state.alpha,
                self.state.log_r,
                self.state.sigma_u,
                self.state.sigma_v,
                self.state.sigma_gamma,
            )));
        }
        Ok(())
    }

    fn ctx(&self) -> LikContext<'_> {
        LikContext {
            data: self.data,
            xb: &self.xb,
            ln_offsets: &self.ln_offsets,
            y_f: &self.y_f,
            ln_y_fact: &self.ln_y_fact,
            prior_only: self.cfg.prior_only,
        }
    }

    pub fn state(&self) -> &ParameterState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut ParameterState {
        &mut self.state
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn sweeps_done(&self) -> usize {
        self.sweep
    }

    pub fn crossbasis(&self) -> &CrossBasis {
        &self.xb
    }

    /// Current proposal scales, one summary value per block.
    pub fn scale_summary(&self) -> Vec<(String, Real)> {
        let mut out = vec![
            ("r".to_string(), self.scales.r),
            ("alpha".to_string(), self.scales.alpha),
            ("u".to_string(), geometric_mean(&self.scales.u)),
            ("v".to_string(), geometric_mean(&self.scales.v)),
            ("gamma".to_string(), geometric_mean(&self.scales.gamma)),
            ("sigma_u".to_string(), self.scales.sigma_u),
            ("sigma_v".to_string(), self.scales.sigma_v),
            ("sigma_gamma".to_string(), self.scales.sigma_gamma),
        ];
        for (c, s) in self.scales.eta.iter().enumerate() {
            out.push((format!("eta_{c}"), *s));
        }
        for (c, s) in self.scales.sigma_uc.iter().enumerate() {
            out.push((format!("sigma_uc_{c}"), *s));
        }
        for (c, s) in self.scales.sigma_vc.iter().enumerate() {
            out.push((format!("sigma_vc_{c}"), *s));
        }
        out
    }

    // -- individual updates ---------------------------------------------------

    /// Dispersion move: random walk on log r against a·θ − b·eᶿ (Gamma prior
    /// plus the log-scale Jacobian) and the full likelihood.
    pub fn update_r(&mut self) {
        let pr_shape = self.spec.priors.r_shape;
        let pr_rate = self.spec.priors.r_rate;
        let z = std_normal(&mut self.rng);
        let log_r_new = self.state.log_r + self.scales.r * z;
        let (cur, prop) = self.ctx().full_ll_r_pair(&self.state, log_r_new);
        let prior_cur = pr_shape * self.state.log_r - pr_rate * self.state.log_r.exp();
        let prior_prop = pr_shape * log_r_new - pr_rate * log_r_new.exp();
        let delta = (prop + prior_prop) - (cur + prior_cur);
        let accepted = ln_uniform(&mut self.rng) < delta;
        if accepted {
            self.state.log_r = log_r_new;
        }
        self.window.r.add(accepted);
        self.totals.r.add(accepted);
    }

    pub fn update_alpha(&mut self) {
        let sd = self.spec.priors.alpha_sd;
        let base = 2.4 / (self.precond.alpha_info + 1.0 / (sd * sd)).sqrt();
        let step = self.scales.alpha * base * std_normal(&mut self.rng);
        let (cur, prop) = self.ctx().full_ll_pair(&self.state, step);
        let a_new = self.state.alpha + step;
        let prior_delta = (self.state.alpha * self.state.alpha - a_new * a_new) / (2.0 * sd * sd);
        let delta = (prop - cur) + prior_delta;
        let accepted = ln_uniform(&mut self.rng) < delta;
        if accepted {
            self.state.alpha = a_new;
        }
        self.window.alpha.add(accepted);
        self.totals.alpha.add(accepted);
    }

    /// Full-vector random walk on η_c with a diagonal proposal whose
    /// per-coordinate sds follow the basis-column information, jointly
    /// compensated through v: each cluster area's mean predictor change is
    /// subtracted from its v_i, so the move stays likelihood-relevant only
    /// through within-area variation. The (η, v) map is linear and
    /// volume-preserving, so the walk remains a valid symmetric proposal.
    pub fn update_eta_block(&mut self, c: usize) {
        let p = self.state.eta.ncols();
        let sd2_prior = self.spec.priors.eta_sd * self.spec.priors.eta_sd;
        let scale = self.scales.eta[c] * 2.38 / (p as Real).sqrt();
        let mut step = vec![0.0; p];
        if let Some(l) = self.scales.eta_chol.get(c).filter(|l| !l.is_empty()) {
            // Covariance-informed proposal: step = scale · L · z.
            let l = l.clone();
            let z: Vec<Real> = (0..p).map(|_| std_normal(&mut self.rng)).collect();
            for (j, e) in step.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += l[j * p + k] * z[k];
                }
                *e = scale * acc;
            }
        } else {
            for (j, e) in step.iter_mut().enumerate() {
                let base = 1.0 / (self.precond.eta_info[j] + 1.0 / sd2_prior).sqrt();
                *e = scale * base * std_normal(&mut self.rng);
            }
        }
        let shifts = self.ctx().area_mean_contraction(&self.state, c, &step);
        let (cur, prop) = self
            .ctx()
            .cluster_eta_shifted_pair(&self.state, c, &step, &shifts);
        // The uniform part of the compensation moves through α (where the
        // prior is loose); only centered deviations are charged to v.
        let grand_mean: Real = shifts.iter().sum::<Real>() / shifts.len() as Real;
        let mut prior_delta = 0.0;
        for (j, e) in step.iter().enumerate() {
            let e_old = self.state.eta[(c, j)];
            let e_new = e_old + e;
            prior_delta += (e_old * e_old - e_new * e_new) / (2.0 * sd2_prior);
        }
        let sigma2_v = self.state.sigma_v * self.state.sigma_v;
        for (i, shift) in shifts.iter().enumerate() {
            let v_old = self.state.v[i];
            let v_new = v_old - (shift - grand_mean);
            prior_delta += (v_old * v_old - v_new * v_new) / (2.0 * sigma2_v);
        }
        let alpha_sd = self.spec.priors.alpha_sd;
        let a_old = self.state.alpha;
        let a_new = a_old - grand_mean;
        prior_delta += (a_old * a_old - a_new * a_new) / (2.0 * alpha_sd * alpha_sd);
        let delta = (prop - cur) + prior_delta;
        let accepted = ln_uniform(&mut self.rng) < delta;
        if accepted {
            for (j, e) in step.iter().enumerate() {
                self.state.eta[(c, j)] += e;
            }
            for (i, shift) in shifts.iter().enumerate() {
                self.state.v[i] -= shift - grand_mean;
            }
            self.state.alpha = a_new;
        }
        self.window.eta[c].add(accepted);
        self.totals.eta[c].add(accepted);
    }

    /// Walk along the near-constant surface direction for cluster c, with
    /// the same v compensation as the block move. This is the slow valley
    /// of the posterior (the de-facto per-cluster level, identified only
    /// softly through the priors), so it gets its own proposal.
    pub fn update_eta_level(&mut self, c: usize) {
        let delta = self.scales.eta_level[c] * std_normal(&mut self.rng);
        let ctx = self.ctx();
        let rt = RTerms::of(self.state.log_r);
        let (mut cur, mut prop) = (0.0, 0.0);
        if !self.cfg.prior_only {
            for i in 0..self.data.n() {
                if self.state.z[i] != c {
                    continue;
                }
                for t0 in ctx.max_lag()..ctx.t_len() {
                    let obs = self.xb.obs_index(i, t0);
                    let row = self.xb.row(i, t0);
                    let mut contraction = 0.0;
                    for (j, b) in row.iter().enumerate() {
                        contraction += b * self.precond.level_dir[j];
                    }
                    let residual = contraction - self.precond.level_area_mean[i];
                    let ll = ctx.ln_lambda(&self.state, i, t0, c);
                    cur += ctx.obs_ll(obs, ll, &rt);
                    prop += ctx.obs_ll(obs, ll + delta * residual, &rt);
                }
            }
        }
        let sd2_prior = self.spec.priors.eta_sd * self.spec.priors.eta_sd;
        let mut prior_delta = 0.0;
        for (j, d) in self.precond.level_dir.iter().enumerate() {
            let e_old = self.state.eta[(c, j)];
            let e_new = e_old + delta * d;
            prior_delta += (e_old * e_old - e_new * e_new) / (2.0 * sd2_prior);
        }
        let n = self.data.n();
        let grand_mean: Real = (0..n)
            .filter(|&i| self.state.z[i] == c)
            .map(|i| delta * self.precond.level_area_mean[i])
            .sum::<Real>()
            / n as Real;
        let sigma2_v = self.state.sigma_v * self.state.sigma_v;
        for i in 0..n {
            let shift = if self.state.z[i] == c {
                delta * self.precond.level_area_mean[i]
            } else {
                0.0
            };
            let v_old = self.state.v[i];
            let v_new = v_old - (shift - grand_mean);
            prior_delta += (v_old * v_old - v_new * v_new) / (2.0 * sigma2_v);
        }
        let alpha_sd = self.spec.priors.alpha_sd;
        let a_old = self.state.alpha;
        let a_new = a_old - grand_mean;
        prior_delta += (a_old * a_old - a_new * a_new) / (2.0 * alpha_sd * alpha_sd);
        let accepted = ln_uniform(&mut self.rng) < (prop - cur) + prior_delta;
        if accepted {
            for (j, d) in self.precond.level_dir.iter().enumerate() {
                self.state.eta[(c, j)] += delta * d;
            }
            for i in 0..n {
                let shift = if self.state.z[i] == c {
                    delta * self.precond.level_area_mean[i]
                } else {
                    0.0
                };
                self.state.v[i] -= shift - grand_mean;
            }
            self.state.alpha = a_new;
        }
        self.window.eta_level[c].add(accepted);
        self.totals.eta_level[c].add(accepted);
    }

    /// Covariance-informed walk on η_c jointly compensated through γ: the
    /// cluster's mean predictor change at each time is subtracted from γ_t,
    /// so the move slides along the (surface ↔ shared-temporal-field)
    /// trade-off that otherwise traps the chain. Times before lag L extend
    /// the compensation with its first valid value to keep the RW2 penalty
    /// smooth. Linear volume-preserving map, hence a valid symmetric walk.
    pub fn update_eta_gamma_block(&mut self, c: usize) {
        let p = self.state.eta.ncols();
        let sd2_prior = self.spec.priors.eta_sd * self.spec.priors.eta_sd;
        let scale = self.scales.eta_gamma[c] * 2.38 / (p as Real).sqrt();
        let mut step = vec![0.0; p];
        if let Some(l) = self.scales.eta_chol.get(c).filter(|l| !l.is_empty()) {
            let l = l.clone();
            let z: Vec<Real> = (0..p).map(|_| std_normal(&mut self.rng)).collect();
            for (j, e) in step.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += l[j * p + k] * z[k];
                }
                *e = scale * acc;
            }
        } else {
            for (j, e) in step.iter_mut().enumerate() {
                let base = 1.0 / (self.precond.eta_info[j] + 1.0 / sd2_prior).sqrt();
                *e = scale * base * std_normal(&mut self.rng);
            }
        }

        let n = self.data.n();
        let t_len = self.data.t_len();
        let max_lag = self.xb.max_lag();
        let members: Vec<usize> = (0..n).filter(|&i| self.state.z[i] == c).collect();
        // Common pattern of the proposed change over the cluster's areas.
        let mut pattern = vec![0.0; t_len];
        if !members.is_empty() {
            for t0 in max_lag..t_len {
                let mut acc = 0.0;
                for &i in &members {
                    let row = self.xb.row(i, t0);
                    for (j, b) in row.iter().enumerate() {
                        acc += b * step[j];
                    }
                }
                pattern[t0] = acc / members.len() as Real;
            }
            for t0 in 0..max_lag {
                pattern[t0] = pattern[max_lag];
            }
        }

        let ctx = self.ctx();
        let rt = RTerms::of(self.state.log_r);
        let (mut cur, mut prop) = (0.0, 0.0);
        if !self.cfg.prior_only {
            for i in 0..n {
                let in_cluster = self.state.z[i] == c;
                for t0 in max_lag..t_len {
                    let obs = self.xb.obs_index(i, t0);
                    let ll = ctx.ln_lambda(&self.state, i, t0, self.state.z[i]);
                    let mut change = -pattern[t0];
                    if in_cluster {
                        let row = self.xb.row(i, t0);
                        for (j, b) in row.iter().enumerate() {
                            change += b * step[j];
                        }
                    }
                    cur += ctx.obs_ll(obs, ll, &rt);
                    prop += ctx.obs_ll(obs, ll + change, &rt);
                }
            }
        }

        let mut prior_delta = 0.0;
        for (j, e) in step.iter().enumerate() {
            let e_old = self.state.eta[(c, j)];
            let e_new = e_old + e;
            prior_delta += (e_old * e_old - e_new * e_new) / (2.0 * sd2_prior);
        }
        let gamma_new: Vec<Real> = self
            .state
            .gamma
            .iter()
            .zip(&pattern)
            .map(|(g, m)| g - m)
            .collect();
        let sigma2_g = self.state.sigma_gamma * self.state.sigma_gamma;
        prior_delta +=
            (rw2_penalty(&self.state.gamma) - rw2_penalty(&gamma_new)) / (2.0 * sigma2_g);

        let accepted = ln_uniform(&mut self.rng) < (prop - cur) + prior_delta;
        if accepted {
            for (j, e) in step.iter().enumerate() {
                self.state.eta[(c, j)] += e;
            }
            self.state.gamma = gamma_new;
        }
        self.window.eta_gamma[c].add(accepted);
        self.totals.eta_gamma[c].add(accepted);
    }

    pub fn update_u_sites(&mut self) {
        let n = self.data.n();
        let sigma2 = self.state.sigma_u * self.state.sigma_u;
        for i in 0..n {
            if self.data.graph.is_isolated(i) {
                continue;
            }
            let info = self.precond.area_info[i]
                + self.data.graph.degree(i) as Real / sigma2;
            let step = self.scales.u[i] * 2.4 / info.sqrt() * std_normal(&mut self.rng);
            let u_new = self.state.u[i] + step;
            let mut prior_delta = 0.0;
            for &j in self.data.graph.neighbors(i) {
                let d_old = self.state.u[i] - self.state.u[j];
                let d_new = u_new - self.state.u[j];
                prior_delta += (d_old * d_old - d_new * d_new) / (2.0 * sigma2);
            }
            let (cur, prop) = self.ctx().area_ll_pair(&self.state, i, step);
            let delta = (prop - cur) + prior_delta;
            let accepted = ln_uniform(&mut self.rng) < delta;
            if accepted {
                self.state.u[i] = u_new;
            }
            self.window.u[i].add(accepted);
            self.totals.u[i].add(accepted);
        }
    }

    pub fn update_v_sites(&mut self) {
        let n = self.data.n();
        let sigma2 = self.state.sigma_v * self.state.sigma_v;
        for i in 0..n {
            let info = self.precond.area_info[i] + 1.0 / sigma2;
            let step = self.scales.v[i] * 2.4 / info.sqrt() * std_normal(&mut self.rng);
            let v_new = self.state.v[i] + step;
            let prior_delta = (self.state.v[i] * self.state.v[i] - v_new * v_new) / (2.0 * sigma2);
            let (cur, prop) = self.ctx().area_ll_pair(&self.state, i, step);
            let delta = (prop - cur) + prior_delta;
            let accepted = ln_uniform(&mut self.rng) < delta;
            if accepted {
                self.state.v[i] = v_new;
            }
            self.window.v[i].add(accepted);
            self.totals.v[i].add(accepted);
        }
    }

    pub fn update_gamma_sites(&mut self) {
        let t_len = self.data.t_len();
        let sigma2 = self.state.sigma_gamma * self.state.sigma_gamma;
        for t0 in 0..t_len {
            let info = self.precond.time_info[t0] + self.precond.rw2_diag[t0] / sigma2;
            let step =
                self.scales.gamma[t0] * 2.4 / info.sqrt() * std_normal(&mut self.rng);
            let prior_delta = (rw2_local(&self.state.gamma, t0, 0.0)
                - rw2_local(&self.state.gamma, t0, step))
                / (2.0 * sigma2);
            let (cur, prop) = self.ctx().time_ll_pair(&self.state, t0, step);
            let delta = (prop - cur) + prior_delta;
            let accepted = ln_uniform(&mut self.rng) < delta;
            if accepted {
                self.state.gamma[t0] += step;
            }
            self.window.gamma[t0].add(accepted);
            self.totals.gamma[t0].add(accepted);
        }
    }

    /// Move the per-component mean of u into v (u_i + v_i unchanged ⇒
    /// likelihood unchanged), then the means of v and γ into α.
    pub fn recenter(&mut self) {
        self.recenter_u_into_v();
        self.recenter_v_into_alpha();
        self.recenter_gamma_into_alpha();
    }

    fn recenter_u_into_v(&mut self) {
        let labels = self.data.graph.component_labels();
        let n_comp = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut sums = vec![0.0; n_comp];
        let mut counts = vec![0usize; n_comp];
        for i in 0..self.data.n() {
            if self.data.graph.is_isolated(i) {
                continue;
            }
            sums[labels[i]] += self.state.u[i];
            counts[labels[i]] += 1;
        }
        for i in 0..self.data.n() {
            if self.data.graph.is_isolated(i) {
                continue;
            }
            let shift = sums[labels[i]] / counts[labels[i]] as Real;
            self.state.u[i] -= shift;
            self.state.v[i] += shift;
        }
    }

    fn recenter_v_into_alpha(&mut self) {
        let n = self.data.n() as Real;
        let shift: Real = self.state.v.iter().sum::<Real>() / n;
        for v in self.state.v.iter_mut() {
            *v -= shift;
        }
        self.state.alpha += shift;
    }

    fn recenter_gamma_into_alpha(&mut self) {
        let t = self.data.t_len() as Real;
        let shift: Real = self.state.gamma.iter().sum::<Real>() / t;
        for g in self.state.gamma.iter_mut() {
            *g -= shift;
        }
        self.state.alpha += shift;
    }

    /// σ moves: log random walks against the Uniform(0, L) prior and the
    /// GMRF field term −rank·lnσ − S/(2σ²).
    pub fn update_sigmas(&mut self) {
        let rank_u = self.data.graph.car_rank();
        let s_u = pairwise_difference_sum(&self.state.u, &self.data.graph);
        let upper_u = self.spec.priors.sigma_u_upper;
        let (sigma_u, acc_u) = mh_log_scalar_step(
            &mut self.rng,
            self.state.sigma_u,
            self.scales.sigma_u * sigma_base(rank_u),
            |s| gmrf_sigma_target(s, s_u, rank_u, upper_u),
        );
        self.state.sigma_u = sigma_u;
        self.window.sigma_u.add(acc_u);
        self.totals.sigma_u.add(acc_u);

        // v is kept sum-to-zero, so its effective rank is n − 1.
        let rank_v = self.data.n().saturating_sub(1);
        let s_v: Real = self.state.v.iter().map(|v| v * v).sum();
        let upper_v = self.spec.priors.sigma_v_upper;
        let (sigma_v, acc_v) = mh_log_scalar_step(
            &mut self.rng,
            self.state.sigma_v,
            self.scales.sigma_v * sigma_base(rank_v),
            |s| gmrf_sigma_target(s, s_v, rank_v, upper_v),
        );
        self.state.sigma_v = sigma_v;
        self.window.sigma_v.add(acc_v);
        self.totals.sigma_v.add(acc_v);

        let rank_g = self.data.t_len().saturating_sub(2);
        let s_g = rw2_penalty(&self.state.gamma);
        let upper_g = self.spec.priors.sigma_gamma_upper;
        let (sigma_g, acc_g) = mh_log_scalar_step(
            &mut self.rng,
            self.state.sigma_gamma,
            self.scales.sigma_gamma * sigma_base(rank_g),
            |s| gmrf_sigma_target(s, s_g, rank_g, upper_g),
        );
        self.state.sigma_gamma = sigma_g;
        self.window.sigma_gamma.add(acc_g);
        self.totals.sigma_gamma.add(acc_g);
    }

    /// Full conditional P(z_i = c | ·) ∝ q_ic · exp ℓ_i(c), stabilized via
    /// log-sum-exp.
    pub fn z_full_conditional(&self, i: usize) -> Result<Vec<Real>, SamplerError> {
        let ctx = self.ctx();
        let n_clusters = self.state.n_clusters();
        let weights: Vec<Real> = (0..n_clusters)
            .map(|c| self.state.q[(i, c)].ln() + ctx.area_ll(&self.state, i, c))
            .collect();
        let norm = log_sum_exp(&weights);
        if !norm.is_finite() {
            return Err(SamplerError::DegenerateZ(i));
        }
        Ok(weights.iter().map(|w| (w - norm).exp()).collect())
    }

    /// Gibbs draw of every cluster label from its categorical conditional.
    pub fn update_z(&mut self) -> Result<(), SamplerError> {
        for i in 0..self.data.n() {
            let probs = self.z_full_conditional(i)?;
            let u: Real = self.rng.random();
            let mut acc = 0.0;
            let mut chosen = probs.len() - 1;
            for (c, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    chosen = c;
                    break;
                }
            }
            self.state.z[i] = chosen;
        }
        Ok(())
    }

    /// Conjugate Dirichlet draw of each membership row (flat variant):
    /// q_i ~ Dir(1 + 1{z_i=1}, …, 1 + 1{z_i=C}).
    pub fn update_q_flat(&mut self) {
        let n_clusters = self.state.n_clusters();
        for i in 0..self.data.n() {
            let mut total = 0.0;
            let mut gs = vec![0.0; n_clusters];
            for (c, g) in gs.iter_mut().enumerate() {
                let shape = if self.state.z[i] == c { 2.0 } else { 1.0 };
                *g = Gamma::new(shape, 1.0).expect("valid gamma").sample(&mut self.rng);
                total += *g;
            }
            for (c, g) in gs.iter().enumerate() {
                self.state.q[(i, c)] = g / total;
            }
        }
    }

    fn assignment_logit(&self, c: usize, i: usize) -> Real {
        self.state.assignment_u[(c, i)] + self.state.assignment_v[(c, i)]
    }

    /// ln q_{i,z_i} as a function of the assignment fields, optionally with
    /// one cluster's logit overridden by a proposal.
    fn ln_q_from_fields(&self, i: usize, override_c: Option<(usize, Real)>) -> Real {
        let n_clusters = self.state.n_clusters();
        let zi = self.state.z[i];
        let mut logits: Vec<Real> =
            (0..n_clusters).map(|c| self.assignment_logit(c, i)).collect();
        if let Some((c, val)) = override_c {
            logits[c] = val;
        }
        logits[zi] - log_sum_exp(&logits)
    }

    /// Metropolis updates of the spatial assignment machinery: single-site
    /// walks on u_i^c and v_i^c for the free clusters (the last cluster is
    /// the pinned reference), log-scale walks on σ_uc and σ_vc against
    /// HalfNormal priors, then a deterministic refresh of q from the fields.
    pub fn update_assignment_fields(&mut self) {
        let n_clusters = self.state.n_clusters();
        if n_clusters < 2 {
            return;
        }
        for c in 0..n_clusters - 1 {
            self.assignment_field_sites(c);
            self.assignment_sigma_updates(c);
        }
        self.refresh_q_from_fields();
    }

    /// Single-site walks on u_i^c and v_i^c for one free cluster.
    fn assignment_field_sites(&mut self, c: usize) {
        let n = self.data.n();
        {
            let sigma2_u = self.state.sigma_uc[c] * self.state.sigma_uc[c];
            for i in 0..n {
                if self.data.graph.is_isolated(i) {
                    continue;
                }
                let idx = c * n + i;
                let info = 0.25 + self.data.graph.degree(i) as Real / sigma2_u;
                let step = self.scales.assign_u[idx] * 2.4 / info.sqrt()
                    * std_normal(&mut self.rng);
                let cur = self.state.assignment_u[(c, i)];
                let new = cur + step;
                let mut prior_delta = 0.0;
                for &j in self.data.graph.neighbors(i) {
                    let d_old = cur - self.state.assignment_u[(c, j)];
                    let d_new = new - self.state.assignment_u[(c, j)];
                    prior_delta += (d_old * d_old - d_new * d_new) / (2.0 * sigma2_u);
                }
                let logit_new = new + self.state.assignment_v[(c, i)];
                let lik_cur = self.ln_q_from_fields(i, None);
                let lik_new = self.ln_q_from_fields(i, Some((c, logit_new)));
                let delta = prior_delta + lik_new - lik_cur;
                let accepted = ln_uniform(&mut self.rng) < delta;
                if accepted {
                    self.state.assignment_u[(c, i)] = new;
                }
                self.window.assign_u[idx].add(accepted);
                self.totals.assign_u[idx].add(accepted);
            }
        }
        let sigma2_v = self.state.sigma_vc[c] * self.state.sigma_vc[c];
        for i in 0..n {
            let idx = c * n + i;
            let info = 0.25 + 1.0 / sigma2_v;
            let step = self.scales.assign_v[idx] * 2.4 / info.sqrt()
                * std_normal(&mut self.rng);
            let cur = self.state.assignment_v[(c, i)];
            let new = cur + step;
            let prior_delta = (cur * cur - new * new) / (2.0 * sigma2_v);
            let logit_new = self.state.assignment_u[(c, i)] + new;
            let lik_cur = self.ln_q_from_fields(i, None);
            let lik_new = self.ln_q_from_fields(i, Some((c, logit_new)));
            let delta = prior_delta + lik_new - lik_cur;
            let accepted = ln_uniform(&mut self.rng) < delta;
            if accepted {
                self.state.assignment_v[(c, i)] = new;
            }
            self.window.assign_v[idx].add(accepted);
            self.totals.assign_v[idx].add(accepted);
        }
    }

    /// Log-scale walks on σ_uc, σ_vc against their HalfNormal priors.
    fn assignment_sigma_updates(&mut self, c: usize) {
        let n = self.data.n();
        {
            let rank_u = self.data.graph.car_rank();
            let field: Vec<Real> = self.state.assignment_u.row(c).to_vec();
            let s_uc = pairwise_difference_sum(&field, &self.data.graph);
            let hn_scale = self.spec.priors.assignment_sd_scale;
            let (sig, acc) = mh_log_scalar_step(
                &mut self.rng,
                self.state.sigma_uc[c],
                self.scales.sigma_uc[c] * sigma_base(rank_u),
                |s| half_normal_gmrf_sigma_target(s, s_uc, rank_u, hn_scale),
            );
            self.state.sigma_uc[c] = sig;
            self.window.sigma_uc[c].add(acc);
            self.totals.sigma_uc[c].add(acc);

            let s_vc: Real = self.state.assignment_v.row(c).iter().map(|v| v * v).sum();
            let (sig, acc) = mh_log_scalar_step(
                &mut self.rng,
                self.state.sigma_vc[c],
                self.scales.sigma_vc[c] * sigma_base(n),
                |s| half_normal_gmrf_sigma_target(s, s_vc, n, hn_scale),
            );
            self.state.sigma_vc[c] = sig;
            self.window.sigma_vc[c].add(acc);
            self.totals.sigma_vc[c].add(acc);
        }
    }

    fn refresh_q_from_fields(&mut self) {
        let n_clusters = self.state.n_clusters();
        for i in 0..self.data.n() {
            let logits: Vec<Real> =
                (0..n_clusters).map(|c| self.assignment_logit(c, i)).collect();
            let probs = softmax(&logits);
            for (c, p) in probs.iter().enumerate() {
                self.state.q[(i, c)] = *p;
            }
        }
    }

    // -- sweep orchestration ----------------------------------------------------

    /// One full sweep in the fixed update order.
    pub fn run_sweep(&mut self) -> Result<(), SamplerError> {
        let n_clusters = self.state.n_clusters();
        self.update_r();
        self.update_alpha();
        for c in 0..n_clusters {
            self.update_eta_block(c);
            self.update_eta_gamma_block(c);
            self.update_eta_level(c);
        }
        self.update_u_sites();
        self.recenter_u_into_v();
        self.update_v_sites();
        self.recenter_v_into_alpha();
        self.update_gamma_sites();
        self.recenter_gamma_into_alpha();
        self.update_sigmas();
        if n_clusters > 1 {
            if self.sweep + 1 > self.cfg.z_freeze() {
                self.update_z()?;
            }
            match self.spec.variant {
                Variant::MixtureFlat => self.update_q_flat(),
                Variant::MixtureSpatial => self.update_assignment_fields(),
                Variant::Standard => {}
            }
        }
        self.sweep += 1;
        self.post_sweep_bookkeeping();
        Ok(())
    }

    fn post_sweep_bookkeeping(&mut self) {
        let s = self.sweep;
        let burn = self.cfg.burn_in;
        // Accumulate η moments once the labels are free, burn-in only.
        if s <= burn && s > self.cfg.z_freeze() {
            for c in 0..self.state.n_clusters() {
                self.eta_accum[c].push(self.state.eta.row(c));
            }
        }
        // Adaptation, burn-in only, at window boundaries.
        if s <= burn && s % self.cfg.adaptation_window == 0 {
            let m = s.div_ceil(self.cfg.adaptation_window);
            self.adapt(1.0 / m as Real);
            self.refresh_eta_proposal();
            self.window.reset();
        }
        // Relabeling reference: running η mean over the last quarter of
        // burn-in.
        if self.state.n_clusters() > 1 && burn > 0 && s > burn - burn / 4 && s <= burn {
            self.relabel_sum = &self.relabel_sum + &self.state.eta;
            self.relabel_n += 1;
            if s == burn {
                self.relabel_ref = Some(self.relabel_sum.mapv(|v| v / self.relabel_n as Real));
            }
        }
        // Retention.
        if s > burn && (s - burn) % self.cfg.thinning == 0 {
            let recorded = self.relabeled_snapshot();
            let row = self.ctx().loglik_row(&self.state, self.cfg.loglik_kind);
            let mut counts = vec![0usize; self.state.n_clusters()];
            for &zi in &recorded.z {
                counts[zi] += 1;
            }
            for (c, &k) in counts.iter().enumerate() {
                if k == 0 {
                    self.empty_counts[c] += 1;
                }
            }
            self.draws.push(recorded);
            self.loglik_rows.push(row);
        }
    }

    fn relabeled_snapshot(&self) -> ParameterState {
        let n_clusters = self.state.n_clusters();
        if n_clusters <= 1 {
            return self.state.clone();
        }
        let Some(reference) = &self.relabel_ref else {
            return self.state.clone();
        };
        let perm = match_to_reference(&self.state.eta, reference);
        relabel_state(&self.state, &perm)
    }

    /// Rebuild each cluster's block-proposal factor from the accumulated
    /// empirical covariance (burn-in only).
    fn refresh_eta_proposal(&mut self) {
        let p = self.state.eta.ncols();
        let n_clusters = self.state.n_clusters();
        if self.scales.eta_chol.len() != n_clusters {
            self.scales.eta_chol = vec![Vec::new(); n_clusters];
        }
        for c in 0..n_clusters {
            let Some(mut cov) = self.eta_accum[c].covariance() else {
                continue;
            };
            // Relative floor keeps degenerate directions proposable.
            let sd2_prior = self.spec.priors.eta_sd * self.spec.priors.eta_sd;
            for j in 0..p {
                let base2 = 1.0 / (self.precond.eta_info[j] + 1.0 / sd2_prior);
                cov[j * p + j] += 1e-6 * base2;
            }
            if let Some(l) = cholesky(cov, p) {
                self.scales.eta_chol[c] = l;
            }
        }
    }

    fn adapt(&mut self, step: Real) {
        let t_scalar = self.cfg.target_accept_scalar;
        let t_block = self.cfg.target_accept_block;
        fn tune(scale: &mut Real, counts: &Counts, target: Real, step: Real) {
            if counts.attempts == 0 {
                return;
            }
            let ln = scale.ln() + step * (counts.rate() - target);
            *scale = ln.clamp(-20.0, 20.0).exp();
        }
        tune(&mut self.scales.r, &self.window.r, t_scalar, step);
        tune(&mut self.scales.alpha, &self.window.alpha, t_scalar, step);
        for (s, c) in self.scales.eta.iter_mut().zip(&self.window.eta) {
            tune(s, c, t_block, step);
        }
        for (s, c) in self.scales.eta_gamma.iter_mut().zip(&self.window.eta_gamma) {
            tune(s, c, t_block, step);
        }
        for (s, c) in self.scales.eta_level.iter_mut().zip(&self.window.eta_level) {
            tune(s, c, t_scalar, step);
        }
        for (s, c) in self.scales.u.iter_mut().zip(&self.window.u) {
            tune(s, c, t_scalar, step);
        }
        for (s, c) in self.scales.v.iter_mut().zip(&self.window.v) {
            tune(s, c, t_scalar, step);
        }
        for (s, c) in self.scales.gamma.iter_mut().zip(&self.window.gamma) {
            tune(s, c, t_scalar, step);
        }
        tune(&mut self.scales.sigma_u, &self.window.sigma_u, t_scalar, step);
        tune(&mut self.scales.sigma_v, &self.window.sigma_v, t_scalar, step);
        tune(
            &mut self.scales.sigma_gamma,
            &self.window.sigma_gamma,
            t_scalar,
            step,
        );
        for (s, c) in self.scales.assign_u.iter_mut().zip(&self.window.assign_u) {
            tune(s, c, t_scalar, step);
        }
        for (s, c) in self.scales.assign_v.iter_mut().zip(&self.window.assign_v) {
            tune(s, c, t_scalar, step);
        }
        for (s, c) in self.scales.sigma_uc.iter_mut().zip(&self.window.sigma_uc) {
            tune(s, c, t_scalar, step);
        }
        for (s, c) in self.scales.sigma_vc.iter_mut().zip(&self.window.sigma_vc) {
            tune(s, c, t_scalar, step);
        }
    }

    /// Run up to `n_sweeps` more sweeps (stopping at the configured total).
    pub fn advance(&mut self, n_sweeps: usize) -> Result<(), SamplerError> {
        let target = (self.sweep + n_sweeps).min(self.cfg.n_iterations);
        while self.sweep < target {
            self.run_sweep()?;
        }
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.sweep >= self.cfg.n_iterations
    }

    /// Finalize into the retained-draw container.
    pub fn finish(self) -> PosteriorDraws {
        let n_obs = self.xb.n_obs();
        let s = self.loglik_rows.len();
        let mut loglik = Array2::zeros((s, n_obs));
        for (k, row) in self.loglik_rows.iter().enumerate() {
            for (o, v) in row.iter().enumerate() {
                loglik[(k, o)] = *v;
            }
        }
        let mut warnings = Vec::new();
        for (c, &k) in self.empty_counts.iter().enumerate() {
            if s > 0 && 2 * k > s {
                warnings.push(format!(
                    "cluster {} was empty in {k} of {s} retained draws; consider a smaller C",
                    c + 1
                ));
            }
        }
        let site_row = |name: &str, counts: &[Counts], scales: &[Real]| -> BlockAcceptance {
            let mut total = Counts::default();
            for c in counts {
                total.merge(c);
            }
            BlockAcceptance {
                block: name.to_string(),
                attempts: total.attempts,
                accepts: total.accepts,
                rate: total.rate(),
                scale: geometric_mean(scales),
            }
        };
        let scalar_row = |name: &str, c: &Counts, scale: Real| BlockAcceptance {
            block: name.to_string(),
            attempts: c.attempts,
            accepts: c.accepts,
            rate: c.rate(),
            scale,
        };
        let mut acceptance = vec![
            scalar_row("r", &self.totals.r, self.scales.r),
            scalar_row("alpha", &self.totals.alpha, self.scales.alpha),
        ];
        for (c, counts) in self.totals.eta.iter().enumerate() {
            acceptance.push(scalar_row(&format!("eta_{c}"), counts, self.scales.eta[c]));
        }
        for (c, counts) in self.totals.eta_gamma.iter().enumerate() {
            acceptance.push(scalar_row(
                &format!("eta_gamma_{c}"),
                counts,
                self.scales.eta_gamma[c],
            ));
        }
        for (c, counts) in self.totals.eta_level.iter().enumerate() {
            acceptance.push(scalar_row(
                &format!("eta_level_{c}"),
                counts,
                self.scales.eta_level[c],
            ));
        }
        acceptance.push(site_row("u", &self.totals.u, &self.scales.u));
        acceptance.push(site_row("v", &self.totals.v, &self.scales.v));
        acceptance.push(site_row("gamma", &self.totals.gamma, &self.scales.gamma));
        acceptance.push(scalar_row("sigma_u", &self.totals.sigma_u, self.scales.sigma_u));
        acceptance.push(scalar_row("sigma_v", &self.totals.sigma_v, self.scales.sigma_v));
        acceptance.push(scalar_row(
            "sigma_gamma",
            &self.totals.sigma_gamma,
            self.scales.sigma_gamma,
        ));
        if !self.totals.assign_u.is_empty() {
            acceptance.push(site_row("assign_u", &self.totals.assign_u, &self.scales.assign_u));
            acceptance.push(site_row("assign_v", &self.totals.assign_v, &self.scales.assign_v));
            acceptance.push(site_row("sigma_uc", &self.totals.sigma_uc, &self.scales.sigma_uc));
            acceptance.push(site_row("sigma_vc", &self.totals.sigma_vc, &self.scales.sigma_vc));
        }
        PosteriorDraws {
            draws: self.draws,
            loglik,
            acceptance,
            config: self.cfg,
            warnings,
        }
    }

    /// Run all remaining sweeps and finalize.
    pub fn run(mut self) -> Result<PosteriorDraws, SamplerError> {
        let left = self.cfg.n_iterations - self.sweep;
        self.advance(left)?;
        Ok(self.finish())
    }

    // -- checkpointing ------------------------------------------------------------

    pub fn checkpoint(&self) -> Checkpoint {
        let pos = self.rng.get_word_pos();
        Checkpoint {
            sweep: self.sweep,
            config: self.cfg.clone(),
            state: self.state.clone(),
            rng_seed: self.rng_seed_bytes,
            rng_word_pos: ((pos >> 64) as u64, pos as u64),
            scales: self.scales.clone(),
            eta_accum: self.eta_accum.clone(),
            window: self.window.clone(),
            totals: self.totals.clone(),
            relabel_sum: self.relabel_sum.clone(),
            relabel_n: self.relabel_n,
            relabel_ref: self.relabel_ref.clone(),
            draws: self.draws.clone(),
            loglik_rows: self.loglik_rows.clone(),
            empty_counts: self.empty_counts.clone(),
        }
    }

    /// Rebuild a sampler mid-run from a checkpoint.
    pub fn restore(
        data: &'a PanelDataset,
        spec: ModelSpec,
        ckpt: Checkpoint,
    ) -> Result<Self, SamplerError> {
        let mut sampler = Self::new(data, spec, ckpt.config.clone())?;
        if sampler.state.n_clusters() != ckpt.state.n_clusters()
            || sampler.state.u.len() != ckpt.state.u.len()
            || sampler.state.gamma.len() != ckpt.state.gamma.len()
            || sampler.state.eta.ncols() != ckpt.state.eta.ncols()
        {
            return Err(SamplerError::BadCheckpoint(
                "checkpoint dimensions do not match the dataset/model".into(),
            ));
        }
        let mut rng = ChaCha8Rng::from_seed(ckpt.rng_seed);
        let pos = ((ckpt.rng_word_pos.0 as u128) << 64) | ckpt.rng_word_pos.1 as u128;
        rng.set_word_pos(pos);
        sampler.rng = rng;
        sampler.rng_seed_bytes = ckpt.rng_seed;
        sampler.sweep = ckpt.sweep;
        sampler.state = ckpt.state;
        sampler.scales = ckpt.scales;
        sampler.eta_accum = ckpt.eta_accum;
        sampler.window = ckpt.window;
        sampler.totals = ckpt.totals;
        sampler.relabel_sum = ckpt.relabel_sum;
        sampler.relabel_n = ckpt.relabel_n;
        sampler.relabel_ref = ckpt.relabel_ref;
        sampler.draws = ckpt.draws;
        sampler.loglik_rows = ckpt.loglik_rows;
        sampler.empty_counts = ckpt.empty_counts;
        Ok(sampler)
    }
}

/// Log-scale proposal base for a GMRF sd at a given rank (the conditional
/// curvature of ln σ is ≈ 2·rank at the mode).
fn sigma_base(rank: usize) -> Real {
    2.4 / (2.0 * rank as Real + 1.0).sqrt()
}

/// Crude likelihood-information proxies from per-area mean rates at the
/// initialization dispersion (r = 10). Per NB observation the information of
/// a log-mean shift is λr/(λ+r).
fn build_precond(data: &PanelDataset, xb: &CrossBasis, prior_only: bool) -> Precond {
    let n = data.n();
    let t_len = data.t_len();
    let max_lag = xb.max_lag();
    let m = t_len - max_lag;
    let p = xb.dim();
    let r_hat = 10.0;
    let mut w = vec![0.0; n];
    if !prior_only {
        for i in 0..n {
            let mut mean = 0.0;
            for t0 in max_lag..t_len {
                mean += data.y[(i, t0)] as Real;
            }
            let lambda = (mean / m as Real).max(0.1);
            w[i] = lambda * r_hat / (lambda + r_hat);
        }
    }
    let area_info: Vec<Real> = w.iter().map(|wi| wi * m as Real).collect();
    let mut time_info = vec![0.0; t_len];
    let w_total: Real = w.iter().sum();
    for t0 in max_lag..t_len {
        time_info[t0] = w_total;
    }
    let alpha_info: Real = area_info.iter().sum();
    let mut eta_info = vec![0.0; p];
    for i in 0..n {
        for t0 in max_lag..t_len {
            let row = xb.row(i, t0);
            for (j, b) in row.iter().enumerate() {
                eta_info[j] += b * b * w[i];
            }
        }
    }
    let mut rw2_diag = vec![0.0; t_len];
    for (t, slot) in rw2_diag.iter_mut().enumerate() {
        for (offset, coef2) in [(0usize, 1.0), (1, 4.0), (2, 1.0)] {
            let sidx = t + offset;
            if sidx >= 2 && sidx < t_len {
                *slot += coef2;
            }
        }
    }
    // Level direction: least squares of the constant 1 on the basis rows.
    let mut ata = vec![vec![0.0; p]; p];
    let mut atb = vec![0.0; p];
    for i in 0..n {
        for t0 in max_lag..t_len {
            let row = xb.row(i, t0);
            for (a, ba) in row.iter().enumerate() {
                for (b, bb) in row.iter().enumerate() {
                    ata[a][b] += ba * bb;
                }
                atb[a] += ba;
            }
        }
    }
    let level_dir = solve_linear_system(&mut ata, &mut atb);
    let mut level_area_mean = vec![0.0; n];
    for (i, slot) in level_area_mean.iter_mut().enumerate() {
        let mut acc = 0.0;
        for t0 in max_lag..t_len {
            let row = xb.row(i, t0);
            for (j, b) in row.iter().enumerate() {
                acc += b * level_dir[j];
            }
        }
        *slot = acc / m as Real;
    }
    Precond {
        area_info,
        time_info,
        alpha_info,
        eta_info,
        rw2_diag,
        level_dir,
        level_area_mean,
    }
}

/// Gaussian elimination with partial pivoting (small dense systems).
fn solve_linear_system(a: &mut [Vec<Real>], b: &mut [Real]) -> Vec<Real> {
    let n = b.len();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-12 {
            continue;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / d;
            for c2 in col..n {
                a[r][c2] -= f * a[col][c2];
            }
            b[r] -= f * b[col];
        }
    }
    (0..n)
        .map(|i| if a[i][i].abs() < 1e-12 { 0.0 } else { b[i] / a[i][i] })
        .collect()
}

fn geometric_mean(xs: &[Real]) -> Real {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|s| s.ln()).sum::<Real>() / xs.len() as Real).exp()
}

/// RW2 penalty terms touching index `t0`, with `gamma[t0]` shifted by `step`.
fn rw2_local(gamma: &[Real], t0: usize, step: Real) -> Real {
    let t_len = gamma.len();
    let g = |s: usize| -> Real {
        if s == t0 {
            gamma[s] + step
        } else {
            gamma[s]
        }
    };
    let mut acc = 0.0;
    for s in t0..=(t0 + 2) {
        if s >= 2 && s < t_len {
            let d = g(s) - 2.0 * g(s - 1) + g(s - 2);
            acc += d * d;
        }
    }
    acc
}

/// Log target of a GMRF sd under a Uniform(0, upper) prior.
fn gmrf_sigma_target(sigma: Real, s: Real, rank: usize, upper: Real) -> Real {
    if sigma <= 0.0 || sigma >= upper {
        return f64::NEG_INFINITY;
    }
    -(rank as Real) * sigma.ln() - s / (2.0 * sigma * sigma)
}

/// Log target of a GMRF sd under a HalfNormal(0, scale) prior.
fn half_normal_gmrf_sigma_target(sigma: Real, s: Real, rank: usize, scale: Real) -> Real {
    if sigma <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = sigma / scale;
    -0.5 * z * z - (rank as Real) * sigma.ln() - s / (2.0 * sigma * sigma)
}

/// Permutation matching a draw's η rows to reference rows by squared
/// Euclidean distance: `perm[c]` is the draw cluster assigned to reference
/// slot c.
pub fn match_to_reference(eta: &Array2<Real>, reference: &Array2<Real>) -> Vec<usize> {
    let n_clusters = eta.nrows();
    let p = eta.ncols();
    let mut cost = vec![vec![0.0; n_clusters]; n_clusters];
    for (c, row) in cost.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            let mut d2 = 0.0;
            for j in 0..p {
                let d = eta[(k, j)] - reference[(c, j)];
                d2 += d * d;
            }
            *cell = d2;
        }
    }
    min_cost_assignment(&cost)
}

/// Apply a cluster permutation to a state: row c of the output takes row
/// `perm[c]` of the input; labels and membership columns follow.
pub fn relabel_state(state: &ParameterState, perm: &[usize]) -> ParameterState {
    let n_clusters = state.n_clusters();
    debug_assert_eq!(perm.len(), n_clusters);
    let mut inverse = vec![0usize; n_clusters];
    for (c, &k) in perm.iter().enumerate() {
        inverse[k] = c;
    }
    let mut out = state.clone();
    for c in 0..n_clusters {
        out.eta.row_mut(c).assign(&state.eta.row(perm[c]));
        for i in 0..state.q.nrows() {
            out.q[(i, c)] = state.q[(i, perm[c])];
        }
        if state.assignment_u.nrows() == n_clusters {
            out.assignment_u.row_mut(c).assign(&state.assignment_u.row(perm[c]));
            out.assignment_v.row_mut(c).assign(&state.assignment_v.row(perm[c]));
            out.sigma_uc[c] = state.sigma_uc[perm[c]];
            out.sigma_vc[c] = state.sigma_vc[perm[c]];
        }
    }
    for (zi, &orig) in out.z.iter_mut().zip(&state.z) {
        *zi = inverse[orig];
    }
    out
}

/// Build a sampler and run the whole chain.
pub fn run_chain(
    data: &PanelDataset,
    spec: ModelSpec,
    cfg: SamplerConfig,
) -> Result<PosteriorDraws, SamplerError> {
    Sampler::new(data, spec, cfg)?.run()
}

// ---------------------------------------------------------------------------
// Label initialization
// ---------------------------------------------------------------------------

/// Initial cluster labels: k-means on per-area lag profiles of the
/// correlation between log crude incidence and lagged exposure. Falls back
/// to uniform random labels when the features or the clustering degenerate.
fn init_labels<R: Rng>(
    data: &PanelDataset,
    xb: &CrossBasis,
    n_clusters: usize,
    rng: &mut R,
) -> Vec<usize> {
    let n = data.n();
    let t_len = data.t_len();
    let max_lag = xb.max_lag();
    let dim = max_lag + 1;
    let mut features = vec![vec![0.0; dim]; n];
    let mut degenerate = false;
    for (i, feat) in features.iter_mut().enumerate() {
        let inc: Vec<Real> = (max_lag..t_len)
            .map(|t0| ((data.y[(i, t0)] as Real + 0.5) / data.offsets[i]).ln())
            .collect();
        for (lag, slot) in feat.iter_mut().enumerate() {
            let ex: Vec<Real> = (max_lag..t_len).map(|t0| data.x[(i, t0 - lag)]).collect();
            match pearson(&inc, &ex) {
                Some(c) => *slot = c,
                None => {
                    degenerate = true;
                }
            }
        }
    }
    let labels = if degenerate {
        None
    } else {
        kmeans(&features, n_clusters, rng)
    };
    labels.unwrap_or_else(|| (0..n).map(|_| rng.random_range(0..n_clusters)).collect())
}

/// Ridge least squares of centered log crude rates on the cross-basis,
/// separately per initial cluster.
fn init_eta(state: &mut ParameterState, data: &PanelDataset, xb: &CrossBasis) {
    let p = xb.dim();
    let t_len = data.t_len();
    let max_lag = xb.max_lag();
    for c in 0..state.n_clusters() {
        let members: Vec<usize> =
            (0..data.n()).filter(|&i| state.z[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut targets = Vec::new();
        for &i in &members {
            for t0 in max_lag..t_len {
                targets.push(((data.y[(i, t0)] as Real + 0.5) / data.offsets[i]).ln());
            }
        }
        let mean_t: Real = targets.iter().sum::<Real>() / targets.len() as Real;
        let mut ata = vec![vec![0.0; p]; p];
        let mut atb = vec![0.0; p];
        let mut idx = 0;
        for &i in &members {
            for t0 in max_lag..t_len {
                let row = xb.row(i, t0);
                let g = targets[idx] - mean_t;
                idx += 1;
                for (a, ba) in row.iter().enumerate() {
                    for (b, bb) in row.iter().enumerate() {
                        ata[a][b] += ba * bb;
                    }
                    atb[a] += ba * g;
                }
            }
        }
        let max_diag = (0..p).map(|j| ata[j][j]).fold(0.0f64, f64::max);
        for j in 0..p {
            ata[j][j] += 1e-6 * max_diag + 1e-10;
        }
        let coefs = solve_linear_system(&mut ata, &mut atb);
        for (j, e) in coefs.iter().enumerate() {
            state.eta[(c, j)] = *e;
        }
    }
}

fn pearson(a: &[Real], b: &[Real]) -> Option<Real> {
    let n = a.len() as Real;
    let ma = a.iter().sum::<Real>() / n;
    let mb = b.iter().sum::<Real>() / n;
    let mut sa = 0.0;
    let mut sb = 0.0;
    let mut sab = 0.0;
    for (x, y) in a.iter().zip(b) {
        sa += (x - ma) * (x - ma);
        sb += (y - mb) * (y - mb);
        sab += (x - ma) * (y - mb);
    }
    if sa <= 0.0 || sb <= 0.0 {
        return None;
    }
    Some(sab / (sa * sb).sqrt())
}

/// Lloyd's algorithm with greedy farthest-point seeding.
fn kmeans<R: Rng>(features: &[Vec<Real>], k: usize, rng: &mut R) -> Option<Vec<usize>> {
    let n = features.len();
    if n < k {
        return None;
    }
    let dim = features[0].len();
    let d2 =
        |a: &[Real], b: &[Real]| -> Real { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let mut centers: Vec<Vec<Real>> = Vec::with_capacity(k);
    centers.push(features[rng.random_range(0..n)].clone());
    while centers.len() < k {
        let (mut best_i, mut best_d) = (0usize, -1.0);
        for (i, f) in features.iter().enumerate() {
            let dmin = centers.iter().map(|c| d2(f, c)).fold(f64::INFINITY, f64::min);
            if dmin > best_d {
                best_d = dmin;
                best_i = i;
            }
        }
        centers.push(features[best_i].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..25 {
        let mut changed = false;
        for (i, f) in features.iter().enumerate() {
            let (mut best_c, mut best_d) = (0usize, f64::INFINITY);
            for (c, center) in centers.iter().enumerate() {
                let d = d2(f, center);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, f) in features.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i]].iter_mut().zip(f) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                return None;
            }
            for s in sums[c].iter_mut() {
                *s /= counts[c] as Real;
            }
        }
        centers = sums;
        if !changed {
            break;
        }
    }
    Some(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyGraph;
    use crate::model::{area_cluster_loglik, PriorSpec};
    use crate::spline::SplineSpec;
    use crate::CrossBasisSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn tiny_dataset(n: usize, t_len: usize, seed: u64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, t_len), |_| 0.2 + rng.random::<Real>());
        let y = Array2::from_shape_fn((n, t_len), |_| rng.random_range(0u64..8));
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
        let graph = AdjacencyGraph::from_edges(&edges, n).unwrap();
        PanelDataset::new(
            (0..n).map(|i| format!("a{i}")).collect(),
            y,
            x,
            vec![2.0; n],
            graph,
        )
        .unwrap()
    }

    fn tiny_spec(variant: Variant, n_clusters: usize) -> ModelSpec {
        ModelSpec {
            variant,
            n_clusters,
            crossbasis: CrossBasisSpec::new(
                2,
                SplineSpec::new(vec![0.7], (0.1, 1.3), false).unwrap(),
                SplineSpec::new(vec![1.0], (0.0, 2.0), true).unwrap(),
            )
            .unwrap(),
            priors: PriorSpec::default(),
        }
    }

    fn short_cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_iterations: 60,
            burn_in: 30,
            thinning: 3,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn zero_scale_proposals_always_accept() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (x, acc) = mh_scalar_step(&mut rng, 1.3, 0.0, |v| -v * v);
            assert!(acc);
            assert_eq!(x, 1.3);
            let (x, acc) = mh_log_scalar_step(&mut rng, 0.7, 0.0, |v| -v);
            assert!(acc);
            assert_eq!(x, 0.7);
            let mut block = [0.1, -0.2];
            let acc = mh_block_step(&mut rng, &mut block, 0.0, |v| -v.iter().sum::<Real>());
            assert!(acc);
        }
    }

    #[test]
    fn log_scale_walk_respects_support_bound() {
        // Target −∞ above the bound: proposals beyond it are always rejected.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let upper = 10.0;
        let mut x = 8.0;
        for _ in 0..2000 {
            let (next, _) =
                mh_log_scalar_step(&mut rng, x, 1.5, |v| gmrf_sigma_target(v, 0.4, 3, upper));
            x = next;
            assert!(x < upper, "escaped the prior support: {x}");
        }
    }

    #[test]
    fn block_step_recovers_gaussian_stand_in() {
        // Conjugate Gaussian stand-in: target N(μ*, σ*²) iid over 3 dims.
        let mu = [0.7, -1.2, 0.4];
        let sigma = 0.5;
        let target = |v: &[Real]| -> Real {
            v.iter()
                .zip(&mu)
                .map(|(x, m)| -(x - m) * (x - m) / (2.0 * sigma * sigma))
                .sum()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x = vec![0.0; 3];
        let scale = 2.38 / (3.0f64).sqrt() * sigma;
        let keep = 40_000;
        let mut chains = vec![Vec::with_capacity(keep); 3];
        for it in 0..keep + 2000 {
            mh_block_step(&mut rng, &mut x, scale, target);
            if it >= 2000 {
                for (c, chain) in chains.iter_mut().enumerate() {
                    chain.push(x[c]);
                }
            }
        }
        for (c, chain) in chains.iter().enumerate() {
            let mean = chain.iter().sum::<Real>() / chain.len() as Real;
            let ess = crate::outputs::effective_sample_size(chain);
            let se = sigma / ess.sqrt();
            assert!(
                (mean - mu[c]).abs() < 3.0 * se,
                "dim {c}: mean {mean} vs {} (se {se}, ess {ess})",
                mu[c]
            );
        }
    }

    #[test]
    fn z_conditional_equals_q_when_surfaces_match() {
        let data = tiny_dataset(4, 10, 5);
        let spec = tiny_spec(Variant::MixtureFlat, 2);
        let mut sampler = Sampler::new(&data, spec, short_cfg(1)).unwrap();
        let shared = sampler.state.eta.row(0).to_owned();
        sampler.state.eta.row_mut(1).assign(&shared);
        sampler.state.q[(1, 0)] = 0.83;
        sampler.state.q[(1, 1)] = 0.17;
        let probs = sampler.z_full_conditional(1).unwrap();
        assert_abs_diff_eq!(probs[0], 0.83, epsilon = 1e-12);
        assert_abs_diff_eq!(probs[1], 0.17, epsilon = 1e-12);
    }

    #[test]
    fn z_degenerate_membership_pins_label() {
        let data = tiny_dataset(3, 10, 6);
        let spec = tiny_spec(Variant::MixtureFlat, 2);
        let mut sampler = Sampler::new(&data, spec, short_cfg(2)).unwrap();
        for i in 0..3 {
            sampler.state.q[(i, 0)] = 1.0;
            sampler.state.q[(i, 1)] = 0.0;
        }
        for _ in 0..20 {
            sampler.update_z().unwrap();
            assert!(sampler.state.z.iter().all(|&z| z == 0));
        }
    }

    #[test]
    fn z_conditional_matches_enumeration() {
        let data = tiny_dataset(4, 9, 7);
        let spec = tiny_spec(Variant::MixtureFlat, 2);
        let mut sampler = Sampler::new(&data, spec, short_cfg(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for j in 0..sampler.state.eta.ncols() {
            sampler.state.eta[(1, j)] = 0.3 * rng.random::<Real>();
        }
        for i in 0..4 {
            sampler.state.q[(i, 0)] = 0.5;
            sampler.state.q[(i, 1)] = 0.5;
        }
        let xb = crate::spline::build_crossbasis(&data.x, &sampler.spec.crossbasis).unwrap();
        for i in 0..4 {
            let ll0 = area_cluster_loglik(&sampler.state, &data, &xb, i, 0).unwrap();
            let ll1 = area_cluster_loglik(&sampler.state, &data, &xb, i, 1).unwrap();
            let delta = ll0 - ll1;
            let expect = 1.0 / (1.0 + (-delta).exp());
            let probs = sampler.z_full_conditional(i).unwrap();
            assert_abs_diff_eq!(probs[0], expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn q_flat_conjugate_moments() {
        // E[q_{i,z_i}] = 2/(C+1); E[q_ic] = 1/(C+1) otherwise.
        let data = tiny_dataset(3, 9, 8);
        let n_clusters = 5;
        let spec = tiny_spec(Variant::MixtureFlat, n_clusters);
        let mut sampler = Sampler::new(&data, spec, short_cfg(4)).unwrap();
        sampler.state.z = vec![2, 0, 4];
        let reps = 100_000;
        let mut mean_own = 0.0;
        let mut mean_other = 0.0;
        for _ in 0..reps {
            sampler.update_q_flat();
            mean_own += sampler.state.q[(0, 2)];
            mean_other += sampler.state.q[(0, 1)];
        }
        mean_own /= reps as Real;
        mean_other /= reps as Real;
        // sd of a Dirichlet component ≈ 0.18; 3 MC se with 1e5 draws.
        let se = 0.2 / (reps as Real).sqrt();
        assert!((mean_own - 2.0 / 6.0).abs() < 3.0 * se, "own {mean_own}");
        assert!((mean_other - 1.0 / 6.0).abs() < 3.0 * se, "other {mean_other}");
    }

    #[test]
    fn assignment_acceptance_favors_occupied_cluster() {
        // Two areas, both in cluster 0: raising u^0 must have a higher
        // acceptance ratio than lowering it by the same amount.
        let data = tiny_dataset(2, 8, 10);
        let spec = tiny_spec(Variant::MixtureSpatial, 2);
        let mut sampler = Sampler::new(&data, spec, short_cfg(5)).unwrap();
        sampler.state.z = vec![0, 0];
        let up = sampler.ln_q_from_fields(0, Some((0, 0.4)));
        let down = sampler.ln_q_from_fields(0, Some((0, -0.4)));
        assert!(
            up > down,
            "raising the occupied cluster's field must raise its membership"
        );
    }

    #[test]
    fn assignment_sites_reach_known_stationary_distribution() {
        // Two-area path, C = 2, labels fixed at (0, 1), σ's pinned at 1:
        // π(u1,u2,v1,v2) ∝ exp(−(u1−u2)²/2)·exp(−(v1²+v2²)/2)·q_{1,0}·q_{2,1}
        // with q from the softmax of u_i+v_i against the pinned reference.
        // The probability mass of {u1 > 0} from a grid quadrature must match
        // the empirical frequency from the site updater within 2%.
        let data = tiny_dataset(2, 8, 11);
        let spec = tiny_spec(Variant::MixtureSpatial, 2);
        let mut cfg = short_cfg(6);
        cfg.prior_only = true;
        let mut sampler = Sampler::new(&data, spec, cfg).unwrap();
        sampler.state.z = vec![0, 1];

        // Quadrature oracle after integrating (u1, u2) analytically: with
        // logits l_i = u_i + v_i, the joint reduces to a 2-D density
        // ∝ exp(−(l1−l2)²/6)·σ(l1)(1−σ(l2)) and u1 | l is Gaussian with
        // mean (2l1+l2)/3 and variance 2/3, so P(u1 > 0 | l) is a probit.
        let phi = |z: Real| -> Real {
            // Abramowitz–Stegun 7.1.26 erf approximation.
            let x = z / std::f64::consts::SQRT_2;
            let (sign, x) = if x < 0.0 { (-1.0, -x) } else { (1.0, x) };
            let t = 1.0 / (1.0 + 0.3275911 * x);
            let poly = t
                * (0.254829592
                    + t * (-0.284496736
                        + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
            let erf = 1.0 - poly * (-x * x).exp();
            0.5 * (1.0 + sign * erf)
        };
        let sigmoid = |l: Real| 1.0 / (1.0 + (-l).exp());
        let k = 1500;
        let lo = -35.0;
        let hi = 35.0;
        let stepw = (hi - lo) / (k as Real - 1.0);
        let mut mass_pos = 0.0;
        let mut mass_all = 0.0;
        for g1 in 0..k {
            let l1 = lo + stepw * g1 as Real;
            for g2 in 0..k {
                let l2 = lo + stepw * g2 as Real;
                let d = l1 - l2;
                let weight = (-(d * d) / 6.0).exp() * sigmoid(l1) * (1.0 - sigmoid(l2));
                mass_all += weight;
                let mu = (2.0 * l1 + l2) / 3.0;
                mass_pos += weight * phi(mu / (2.0f64 / 3.0).sqrt());
            }
        }
        let oracle = mass_pos / mass_all;

        let mut hits = 0usize;
        let steps = 1_000_000usize;
        for _ in 0..steps {
            sampler.assignment_field_sites(0);
            assert_eq!(sampler.state.sigma_uc[0], 1.0);
            if sampler.state.assignment_u[(0, 0)] > 0.0 {
                hits += 1;
            }
        }
        let empirical = hits as Real / steps as Real;
        assert!(
            (empirical - oracle).abs() < 0.02,
            "empirical {empirical:.4} vs quadrature {oracle:.4}"
        );
    }

    #[test]
    fn relabeling_canonicalizes_permuted_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n_clusters = 3;
        let p = 4;
        let reference = Array2::from_shape_fn((n_clusters, p), |_| rng.random::<Real>());
        let mut draws = Vec::new();
        for _ in 0..20 {
            let mut st = ParameterState::zeros(5, 6, n_clusters, p, false);
            st.eta = &reference + &Array2::from_shape_fn((n_clusters, p), |_| {
                0.05 * (rng.random::<Real>() - 0.5)
            });
            for z in st.z.iter_mut() {
                *z = rng.random_range(0..n_clusters);
            }
            draws.push(st);
        }
        let canonical: Vec<ParameterState> = draws
            .iter()
            .map(|st| relabel_state(st, &match_to_reference(&st.eta, &reference)))
            .collect();
        // Permute labels arbitrarily per draw; canonicalization must undo it.
        let perms = [[2, 0, 1], [1, 2, 0], [0, 2, 1], [2, 1, 0]];
        for (k, st) in draws.iter().enumerate() {
            let shuffled = relabel_state(st, &perms[k % perms.len()]);
            let recovered =
                relabel_state(&shuffled, &match_to_reference(&shuffled.eta, &reference));
            assert_eq!(recovered.eta, canonical[k].eta);
            assert_eq!(recovered.z, canonical[k].z);
        }
    }

    #[test]
    fn relabel_state_moves_labels_consistently() {
        let mut st = ParameterState::zeros(3, 4, 2, 2, true);
        st.eta[(0, 0)] = 1.0;
        st.eta[(1, 0)] = 2.0;
        st.z = vec![0, 1, 0];
        st.q[(0, 0)] = 0.9;
        st.q[(0, 1)] = 0.1;
        st.sigma_uc = vec![0.5, 0.7];
        st.sigma_vc = vec![0.6, 0.8];
        let out = relabel_state(&st, &[1, 0]);
        assert_eq!(out.eta[(0, 0)], 2.0);
        assert_eq!(out.eta[(1, 0)], 1.0);
        assert_eq!(out.z, vec![1, 0, 1]);
        assert_abs_diff_eq!(out.q[(0, 0)], 0.1);
        assert_abs_diff_eq!(out.q[(0, 1)], 0.9);
        assert_eq!(out.sigma_uc, vec![0.7, 0.5]);
    }

    #[test]
    fn bad_configs_rejected() {
        let cfg = SamplerConfig {
            burn_in: 100,
            n_iterations: 100,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SamplerConfig {
            thinning: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn retention_bookkeeping_single_draw() {
        // burn_in = n_iterations − thinning ⇒ exactly one retained draw.
        let data = tiny_dataset(3, 8, 13);
        let spec = tiny_spec(Variant::Standard, 1);
        let cfg = SamplerConfig {
            n_iterations: 23,
            burn_in: 20,
            thinning: 3,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(cfg.n_retained(), 1);
        let draws = Sampler::new(&data, spec, cfg).unwrap().run().unwrap();
        assert_eq!(draws.n_draws(), 1);
    }

    #[test]
    fn recentring_keeps_sums_at_zero() {
        let data = tiny_dataset(5, 10, 14);
        let spec = tiny_spec(Variant::MixtureFlat, 2);
        let mut sampler = Sampler::new(&data, spec, short_cfg(7)).unwrap();
        for _ in 0..25 {
            sampler.run_sweep().unwrap();
            let su: Real = sampler.state.u.iter().sum();
            let sv: Real = sampler.state.v.iter().sum();
            let sg: Real = sampler.state.gamma.iter().sum();
            assert!(su.abs() < 1e-10, "Σu = {su}");
            assert!(sv.abs() < 1e-10, "Σv = {sv}");
            assert!(sg.abs() < 1e-10, "Σγ = {sg}");
            for i in 0..5 {
                let total: Real = (0..2).map(|c| sampler.state.q[(i, c)]).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recentring_preserves_predictors() {
        let data = tiny_dataset(5, 10, 15);
        let spec = tiny_spec(Variant::Standard, 1);
        let mut sampler = Sampler::new(&data, spec, short_cfg(8)).unwrap();
        // Perturb the fields, then recenter and check every predictor.
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for i in 0..5 {
            sampler.state.u[i] = rng.random::<Real>() - 0.5;
            sampler.state.v[i] = rng.random::<Real>() - 0.5;
        }
        for t in 0..10 {
            sampler.state.gamma[t] = rng.random::<Real>() - 0.5;
        }
        let ctx = sampler.ctx();
        let before: Vec<Real> = (0..5)
            .flat_map(|i| (2..10).map(move |t0| (i, t0)))
            .map(|(i, t0)| ctx.ln_lambda(&sampler.state, i, t0, 0))
            .collect();
        sampler.recenter();
        let ctx = sampler.ctx();
        let after: Vec<Real> = (0..5)
            .flat_map(|i| (2..10).map(move |t0| (i, t0)))
            .map(|(i, t0)| ctx.ln_lambda(&sampler.state, i, t0, 0))
            .collect();
        for (a, b) in before.iter().zip(&after) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let data = tiny_dataset(4, 10, 16);
        let spec = tiny_spec(Variant::MixtureSpatial, 2);
        let cfg = SamplerConfig {
            n_iterations: 120,
            burn_in: 60,
            thinning: 4,
            seed: 17,
            ..Default::default()
        };
        let mut full = Sampler::new(&data, spec.clone(), cfg.clone()).unwrap();
        full.advance(120).unwrap();
        let reference = full.finish();

        let mut first = Sampler::new(&data, spec.clone(), cfg).unwrap();
        first.advance(47).unwrap();
        let ckpt = first.checkpoint();
        // Serialize through JSON like the CLI does.
        let text = serde_json::to_string(&ckpt).unwrap();
        let restored: Checkpoint = serde_json::from_str(&text).unwrap();
        let mut resumed = Sampler::restore(&data, spec, restored).unwrap();
        resumed.advance(1000).unwrap();
        let outcome = resumed.finish();

        assert_eq!(reference.draws.len(), outcome.draws.len());
        for (a, b) in reference.draws.iter().zip(&outcome.draws) {
            assert_eq!(a, b);
        }
        assert_eq!(reference.loglik, outcome.loglik);
    }
}
