//! Forward simulation from the generative model and recovery scoring.
//!
//! Panels are drawn from the exact fitted hierarchy — CAR and iid spatial
//! effects, RW2 temporal effect, cluster-specific surfaces, NB counts — so
//! fits can be validated against known truth.

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::min_cost_assignment;
use crate::graph::AdjacencyGraph;
use crate::model::{ln_mean, ModelError, PanelDataset, ParameterState};
use crate::num::softmax;
use crate::outputs::ClusterSummary;
use crate::sampler::PosteriorDraws;
use crate::spline::build_crossbasis;
use crate::{CrossBasisSpec, Real, SplineSpec};

#[derive(Error, Debug)]
pub enum SimError {
    #[error("scenario inconsistent: {0}")]
    BadScenario(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Spline(#[from] crate::spline::SplineError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphKind {
    /// rows × cols lattice with rook adjacency.
    Grid { rows: usize, cols: usize },
    Path { n: usize },
    Edges { n: usize, edges: Vec<(usize, usize)> },
}

impl GraphKind {
    pub fn build(&self) -> Result<AdjacencyGraph, crate::graph::GraphError> {
        match self {
            GraphKind::Grid { rows, cols } => {
                let mut edges = Vec::new();
                let id = |r: usize, c: usize| r * cols + c + 1;
                for r in 0..*rows {
                    for c in 0..*cols {
                        if c + 1 < *cols {
                            edges.push((id(r, c), id(r, c + 1)));
                        }
                        if r + 1 < *rows {
                            edges.push((id(r, c), id(r + 1, c)));
                        }
                    }
                }
                AdjacencyGraph::from_edges(&edges, rows * cols)
            }
            GraphKind::Path { n } => {
                let edges: Vec<(usize, usize)> = (1..*n).map(|i| (i, i + 1)).collect();
                AdjacencyGraph::from_edges(&edges, *n)
            }
            GraphKind::Edges { n, edges } => AdjacencyGraph::from_edges(edges, *n),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            GraphKind::Grid { rows, cols } => rows * cols,
            GraphKind::Path { n } => *n,
            GraphKind::Edges { n, .. } => *n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionKind {
    /// Connected blocks grown from random seeds.
    ContiguousBlocks,
    /// Labels drawn independently and uniformly.
    Random,
    /// Labels drawn from a softmax of simulated assignment fields.
    SoftmaxField,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExposureProcess {
    IidLognormal,
    /// Positive AR(1): exponential of a Gaussian AR(1) path.
    Ar1Positive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OffsetKind {
    Constant(Real),
    Lognormal { mu: Real, sd: Real },
}

/// Generative scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub graph: GraphKind,
    pub t_len: usize,
    pub max_lag: usize,
    pub true_c: usize,
    /// C × p surface coefficients (p must match the basis dimensions).
    pub true_eta: Vec<Vec<Real>>,
    pub partition: PartitionKind,
    pub alpha: Real,
    pub sigma_u: Real,
    pub sigma_v: Real,
    pub sigma_gamma: Real,
    pub r: Real,
    pub exposure: ExposureProcess,
    /// Log-scale mean and sd of the exposure process.
    pub exposure_log_mu: Real,
    pub exposure_log_sd: Real,
    /// AR(1) coefficient on the log scale (Ar1Positive only).
    pub exposure_ar: Real,
    pub offsets: OffsetKind,
    /// Interior exposure-spline knots (count); knots are placed equally
    /// spaced over the simulated exposure range, as the fit does.
    pub exposure_knots: usize,
    /// Remove each surface's pooled mean component before generating, so
    /// clusters differ in exposure-response shape rather than in a flat
    /// level shift (which the spatial CAR field would absorb for
    /// contiguous partitions).
    pub center_surfaces: bool,
}

impl SimulationScenario {
    /// Desk-scale default: a 10×10 grid, 80 weeks, lag 8, two contiguous
    /// clusters, moderate overdispersion.
    pub fn desk_default() -> Self {
        Self {
            graph: GraphKind::Grid { rows: 10, cols: 10 },
            t_len: 80,
            max_lag: 8,
            true_c: 2,
            true_eta: vec![
                vec![0.0; 9],
                short_lag_surface(8, &default_lag_basis(8), 3, 1.5),
            ],
            partition: PartitionKind::ContiguousBlocks,
            alpha: -3.0,
            sigma_u: 0.3,
            sigma_v: 0.1,
            sigma_gamma: 0.002,
            r: 5.0,
            exposure: ExposureProcess::Ar1Positive,
            exposure_log_mu: -0.7,
            exposure_log_sd: 0.4,
            exposure_ar: 0.6,
            offsets: OffsetKind::Constant(100.0),
            exposure_knots: 2,
            center_surfaces: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.t_len <= self.max_lag {
            return Err(SimError::BadScenario(format!(
                "t_len {} must exceed max_lag {}",
                self.t_len, self.max_lag
            )));
        }
        if self.true_c == 0 || self.true_eta.len() != self.true_c {
            return Err(SimError::BadScenario(format!(
                "true_eta has {} rows for C = {}",
                self.true_eta.len(),
                self.true_c
            )));
        }
        let p = (self.exposure_knots + 1) * 3;
        if self.true_eta.iter().any(|row| row.len() != p) {
            return Err(SimError::BadScenario(format!(
                "every true_eta row must have length {p} for {} exposure knots",
                self.exposure_knots
            )));
        }
        if !(self.r > 0.0) {
            return Err(SimError::BadScenario("r must be positive".into()));
        }
        Ok(())
    }

    /// The cross-basis spec the simulation truth is expressed in: equally
    /// spaced exposure knots over (lo, hi), one lag knot at L/2 with an
    /// intercept — the same construction the fit derives from the data.
    pub fn crossbasis_spec(&self, lo: Real, hi: Real) -> Result<CrossBasisSpec, SimError> {
        let exposure_basis = SplineSpec::equally_spaced(self.exposure_knots, lo, hi, false)?;
        let lag_basis = SplineSpec::new(
            vec![self.max_lag as Real / 2.0],
            (0.0, self.max_lag as Real),
            true,
        )?;
        Ok(CrossBasisSpec::new(self.max_lag, exposure_basis, lag_basis)?)
    }
}

/// Reference separation surface: a linear exposure response with a
/// short-lag-concentrated lag profile (weight 1 at lag 0 decaying to 0 by
/// mid-lag). Concentrating weight at short lags maximizes within-area time
/// variation of the predictor, which is the part of a cluster contrast the
/// BYM random effects cannot absorb.
///
/// The profile coefficients are the least-squares fit of
/// `max(1 − 2ℓ/L, 0)` in the given lag basis; they fill the j = 0 (linear
/// exposure) block of the η vector, scaled by `scale`.
pub fn short_lag_surface(
    max_lag: usize,
    lag_basis: &SplineSpec,
    exposure_dim: usize,
    scale: Real,
) -> Vec<Real> {
    let vl = lag_basis.dim();
    let p = exposure_dim * vl;
    let mut eta = vec![0.0; p];
    // Least squares of the target profile on the lag-basis values.
    let rows: Vec<Vec<Real>> = (0..=max_lag)
        .map(|lag| lag_basis.eval(lag as Real).expect("finite lag"))
        .collect();
    let target: Vec<Real> = (0..=max_lag)
        .map(|lag| {
            if max_lag == 0 {
                1.0
            } else {
                (1.0 - 2.0 * lag as Real / max_lag as Real).max(0.0)
            }
        })
        .collect();
    let mut ata = vec![vec![0.0; vl]; vl];
    let mut atb = vec![0.0; vl];
    for (row, t) in rows.iter().zip(&target) {
        for a in 0..vl {
            for b in 0..vl {
                ata[a][b] += row[a] * row[b];
            }
            atb[a] += row[a] * t;
        }
    }
    let coefs = solve_linear(&mut ata, &mut atb);
    for (k, c) in coefs.iter().enumerate() {
        eta[k] = c * scale;
    }
    eta
}

/// Gaussian elimination with partial pivoting for the tiny LS systems.
fn solve_linear(a: &mut [Vec<Real>], b: &mut [Real]) -> Vec<Real> {
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
        if d.abs() < 1e-14 {
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
        .map(|i| if a[i][i].abs() < 1e-14 { 0.0 } else { b[i] / a[i][i] })
        .collect()
}

/// Default lag basis used across the crate: one interior knot at L/2 with
/// boundary knots 0 and L, plus an intercept.
pub fn default_lag_basis(max_lag: usize) -> SplineSpec {
    if max_lag == 0 {
        SplineSpec::new(vec![], (0.0, 1.0), true).expect("valid degenerate lag basis")
    } else {
        SplineSpec::new(
            vec![max_lag as Real / 2.0],
            (0.0, max_lag as Real),
            true,
        )
        .expect("valid lag basis")
    }
}

/// Simulated panel plus its generative truth.
#[derive(Clone, Debug)]
pub struct SimulatedPanel {
    pub dataset: PanelDataset,
    pub truth: ParameterState,
    pub crossbasis_spec: CrossBasisSpec,
}

/// Forward-simulate a panel. The CAR fields are drawn by Gibbs sweeps of the
/// intrinsic conditionals with per-sweep recentring; γ is an RW2 path,
/// recentred; labels follow the requested partition; counts are NB via the
/// Gamma–Poisson mixture.
pub fn simulate_panel(
    scenario: &SimulationScenario,
    seed: u64,
) -> Result<SimulatedPanel, SimError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graph = scenario.graph.build()?;
    let n = graph.n();
    let t_len = scenario.t_len;
    let max_lag = scenario.max_lag;
    let p = (scenario.exposure_knots + 1) * 3;

    // Exposure panel.
    let mut x = Array2::zeros((n, t_len));
    match scenario.exposure {
        ExposureProcess::IidLognormal => {
            let d = LogNormal::new(scenario.exposure_log_mu, scenario.exposure_log_sd)
                .expect("valid lognormal");
            for v in x.iter_mut() {
                *v = d.sample(&mut rng);
            }
        }
        ExposureProcess::Ar1Positive => {
            let rho = scenario.exposure_ar;
            let innov_sd = scenario.exposure_log_sd * (1.0 - rho * rho).max(1e-12).sqrt();
            let innov = Normal::new(0.0, innov_sd).expect("valid normal");
            let start = Normal::new(0.0, scenario.exposure_log_sd).expect("valid normal");
            for i in 0..n {
                let mut g = start.sample(&mut rng);
                x[(i, 0)] = (scenario.exposure_log_mu + g).exp();
                for t in 1..t_len {
                    g = rho * g + innov.sample(&mut rng);
                    x[(i, t)] = (scenario.exposure_log_mu + g).exp();
                }
            }
        }
    }

    // Offsets.
    let offsets: Vec<Real> = match &scenario.offsets {
        OffsetKind::Constant(v) => vec![*v; n],
        OffsetKind::Lognormal { mu, sd } => {
            let d = LogNormal::new(*mu, *sd).expect("valid lognormal");
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
    };

    // Random effects.
    let u = simulate_car_field(&graph, scenario.sigma_u, &mut rng);
    let normal_v = Normal::new(0.0, scenario.sigma_v.max(1e-300)).expect("valid normal");
    let mut v: Vec<Real> = (0..n)
        .map(|_| if scenario.sigma_v > 0.0 { normal_v.sample(&mut rng) } else { 0.0 })
        .collect();
    let mv = v.iter().sum::<Real>() / n as Real;
    v.iter_mut().for_each(|w| *w -= mv);

    let mut gamma = vec![0.0; t_len];
    if scenario.sigma_gamma > 0.0 {
        let innov = Normal::new(0.0, scenario.sigma_gamma).expect("valid normal");
        for t in 2..t_len {
            gamma[t] = 2.0 * gamma[t - 1] - gamma[t - 2] + innov.sample(&mut rng);
        }
    }
    let mg = gamma.iter().sum::<Real>() / t_len as Real;
    gamma.iter_mut().for_each(|g| *g -= mg);

    // Labels.
    let z = match scenario.partition {
        PartitionKind::Random => (0..n).map(|_| rng.random_range(0..scenario.true_c)).collect(),
        PartitionKind::ContiguousBlocks => contiguous_blocks(&graph, scenario.true_c, &mut rng),
        PartitionKind::SoftmaxField => {
            let mut labels = vec![0usize; n];
            let mut fields = Vec::new();
            for _ in 0..scenario.true_c - 1 {
                fields.push(simulate_car_field(&graph, 1.0, &mut rng));
            }
            for (i, zi) in labels.iter_mut().enumerate() {
                let mut logits: Vec<Real> =
                    fields.iter().map(|f| f[i]).collect();
                logits.push(0.0);
                let probs = softmax(&logits);
                let draw: Real = rng.random();
                let mut acc = 0.0;
                *zi = scenario.true_c - 1;
                for (c, pr) in probs.iter().enumerate() {
                    acc += pr;
                    if draw < acc {
                        *zi = c;
                        break;
                    }
                }
            }
            labels
        }
    };

    // Basis over the simulated exposure range.
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &xv in x.iter() {
        lo = lo.min(xv);
        hi = hi.max(xv);
    }
    let cb_spec = scenario.crossbasis_spec(lo, hi)?;
    let xb = build_crossbasis(&x, &cb_spec)?;

    // Counts, only for the modeled times; the first L columns keep zeros
    // (they never enter the likelihood).
    let mut truth = ParameterState::zeros(n, t_len, scenario.true_c, p, false);
    truth.alpha = scenario.alpha;
    truth.log_r = scenario.r.ln();
    for (c, row) in scenario.true_eta.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            truth.eta[(c, j)] = *e;
        }
    }
    if scenario.center_surfaces {
        // Pooled mean basis row over all modeled observations.
        let mut b_mean = vec![0.0; p];
        let n_obs = xb.n_obs() as Real;
        for i in 0..n {
            for t0 in max_lag..t_len {
                for (j, b) in xb.row(i, t0).iter().enumerate() {
                    b_mean[j] += b / n_obs;
                }
            }
        }
        let norm2: Real = b_mean.iter().map(|b| b * b).sum();
        if norm2 > 0.0 {
            for c in 0..scenario.true_c {
                let level: Real =
                    (0..p).map(|j| b_mean[j] * truth.eta[(c, j)]).sum();
                for (j, b) in b_mean.iter().enumerate() {
                    truth.eta[(c, j)] -= b * level / norm2;
                }
            }
        }
    }
    truth.u = u;
    truth.v = v;
    truth.gamma = gamma;
    truth.sigma_u = scenario.sigma_u;
    truth.sigma_v = scenario.sigma_v;
    truth.sigma_gamma = scenario.sigma_gamma;
    truth.z = z;

    let mut y = Array2::zeros((n, t_len));
    for i in 0..n {
        let c = truth.z[i];
        for t0 in max_lag..t_len {
            let row = xb.row(i, t0);
            let mut s = 0.0;
            for (j, b) in row.iter().enumerate() {
                s += b * truth.eta[(c, j)];
            }
            let ln_lambda = ln_mean(
                offsets[i].ln(),
                truth.alpha,
                s,
                truth.u[i],
                truth.v[i],
                truth.gamma[t0],
            );
            if ln_lambda > 27.0 {
                return Err(SimError::BadScenario(format!(
                    "simulated mean exp({ln_lambda:.1}) at area {i}, time {} is \
                     astronomically large; rescale true_eta or alpha",
                    t0 + 1
                )));
            }
            y[(i, t0)] = nb_draw(ln_lambda.exp(), scenario.r, &mut rng);
        }
    }

    let area_ids: Vec<String> = (1..=n).map(|i| format!("area_{i:04}")).collect();
    let dataset = PanelDataset::new(area_ids, y, x, offsets, graph)?;
    Ok(SimulatedPanel {
        dataset,
        truth,
        crossbasis_spec: cb_spec,
    })
}

/// NB(mean λ, dispersion r) via the Gamma–Poisson mixture.
fn nb_draw<R: Rng>(lambda: Real, r: Real, rng: &mut R) -> u64 {
    let gamma = Gamma::new(r, lambda / r).expect("valid gamma");
    let w: Real = gamma.sample(rng);
    if w <= 0.0 {
        return 0;
    }
    Poisson::new(w).expect("valid poisson").sample(rng) as u64
}

/// Draw from the sum-to-zero constrained intrinsic CAR by Gibbs sweeps of
/// the conditionals with per-sweep recentring (isolated areas stay zero).
fn simulate_car_field<R: Rng>(graph: &AdjacencyGraph, sigma: Real, rng: &mut R) -> Vec<Real> {
    let n = graph.n();
    let mut field = vec![0.0; n];
    if sigma <= 0.0 {
        return field;
    }
    for _ in 0..200 {
        for i in 0..n {
            if graph.is_isolated(i) {
                continue;
            }
            let deg = graph.degree(i) as Real;
            let mean: Real =
                graph.neighbors(i).iter().map(|&j| field[j]).sum::<Real>() / deg;
            let sd = sigma / deg.sqrt();
            field[i] = mean + sd * Normal::new(0.0, 1.0).unwrap().sample(rng);
        }
        // Recentre per connected component.
        let labels = graph.component_labels();
        let n_comp = labels.iter().copied().max().map_or(0, |m| m + 1);
        let mut sums = vec![0.0; n_comp];
        let mut counts = vec![0usize; n_comp];
        for i in 0..n {
            if graph.is_isolated(i) {
                continue;
            }
            sums[labels[i]] += field[i];
            counts[labels[i]] += 1;
        }
        for i in 0..n {
            if graph.is_isolated(i) {
                continue;
            }
            field[i] -= sums[labels[i]] / counts[labels[i]] as Real;
        }
    }
    field
}

/// Connected blocks from multi-source BFS growth off random seed areas.
fn contiguous_blocks<R: Rng>(graph: &AdjacencyGraph, k: usize, rng: &mut R) -> Vec<usize> {
    let n = graph.n();
    let mut labels = vec![usize::MAX; n];
    let mut frontiers: Vec<Vec<usize>> = Vec::with_capacity(k);
    let mut seeds = Vec::new();
    while seeds.len() < k.min(n) {
        let s = rng.random_range(0..n);
        if !seeds.contains(&s) {
            seeds.push(s);
        }
    }
    for (c, &s) in seeds.iter().enumerate() {
        labels[s] = c;
        frontiers.push(vec![s]);
    }
    let mut remaining = n - seeds.len();
    while remaining > 0 {
        let mut progressed = false;
        for c in 0..frontiers.len() {
            let mut next = Vec::new();
            for &i in &frontiers[c] {
                for &j in graph.neighbors(i) {
                    if labels[j] == usize::MAX {
                        labels[j] = c;
                        next.push(j);
                        remaining -= 1;
                        progressed = true;
                    }
                }
            }
            if !next.is_empty() {
                frontiers[c] = next;
            }
        }
        if !progressed {
            // Disconnected leftovers (isolated areas): assign uniformly.
            for l in labels.iter_mut() {
                if *l == usize::MAX {
                    *l = rng.random_range(0..k);
                    remaining -= 1;
                }
            }
        }
    }
    labels
}

/// Recovery report comparing a fit against simulation truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// Adjusted Rand index between the true partition and MAP assignment.
    pub ari: Real,
    /// RMSE of each cluster's η after optimal label matching.
    pub eta_rmse: Vec<Real>,
    /// Fraction of true η entries inside their 95% credible intervals.
    pub eta_coverage: Real,
    /// The label matching used: fitted cluster `matching[c]` ↔ true cluster c.
    pub matching: Vec<usize>,
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Real {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |x: u64| -> Real { (x * x.saturating_sub(1)) as Real / 2.0 };
    let mut sum_cells = 0.0;
    let mut row_sums = vec![0u64; ka];
    let mut col_sums = vec![0u64; kb];
    for (i, row) in table.iter().enumerate() {
        for (j, &cell) in row.iter().enumerate() {
            sum_cells += choose2(cell);
            row_sums[i] += cell;
            col_sums[j] += cell;
        }
    }
    let sum_rows: Real = row_sums.iter().map(|&x| choose2(x)).sum();
    let sum_cols: Real = col_sums.iter().map(|&x| choose2(x)).sum();
    let total = choose2(n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-15 {
        // Degenerate (e.g. both one cluster): perfect agreement by convention.
        return if sum_cells == max_index { 1.0 } else { 0.0 };
    }
    (sum_cells - expected) / (max_index - expected)
}

/// Score a fit against simulation truth: ARI of the MAP assignment, η RMSE
/// after minimum-distance label matching, and 95%-interval coverage of the
/// true η entries.
pub fn score_recovery(
    truth: &ParameterState,
    summary: &ClusterSummary,
    draws: &PosteriorDraws,
) -> RecoveryReport {
    let true_c = truth.n_clusters();
    let fit_c = draws.draws[0].n_clusters();
    let p = truth.eta.ncols();
    let s = draws.draws.len() as Real;

    // Posterior mean η per fitted cluster.
    let mut mean_eta: Array2<Real> = Array2::zeros((fit_c, p));
    for st in &draws.draws {
        mean_eta = mean_eta + &st.eta;
    }
    mean_eta.mapv_inplace(|v| v / s);

    // Match true clusters to fitted clusters on η distance (square the
    // problem with padding when the counts differ).
    let k = true_c.max(fit_c);
    let mut cost = vec![vec![0.0; k]; k];
    for (c, row) in cost.iter_mut().enumerate() {
        for (f, cell) in row.iter_mut().enumerate() {
            *cell = if c < true_c && f < fit_c {
                (0..p)
                    .map(|j| (truth.eta[(c, j)] - mean_eta[(f, j)]).powi(2))
                    .sum::<Real>()
            } else {
                1e12
            };
        }
    }
    let matching = min_cost_assignment(&cost);

    // ARI against the MAP assignment, mapped into truth labels.
    let mut inverse = vec![usize::MAX; k];
    for (c, &f) in matching.iter().enumerate() {
        inverse[f] = c;
    }
    let mapped: Vec<usize> = summary
        .map_assignment
        .iter()
        .map(|&f| if inverse[f] == usize::MAX { f } else { inverse[f] })
        .collect();
    let ari = adjusted_rand_index(&truth.z, &mapped);

    // Per-cluster RMSE and coverage over matched clusters.
    let mut eta_rmse = vec![f64::NAN; true_c];
    let mut covered = 0usize;
    let mut checked = 0usize;
    let mut sample = vec![0.0; draws.draws.len()];
    for c in 0..true_c {
        let f = matching[c];
        if f >= fit_c {
            continue;
        }
        let mut sq = 0.0;
        for j in 0..p {
            sq += (truth.eta[(c, j)] - mean_eta[(f, j)]).powi(2);
            for (kdx, st) in draws.draws.iter().enumerate() {
                sample[kdx] = st.eta[(f, j)];
            }
            sample.sort_by(|a, b| a.partial_cmp(b).expect("finite eta"));
            let lo = crate::num::quantile_sorted(&sample, 0.025);
            let hi = crate::num::quantile_sorted(&sample, 0.975);
            let t = truth.eta[(c, j)];
            checked += 1;
            if t >= lo && t <= hi {
                covered += 1;
            }
        }
        eta_rmse[c] = (sq / p as Real).sqrt();
    }
    RecoveryReport {
        ari,
        eta_rmse,
        eta_coverage: if checked == 0 {
            f64::NAN
        } else {
            covered as Real / checked as Real
        },
        matching,
    }
}
