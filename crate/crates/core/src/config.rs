//! Run configuration: a flat `key = value` text format shared by every CLI
//! subcommand.
//!
//! Lines are `key = value`; blank lines and `#` comments are ignored; keys
//! are validated against the documented set. Values never need quoting.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelSpec, PanelDataset, PriorSpec, Variant};
use crate::num::quantile;
use crate::sampler::{InitialScales, LoglikKind, SamplerConfig};
use crate::sim::{
    ExposureProcess, GraphKind, OffsetKind, PartitionKind, SimulationScenario,
};
use crate::spline::SplineError;
use crate::{CrossBasisSpec, Real, SplineSpec};

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`, got `{1}`")]
    BadLine(usize, String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {wanted}")]
    BadValue {
        key: String,
        value: String,
        wanted: &'static str,
    },
    #[error("missing required key `{0}` for this command")]
    MissingKey(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Every tunable of a run, with paper-default sampler settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    // Paths.
    pub panel: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub outdir: Option<PathBuf>,
    // Model.
    pub variant: Variant,
    pub clusters: usize,
    pub max_lag: usize,
    pub exposure_knots: usize,
    /// Optional interior lag-knot override (default: L/2).
    pub lag_knot: Option<Real>,
    pub priors: PriorSpec,
    // Sampler.
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub adaptation_window: usize,
    pub target_accept_scalar: Real,
    pub target_accept_block: Real,
    pub chains: usize,
    pub loglik: LoglikKind,
    pub prior_only: bool,
    /// Write a checkpoint every this many sweeps (0 disables).
    pub checkpoint_every: usize,
    /// Leading sweeps with frozen cluster labels (default: burn_in/10).
    pub z_freeze_sweeps: Option<usize>,
    // Prediction grid.
    pub reference_percentile: Real,
    pub exposure_grid_points: usize,
    pub exposure_grid_max_percentile: Real,
    // Compare sweep.
    pub compare_clusters: Vec<usize>,
    pub compare_spatial: bool,
    pub compare_flat: bool,
    // Simulation scenario.
    pub sim_graph: String,
    pub sim_rows: usize,
    pub sim_cols: usize,
    pub sim_t: usize,
    pub sim_true_c: usize,
    pub sim_partition: String,
    pub sim_alpha: Real,
    pub sim_sigma_u: Real,
    pub sim_sigma_v: Real,
    pub sim_sigma_gamma: Real,
    pub sim_r: Real,
    pub sim_exposure: String,
    pub sim_exposure_log_mu: Real,
    pub sim_exposure_log_sd: Real,
    pub sim_exposure_ar: Real,
    pub sim_offset: Real,
    pub sim_eta_scale: Real,
    /// Remove the flat level component of each simulated surface.
    pub sim_center_eta: bool,
    /// Explicit per-cluster surface coefficients (`sim_eta_<c>` keys).
    pub sim_eta: BTreeMap<usize, Vec<Real>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            panel: None,
            edges: None,
            outdir: None,
            variant: Variant::Standard,
            clusters: 1,
            max_lag: 8,
            exposure_knots: 2,
            lag_knot: None,
            priors: PriorSpec::default(),
            iterations: 80_000,
            burn_in: 40_000,
            thinning: 10,
            seed: 1,
            adaptation_window: 50,
            target_accept_scalar: 0.44,
            target_accept_block: 0.234,
            chains: 1,
            loglik: LoglikKind::Conditional,
            prior_only: false,
            checkpoint_every: 0,
            z_freeze_sweeps: None,
            reference_percentile: 5.0,
            exposure_grid_points: 50,
            exposure_grid_max_percentile: 99.0,
            compare_clusters: vec![2, 3, 4, 5],
            compare_spatial: true,
            compare_flat: true,
            sim_graph: "grid".into(),
            sim_rows: 10,
            sim_cols: 10,
            sim_t: 80,
            sim_true_c: 2,
            sim_partition: "contiguous".into(),
            sim_alpha: -3.0,
            sim_sigma_u: 0.3,
            sim_sigma_v: 0.1,
            sim_sigma_gamma: 0.002,
            sim_r: 5.0,
            sim_exposure: "ar1".into(),
            sim_exposure_log_mu: -0.7,
            sim_exposure_log_sd: 0.4,
            sim_exposure_ar: 0.6,
            sim_offset: 100.0,
            sim_eta_scale: 1.0,
            sim_center_eta: true,
            sim_eta: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine(idx + 1, raw.to_string()));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(
            key: &str,
            value: &str,
            wanted: &'static str,
        ) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                wanted,
            })
        }
        match key {
            "panel" => self.panel = Some(PathBuf::from(value)),
            "edges" => self.edges = Some(PathBuf::from(value)),
            "outdir" => self.outdir = Some(PathBuf::from(value)),
            "variant" => {
                self.variant = match value {
                    "standard" => Variant::Standard,
                    "mixture-flat" => Variant::MixtureFlat,
                    "mixture-spatial" => Variant::MixtureSpatial,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            wanted: "standard | mixture-flat | mixture-spatial",
                        })
                    }
                }
            }
            "clusters" => self.clusters = num(key, value, "positive integer")?,
            "max_lag" => self.max_lag = num(key, value, "integer")?,
            "exposure_knots" => self.exposure_knots = num(key, value, "integer")?,
            "lag_knot" => self.lag_knot = Some(num(key, value, "real")?),
            "r_shape" => self.priors.r_shape = num(key, value, "real")?,
            "r_rate" => self.priors.r_rate = num(key, value, "real")?,
            "alpha_sd" => self.priors.alpha_sd = num(key, value, "real")?,
            "eta_sd" => self.priors.eta_sd = num(key, value, "real")?,
            "sigma_u_upper" => self.priors.sigma_u_upper = num(key, value, "real")?,
            "sigma_v_upper" => self.priors.sigma_v_upper = num(key, value, "real")?,
            "sigma_gamma_upper" => self.priors.sigma_gamma_upper = num(key, value, "real")?,
            "assignment_sd_scale" => self.priors.assignment_sd_scale = num(key, value, "real")?,
            "iterations" => self.iterations = num(key, value, "integer")?,
            "burn_in" => self.burn_in = num(key, value, "integer")?,
            "thinning" => self.thinning = num(key, value, "integer")?,
            "seed" => self.seed = num(key, value, "integer")?,
            "adaptation_window" => self.adaptation_window = num(key, value, "integer")?,
            "target_accept_scalar" => self.target_accept_scalar = num(key, value, "real")?,
            "target_accept_block" => self.target_accept_block = num(key, value, "real")?,
            "chains" => self.chains = num(key, value, "integer")?,
            "loglik" => {
                self.loglik = match value {
                    "conditional" => LoglikKind::Conditional,
                    "marginal" => LoglikKind::Marginal,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: key.into(),
                            value: value.into(),
                            wanted: "conditional | marginal",
                        })
                    }
                }
            }
            "prior_only" => self.prior_only = num(key, value, "bool")?,
            "checkpoint_every" => self.checkpoint_every = num(key, value, "integer")?,
            "z_freeze_sweeps" => self.z_freeze_sweeps = Some(num(key, value, "integer")?),
            "reference_percentile" => self.reference_percentile = num(key, value, "real")?,
            "exposure_grid_points" => self.exposure_grid_points = num(key, value, "integer")?,
            "exposure_grid_max_percentile" => {
                self.exposure_grid_max_percentile = num(key, value, "real")?
            }
            "compare_clusters" => {
                self.compare_clusters = value
                    .split(',')
                    .map(|v| num::<usize>(key, v.trim(), "integer list"))
                    .collect::<Result<_, _>>()?;
            }
            "compare_spatial" => self.compare_spatial = num(key, value, "bool")?,
            "compare_flat" => self.compare_flat = num(key, value, "bool")?,
            "sim_graph" => self.sim_graph = value.to_string(),
            "sim_rows" => self.sim_rows = num(key, value, "integer")?,
            "sim_cols" => self.sim_cols = num(key, value, "integer")?,
            "sim_t" => self.sim_t = num(key, value, "integer")?,
            "sim_true_c" => self.sim_true_c = num(key, value, "integer")?,
            "sim_partition" => self.sim_partition = value.to_string(),
            "sim_alpha" => self.sim_alpha = num(key, value, "real")?,
            "sim_sigma_u" => self.sim_sigma_u = num(key, value, "real")?,
            "sim_sigma_v" => self.sim_sigma_v = num(key, value, "real")?,
            "sim_sigma_gamma" => self.sim_sigma_gamma = num(key, value, "real")?,
            "sim_r" => self.sim_r = num(key, value, "real")?,
            "sim_exposure" => self.sim_exposure = value.to_string(),
            "sim_exposure_log_mu" => self.sim_exposure_log_mu = num(key, value, "real")?,
            "sim_exposure_log_sd" => self.sim_exposure_log_sd = num(key, value, "real")?,
            "sim_exposure_ar" => self.sim_exposure_ar = num(key, value, "real")?,
            "sim_offset" => self.sim_offset = num(key, value, "real")?,
            "sim_eta_scale" => self.sim_eta_scale = num(key, value, "real")?,
            "sim_center_eta" => self.sim_center_eta = num(key, value, "bool")?,
            _ if key.starts_with("sim_eta_") => {
                let c: usize = key["sim_eta_".len()..]
                    .parse()
                    .map_err(|_| ConfigError::UnknownKey(key.to_string()))?;
                if c == 0 {
                    return Err(ConfigError::UnknownKey(key.to_string()));
                }
                let row: Vec<Real> = value
                    .split(',')
                    .map(|v| num::<Real>(key, v.trim(), "real list"))
                    .collect::<Result<_, _>>()?;
                self.sim_eta.insert(c - 1, row);
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// CLI-level validation for fitting commands: C ≥ 2 exactly for the
    /// mixture variants, required paths present.
    pub fn validate_fit(&self) -> Result<(), ConfigError> {
        if self.panel.is_none() {
            return Err(ConfigError::MissingKey("panel"));
        }
        if self.edges.is_none() {
            return Err(ConfigError::MissingKey("edges"));
        }
        if self.outdir.is_none() {
            return Err(ConfigError::MissingKey("outdir"));
        }
        match self.variant {
            Variant::Standard if self.clusters != 1 => Err(ConfigError::Invalid(format!(
                "standard variant requires clusters = 1, got {}",
                self.clusters
            ))),
            Variant::MixtureFlat | Variant::MixtureSpatial if self.clusters < 2 => {
                Err(ConfigError::Invalid(format!(
                    "mixture variants require clusters >= 2, got {}",
                    self.clusters
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: self.seed,
            adaptation_window: self.adaptation_window,
            target_accept_scalar: self.target_accept_scalar,
            target_accept_block: self.target_accept_block,
            n_chains: self.chains,
            prior_only: self.prior_only,
            loglik_kind: self.loglik,
            initial_scales: InitialScales::default(),
            z_freeze_sweeps: self.z_freeze_sweeps,
        }
    }

    /// Knot rule: exposure boundary knots at the observed pooled min/max,
    /// interior knots equally spaced between them; one interior lag knot at
    /// L/2 (or the configured override) with boundary knots at 0 and L.
    pub fn crossbasis_spec(&self, data: &PanelDataset) -> Result<CrossBasisSpec, ConfigError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in data.x.iter() {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if !(lo < hi) {
            return Err(ConfigError::Invalid(format!(
                "exposure range [{lo}, {hi}] is degenerate"
            )));
        }
        let exposure_basis = SplineSpec::equally_spaced(self.exposure_knots, lo, hi, false)?;
        let lag_knot = self.lag_knot.unwrap_or(self.max_lag as Real / 2.0);
        let lag_basis = if self.max_lag == 0 {
            SplineSpec::new(vec![], (0.0, 1.0), true)?
        } else {
            SplineSpec::new(vec![lag_knot], (0.0, self.max_lag as Real), true)?
        };
        Ok(CrossBasisSpec::new(self.max_lag, exposure_basis, lag_basis)?)
    }

    pub fn model_spec(&self, data: &PanelDataset) -> Result<ModelSpec, ConfigError> {
        Ok(ModelSpec {
            variant: self.variant,
            n_clusters: self.clusters,
            crossbasis: self.crossbasis_spec(data)?,
            priors: self.priors.clone(),
        })
    }

    /// Reference exposure and prediction grid from the pooled exposure
    /// distribution; the reference value is always a grid point.
    pub fn prediction_grid(&self, data: &PanelDataset) -> (Real, Vec<Real>) {
        let pooled: Vec<Real> = data.x.iter().copied().collect();
        let reference = quantile(&pooled, self.reference_percentile / 100.0);
        let lo = pooled.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = quantile(&pooled, self.exposure_grid_max_percentile / 100.0);
        let k = self.exposure_grid_points.max(2);
        let mut grid: Vec<Real> = (0..k)
            .map(|g| lo + (hi - lo) * g as Real / (k - 1) as Real)
            .collect();
        grid.push(reference);
        grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
        grid.dedup();
        (reference, grid)
    }

    pub fn scenario(&self) -> Result<SimulationScenario, ConfigError> {
        let graph = match self.sim_graph.as_str() {
            "grid" => GraphKind::Grid {
                rows: self.sim_rows,
                cols: self.sim_cols,
            },
            "path" => GraphKind::Path {
                n: self.sim_rows * self.sim_cols,
            },
            other => {
                return Err(ConfigError::BadValue {
                    key: "sim_graph".into(),
                    value: other.into(),
                    wanted: "grid | path",
                })
            }
        };
        let partition = match self.sim_partition.as_str() {
            "contiguous" => PartitionKind::ContiguousBlocks,
            "random" => PartitionKind::Random,
            "softmax" => PartitionKind::SoftmaxField,
            other => {
                return Err(ConfigError::BadValue {
                    key: "sim_partition".into(),
                    value: other.into(),
                    wanted: "contiguous | random | softmax",
                })
            }
        };
        let exposure = match self.sim_exposure.as_str() {
            "ar1" => ExposureProcess::Ar1Positive,
            "lognormal" => ExposureProcess::IidLognormal,
            other => {
                return Err(ConfigError::BadValue {
                    key: "sim_exposure".into(),
                    value: other.into(),
                    wanted: "ar1 | lognormal",
                })
            }
        };
        let p = (self.exposure_knots + 1) * 3;
        let lag_basis = crate::sim::default_lag_basis(self.max_lag);
        let mut true_eta = Vec::with_capacity(self.sim_true_c);
        for c in 0..self.sim_true_c {
            if let Some(row) = self.sim_eta.get(&c) {
                if row.len() != p {
                    return Err(ConfigError::Invalid(format!(
                        "sim_eta_{} must have {p} entries, got {}",
                        c + 1,
                        row.len()
                    )));
                }
                true_eta.push(row.clone());
            } else if c == 0 {
                true_eta.push(vec![0.0; p]);
            } else {
                // Matches the desk-default separation at sim_eta_scale = 1.
                let scale = 1.5 * self.sim_eta_scale * c as Real;
                true_eta.push(crate::sim::short_lag_surface(
                    self.max_lag,
                    &lag_basis,
                    self.exposure_knots + 1,
                    scale,
                ));
            }
        }
        Ok(SimulationScenario {
            graph,
            t_len: self.sim_t,
            max_lag: self.max_lag,
            true_c: self.sim_true_c,
            true_eta,
            partition,
            alpha: self.sim_alpha,
            sigma_u: self.sim_sigma_u,
            sigma_v: self.sim_sigma_v,
            sigma_gamma: self.sim_sigma_gamma,
            r: self.sim_r,
            exposure,
            exposure_log_mu: self.sim_exposure_log_mu,
            exposure_log_sd: self.sim_exposure_log_sd,
            exposure_ar: self.sim_exposure_ar,
            offsets: OffsetKind::Constant(self.sim_offset),
            exposure_knots: self.exposure_knots,
            center_surfaces: self.sim_center_eta,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let text = "\
# comment
panel = data/panel.csv
edges  =  data/edges.txt
outdir = out
variant = mixture-spatial
clusters = 5
max_lag = 8
iterations = 1000
burn_in = 500
thinning = 5
seed = 42
compare_clusters = 2, 3, 4
sim_eta_2 = 0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.variant, Variant::MixtureSpatial);
        assert_eq!(cfg.clusters, 5);
        assert_eq!(cfg.compare_clusters, vec![2, 3, 4]);
        assert_eq!(cfg.sim_eta.get(&1).unwrap().len(), 9);
        assert_eq!(cfg.panel.as_ref().unwrap().to_str().unwrap(), "data/panel.csv");
        cfg.validate_fit().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(matches!(
            RunConfig::parse("no_such_key = 1\n"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            RunConfig::parse("just words\n"),
            Err(ConfigError::BadLine(1, _))
        ));
        assert!(matches!(
            RunConfig::parse("clusters = many\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn fit_validation_enforces_cluster_pairing() {
        let mut cfg = RunConfig::parse(
            "panel = p.csv\nedges = e.txt\noutdir = out\nvariant = mixture-flat\nclusters = 1\n",
        )
        .unwrap();
        assert!(cfg.validate_fit().is_err());
        cfg.clusters = 3;
        cfg.validate_fit().unwrap();
        cfg.variant = Variant::Standard;
        assert!(cfg.validate_fit().is_err());
    }

    #[test]
    fn defaults_match_reported_run_lengths() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.iterations, 80_000);
        assert_eq!(cfg.burn_in, 40_000);
        assert_eq!(cfg.thinning, 10);
        assert_eq!(cfg.reference_percentile, 5.0);
    }
}
