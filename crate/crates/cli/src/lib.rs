//! CLI over the modeling engine: `simulate`, `fit`, `predict`, `diagnose`,
//! and `compare`, all driven by one flat key-value config file.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lagclust::config::RunConfig;
use lagclust::io;
use lagclust::model::{ModelSpec, PanelDataset, Variant};
use lagclust::outputs;
use lagclust::sampler::{PosteriorDraws, Sampler, SamplerConfig};
use lagclust::sim::simulate_panel;
use lagclust::Real;

#[derive(Parser)]
#[command(
    name = "lagclust",
    version,
    about = "Bayesian distributed-lag non-linear models with latent spatial clustering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel (plus ground truth) from the configured
    /// scenario.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit the configured model by MCMC and persist draws and diagnostics.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint written by a previous interrupted fit.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Relative-risk surfaces and cumulative relative risk from a saved fit.
    Predict {
        #[arg(long)]
        config: PathBuf,
    },
    /// WAIC, cluster summary, entropy, random-effect summaries, and ESS.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the standard model plus mixtures over a list of C values and
    /// tabulate WAIC and entropy against C.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Entry point shared by `main` and tests.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Simulate { config, seed } => cmd_simulate(&config, seed),
        Command::Fit {
            config,
            seed,
            resume,
        } => cmd_fit(&config, seed, resume.as_deref()),
        Command::Predict { config } => cmd_predict(&config),
        Command::Diagnose { config } => cmd_diagnose(&config),
        Command::Compare { config, seed } => cmd_compare(&config, seed),
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn outdir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.outdir.clone().context("config key `outdir` is required")
}

pub fn cmd_simulate(config: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let out = outdir(&cfg)?;
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))?;
    let scenario = cfg.scenario()?;
    let sim = simulate_panel(&scenario, cfg.seed)?;
    io::write_panel(&out.join("panel.csv"), &sim.dataset)?;
    io::write_edge_list(&out.join("edges.txt"), &sim.dataset.graph)?;
    let path = out.join("true_z.csv");
    let mut text = String::from("area,z\n");
    for (i, id) in sim.dataset.area_ids.iter().enumerate() {
        text.push_str(&format!("{},{}\n", id, sim.truth.z[i] + 1));
    }
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    io::write_json(&out.join("truth.json"), &sim.truth)?;
    println!(
        "simulated {} areas x {} times (seed {}) into {}",
        sim.dataset.n(),
        sim.dataset.t_len(),
        cfg.seed,
        out.display()
    );
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<PanelDataset> {
    let panel = cfg.panel.as_ref().context("config key `panel` is required")?;
    let edges = cfg.edges.as_ref().context("config key `edges` is required")?;
    Ok(io::load_dataset(panel, edges)?)
}

/// Run one chain to completion, writing periodic checkpoints when asked.
fn run_chain_with_checkpoints(
    mut sampler: Sampler<'_>,
    checkpoint_every: usize,
    checkpoint_path: &Path,
) -> Result<PosteriorDraws> {
    if checkpoint_every == 0 {
        return Ok(sampler.run()?);
    }
    while !sampler.is_finished() {
        sampler.advance(checkpoint_every)?;
        io::write_checkpoint(checkpoint_path, &sampler.checkpoint())?;
    }
    Ok(sampler.finish())
}

pub fn cmd_fit(config: &Path, seed: Option<u64>, resume: Option<&Path>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    cfg.validate_fit()?;
    let out = outdir(&cfg)?;
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))?;
    let data = load_data(&cfg)?;
    let model = cfg.model_spec(&data)?;

    if let Some(ckpt_path) = resume {
        if cfg.chains != 1 {
            bail!("--resume supports single-chain runs only");
        }
        let ckpt = io::read_checkpoint(ckpt_path)?;
        let sampler = Sampler::restore(&data, model.clone(), ckpt)?;
        let draws = run_chain_with_checkpoints(
            sampler,
            cfg.checkpoint_every,
            &out.join("checkpoint.json"),
        )?;
        report_fit(&out, &data, &model, &draws)?;
        return Ok(());
    }

    let base = cfg.sampler_config();
    if cfg.chains == 1 {
        let sampler = Sampler::new(&data, model.clone(), base)?;
        let draws = run_chain_with_checkpoints(
            sampler,
            cfg.checkpoint_every,
            &out.join("checkpoint.json"),
        )?;
        report_fit(&out, &data, &model, &draws)?;
    } else {
        // Chains run sequentially with consecutive seeds, each into its own
        // subdirectory.
        for chain in 0..cfg.chains {
            let chain_dir = out.join(format!("chain_{chain}"));
            std::fs::create_dir_all(&chain_dir)
                .with_context(|| format!("creating {}", chain_dir.display()))?;
            let chain_cfg = SamplerConfig {
                seed: base.seed + chain as u64,
                ..base.clone()
            };
            let sampler = Sampler::new(&data, model.clone(), chain_cfg)?;
            let draws = run_chain_with_checkpoints(
                sampler,
                cfg.checkpoint_every,
                &chain_dir.join("checkpoint.json"),
            )?;
            report_fit(&chain_dir, &data, &model, &draws)?;
        }
    }
    Ok(())
}

fn report_fit(
    out: &Path,
    data: &PanelDataset,
    model: &ModelSpec,
    draws: &PosteriorDraws,
) -> Result<()> {
    io::write_fit(out, data, model, draws)?;
    for w in &draws.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "fit {} (C = {}): {} retained draws into {}",
        model.variant.as_str(),
        model.n_clusters,
        draws.n_draws(),
        out.display()
    );
    Ok(())
}

pub fn cmd_predict(config: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let out = outdir(&cfg)?;
    let data = load_data(&cfg)?;
    let (draws, meta) = io::read_fit(&out)?;
    if draws.draws.is_empty() {
        bail!("no draws found in {}", out.display());
    }
    let (reference, grid) = cfg.prediction_grid(&data);
    let lag_grid: Vec<usize> = (0..=meta.model.crossbasis.max_lag).collect();
    let n_clusters = meta.model.n_clusters;
    let mut surfaces = Vec::new();
    let mut curves = Vec::new();
    for c in 0..n_clusters {
        surfaces.push(outputs::rr_surface(
            &draws,
            &meta.model.crossbasis,
            c,
            reference,
            &grid,
            &lag_grid,
        )?);
        curves.push(outputs::cumulative_rr(
            &draws,
            &meta.model.crossbasis,
            c,
            reference,
            &grid,
        )?);
    }
    io::write_rr_surfaces(&out, &surfaces)?;
    io::write_cumulative_rr(&out, &curves)?;
    println!(
        "predicted {} surface(s) at reference exposure {} into {}",
        surfaces.len(),
        reference,
        out.display()
    );
    Ok(())
}

pub fn cmd_diagnose(config: &Path) -> Result<()> {
    let cfg = load_config(config, None)?;
    let out = outdir(&cfg)?;
    let data = load_data(&cfg)?;
    let (draws, meta) = io::read_fit(&out)?;
    if draws.draws.is_empty() {
        bail!("no draws found in {}", out.display());
    }
    let w = outputs::waic(&draws.loglik.view())?;
    io::write_waic(
        &out,
        &w,
        draws.loglik.ncols(),
        draws.n_draws(),
        meta.sampler.loglik_kind,
    )?;
    if meta.model.n_clusters > 1 {
        let summary = outputs::cluster_summary(&draws)?;
        io::write_cluster_summary(&out, &data, &summary)?;
    }
    let (spatial, temporal) = outputs::effect_summaries(&draws)?;
    io::write_effects(&out, &data, &spatial, &temporal)?;

    let mut ess_rows: Vec<(String, Real)> = Vec::new();
    let chain = |f: &dyn Fn(&lagclust::ParameterState) -> Real| -> Vec<Real> {
        draws.draws.iter().map(|st| f(st)).collect()
    };
    ess_rows.push((
        "alpha".into(),
        outputs::effective_sample_size(&chain(&|st| st.alpha)),
    ));
    ess_rows.push((
        "r".into(),
        outputs::effective_sample_size(&chain(&|st| st.r())),
    ));
    ess_rows.push((
        "sigma_u".into(),
        outputs::effective_sample_size(&chain(&|st| st.sigma_u)),
    ));
    ess_rows.push((
        "sigma_v".into(),
        outputs::effective_sample_size(&chain(&|st| st.sigma_v)),
    ));
    ess_rows.push((
        "sigma_gamma".into(),
        outputs::effective_sample_size(&chain(&|st| st.sigma_gamma)),
    ));
    let p = meta.model.crossbasis.dim();
    for c in 0..meta.model.n_clusters {
        for j in 0..p {
            ess_rows.push((
                format!("eta_{}_{}", c + 1, j + 1),
                outputs::effective_sample_size(&chain(&|st| st.eta[(c, j)])),
            ));
        }
    }
    io::write_ess(&out, &ess_rows)?;
    println!(
        "diagnostics: WAIC = {:.3} (lppd {:.3}, pWAIC2 {:.3}) into {}",
        w.waic,
        w.lppd,
        w.p_waic2,
        out.display()
    );
    Ok(())
}

pub fn cmd_compare(config: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let out = outdir(&cfg)?;
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))?;
    let data = load_data(&cfg)?;

    // Candidate list: the standard baseline plus each requested mixture.
    let mut candidates: Vec<(Variant, usize)> = vec![(Variant::Standard, 1)];
    for &c in &cfg.compare_clusters {
        if cfg.compare_flat {
            candidates.push((Variant::MixtureFlat, c));
        }
        if cfg.compare_spatial {
            candidates.push((Variant::MixtureSpatial, c));
        }
    }

    let mut rows = Vec::new();
    let mut entropies = Vec::new();
    for (idx, (variant, n_clusters)) in candidates.iter().enumerate() {
        let mut model = cfg.model_spec(&data)?;
        model.variant = *variant;
        model.n_clusters = *n_clusters;
        let mut sampler_cfg = cfg.sampler_config();
        // Deterministic per-candidate seeds derived from the base seed.
        sampler_cfg.seed = cfg.seed + idx as u64;
        let draws = Sampler::new(&data, model.clone(), sampler_cfg)?.run()?;
        let w = outputs::waic(&draws.loglik.view())?;
        let median_entropy = if *n_clusters > 1 {
            let summary = outputs::cluster_summary(&draws)?;
            let mut hs = summary.entropy.clone();
            hs.sort_by(|a, b| a.partial_cmp(b).expect("finite entropy"));
            let med = lagclust::num::quantile_sorted(&hs, 0.5);
            entropies.push((
                variant.as_str().to_string(),
                *n_clusters,
                data.area_ids
                    .iter()
                    .cloned()
                    .zip(summary.entropy.iter().copied())
                    .collect(),
            ));
            med
        } else {
            f64::NAN
        };
        println!(
            "compare: {} C={} -> WAIC {:.3}, median entropy {:.4}",
            variant.as_str(),
            n_clusters,
            w.waic,
            median_entropy
        );
        rows.push(io::CompareRow {
            variant: variant.as_str().to_string(),
            n_clusters: *n_clusters,
            waic: w.waic,
            lppd: w.lppd,
            p_waic2: w.p_waic2,
            median_entropy,
        });
    }
    io::write_compare(&out, &rows, &entropies)?;
    println!("compare table into {}", out.display());
    Ok(())
}
