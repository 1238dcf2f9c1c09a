use lagclust::model::{ModelSpec, PriorSpec, Variant};
use lagclust::num::quantile;
use lagclust::outputs::effective_sample_size;
use lagclust::sampler::{run_chain, SamplerConfig};
use lagclust::sim::*;

fn small_scenario() -> SimulationScenario {
    SimulationScenario {
        graph: GraphKind::Grid { rows: 3, cols: 3 },
        t_len: 26,
        max_lag: 2,
        true_c: 1,
        true_eta: vec![vec![0.0; 9]],
        partition: PartitionKind::Random,
        alpha: -2.5,
        sigma_u: 0.2,
        sigma_v: 0.1,
        sigma_gamma: 0.004,
        r: 5.0,
        exposure: ExposureProcess::Ar1Positive,
        exposure_log_mu: -0.7,
        exposure_log_sd: 0.4,
        exposure_ar: 0.6,
        offsets: OffsetKind::Constant(50.0),
        exposure_knots: 2,
        center_surfaces: false,
    }
}

#[test]
fn alpha_coverage_by_length() {
    for iters in [2400usize, 8000] {
        let mut covered = 0;
        let mut widths = Vec::new();
        let mut errs = Vec::new();
        let mut esses = Vec::new();
        for rep in 0..10u64 {
            let sim = simulate_panel(&small_scenario(), 700 + rep).unwrap();
            let model = ModelSpec {
                variant: Variant::Standard,
                n_clusters: 1,
                crossbasis: sim.crossbasis_spec.clone(),
                priors: PriorSpec::default(),
            };
            let cfg = SamplerConfig {
                n_iterations: iters, burn_in: iters / 2, thinning: 4, seed: 40 + rep,
                ..Default::default()
            };
            let draws = run_chain(&sim.dataset, model, cfg).unwrap();
            let alphas: Vec<f64> = draws.draws.iter().map(|st| st.alpha).collect();
            let lo = quantile(&alphas, 0.025);
            let hi = quantile(&alphas, 0.975);
            let mean = alphas.iter().sum::<f64>() / alphas.len() as f64;
            if sim.truth.alpha >= lo && sim.truth.alpha <= hi { covered += 1; }
            widths.push(hi - lo);
            errs.push(mean - sim.truth.alpha);
            esses.push(effective_sample_size(&alphas));
        }
        let mw = widths.iter().sum::<f64>() / widths.len() as f64;
        let me = errs.iter().sum::<f64>() / errs.len() as f64;
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
        let mess = esses.iter().sum::<f64>() / esses.len() as f64;
        println!("iters {iters}: covered {covered}/10 meanwidth {mw:.4} bias {me:.4} rmse {rmse:.4} ess {mess:.0}");
    }
}
