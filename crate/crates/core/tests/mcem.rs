//! Estimation properties of the Monte Carlo EM drivers and the sampler,
//! checked against simulated data with known truth.

use stmrf::de::{eb_posterior, fit_local_fdr};
use stmrf::emission::cell_log_odds;
use stmrf::mcem::{
    de_log_odds, de_posterior, expression_posterior, fit_de, fit_expression, maximize_couplings, McemConfig, Stage,
};
use stmrf::model::pseudo::PlStats;
use stmrf::model::{conditional_prob, MAX_DIM};
use stmrf::sampler::{posterior_marginals, ChainSchedule, SweepOrder, Target};
use stmrf::sim::{simulate, Setting, SimSpec};
use stmrf::{DeMrfParams, LatentGrid, LatticeShape, MrfParams, Prior, RegionGroup};

fn config(stages: &str, seed: u64) -> McemConfig {
    McemConfig::new(Stage::parse_list(stages).unwrap(), seed)
}

fn pl_estimate(grid: &LatentGrid) -> MrfParams {
    let zero = MrfParams::zero();
    let stats = PlStats::from_grid(&zero, grid);
    maximize_couplings(&stats, &zero, &[true; MAX_DIM], 10.0, 1e-8).unwrap().0
}

#[test]
fn pseudolikelihood_recovers_generating_couplings() {
    let mut spec = SimSpec::new(Setting::Expr1);
    spec.gibbs_rounds = 200;
    spec.seed = 17;
    let runs = 100;
    let mut sum = [0.0; 3];
    for run in 0..runs {
        let phi = pl_estimate(&simulate(&spec, run).unwrap().truth);
        sum[0] += phi.gamma;
        sum[1] += phi.beta_spatial;
        sum[2] += phi.beta_temporal;
    }
    let mean = sum.map(|s| s / runs as f64);
    for (m, t) in mean.iter().zip([0.08, 0.20, 1.5]) {
        assert!((m - t).abs() <= 0.1, "mean estimate {mean:?}");
    }
}

#[test]
fn independent_grids_give_zero_couplings() {
    let mut spec = SimSpec::new(Setting::Expr1);
    spec.genes = 500;
    spec.phi = MrfParams::new(0.3, 0.0, 0.0);
    let phi = pl_estimate(&simulate(&spec, 0).unwrap().truth);
    assert!(phi.beta_spatial.abs() <= 0.05 && phi.beta_temporal.abs() <= 0.05, "{phi:?}");
    assert!((phi.gamma - 0.3).abs() <= 0.05, "{phi:?}");
}

#[test]
fn m_step_never_lowers_q() {
    let mut spec = SimSpec::new(Setting::Expr1);
    spec.genes = 15;
    spec.mixture.mu2 = 6.5;
    let data = simulate(&spec, 0).unwrap();
    let fit = fit_expression(data.expression().unwrap(), &config("4x20/60,2x20/100", 3)).unwrap();
    assert!(!fit.state.trace.is_empty() && fit.state.trace.len() <= 6);
    for e in &fit.state.trace {
        assert!(e.q_updated >= e.q_previous - 1e-9 * e.q_previous.abs(), "{e:?}");
    }

    let mut spec = SimSpec::new(Setting::De1);
    spec.genes = 15;
    let sim = simulate(&spec, 0).unwrap();
    let z = sim.zscores().unwrap();
    let model = fit_local_fdr(&z.pooled()).unwrap();
    let fit = fit_de(z, &model, &spec.groups(), &config("5x20/60", 4)).unwrap();
    for e in &fit.state.trace {
        assert!(e.q_updated >= e.q_previous - 1e-9 * e.q_previous.abs(), "{e:?}");
    }
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn longer_chains_reduce_seed_spread() {
    let mut spec = SimSpec::new(Setting::Expr1);
    spec.genes = 10;
    spec.mixture.mu2 = 6.5;
    let sim = simulate(&spec, 0).unwrap();
    let data = sim.expression().unwrap();
    let spread = |stages: &str| -> [f64; 2] {
        let est: Vec<MrfParams> = (0..20).map(|seed| fit_expression(data, &config(stages, seed)).unwrap().phi).collect();
        [
            sd(&est.iter().map(|p| p.beta_spatial).collect::<Vec<_>>()),
            sd(&est.iter().map(|p| p.beta_temporal).collect::<Vec<_>>()),
        ]
    };
    // m = 10 and m = 40 kept sweeps per iteration
    let short = spread("3x10/20");
    let long = spread("3x10/50");
    assert!(long[0] < short[0] && long[1] < short[1], "m=10 {short:?}, m=40 {long:?}");
}

#[test]
fn zero_coupling_chain_matches_closed_form() {
    let mut spec = SimSpec::new(Setting::Expr1);
    spec.genes = 12;
    let sim = simulate(&spec, 1).unwrap();
    let data = sim.expression().unwrap();
    let mut cfg = config("3x20/60", 5);
    cfg.freeze_couplings = true;
    let fit = fit_expression(data, &cfg).unwrap();
    assert_eq!((fit.phi.beta_spatial, fit.phi.beta_temporal), (0.0, 0.0));
    let kept = 20_000;
    let post = expression_posterior(
        data,
        &fit.phi,
        &fit.theta,
        &fit.state.grid,
        &ChainSchedule::new(10, kept, 6).unwrap(),
    )
    .unwrap();
    let lo = cell_log_odds(data, &fit.theta);
    for (i, l) in lo.iter().enumerate() {
        let p = conditional_prob(fit.phi.gamma + l);
        let se = (p * (1.0 - p) / kept as f64).sqrt();
        let got = post.prob_one_at(i).unwrap();
        // One count of slack for cells whose rate is within 1/kept of 0 or 1.
        assert!((got - p).abs() <= 5.0 * se + 1.0 / kept as f64, "cell {i}: {got} vs {p}");
    }
}

#[test]
fn eb_fdr_equals_zero_coupling_mrf_posterior() {
    let mut spec = SimSpec::new(Setting::De1);
    spec.genes = 30;
    let sim = simulate(&spec, 2).unwrap();
    let z = sim.zscores().unwrap();
    let model = fit_local_fdr(&z.pooled()).unwrap();
    let gamma = ((1.0 - model.p0) / model.p0).ln();
    let phi = DeMrfParams::new(gamma, 0.0, 0.0, 0.0, 0.0, spec.groups());
    let post = de_posterior(z, &model, &phi, &z.latent_template(), &ChainSchedule::new(10, 20_000, 7).unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..z.shape().cells() {
        if let Some(q) = post.null_prob_at(i) {
            worst = worst.max((q - eb_posterior(z.z()[i], &model)).abs());
        }
    }
    assert!(worst <= 0.02, "largest gap {worst}");
    // Masked transitions have no evidence and no posterior.
    let lo = de_log_odds(z, &model);
    for i in 0..z.shape().cells() {
        if z.mask()[i] {
            assert_eq!(lo[i], 0.0);
            assert!(post.null_prob_at(i).is_none());
        }
    }
}

#[test]
fn reversed_sweep_order_gives_the_same_marginals() {
    let shape = LatticeShape::new(5, 6, 6).unwrap();
    let lo: Vec<f64> = (0..shape.cells()).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.5).collect();
    let init = LatentGrid::zeros(shape);
    let phi = DeMrfParams::new(-0.2, 0.3, 0.4, 0.1, 0.8, RegionGroup::split(5, 3));
    let forward = ChainSchedule::new(200, 20_000, 8).unwrap();
    let a = posterior_marginals(&init, &Target::new(&phi, &lo), &forward).unwrap();
    let b = posterior_marginals(&init, &Target::new(&phi, &lo), &forward.with_order(SweepOrder::Reverse)).unwrap();
    let worst = a.raw().iter().zip(b.raw()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst <= 0.02, "{worst}");
}

#[test]
fn independent_cells_sample_at_their_bernoulli_rate() {
    let shape = LatticeShape::new(4, 5, 6).unwrap();
    let phi = MrfParams::new(0.4, 0.0, 0.0);
    let lo: Vec<f64> = (0..shape.cells()).map(|i| (i % 9) as f64 * 0.5 - 2.0).collect();
    let kept = 20_000;
    let post = posterior_marginals(
        &LatentGrid::zeros(shape),
        &Target::new(&phi, &lo),
        &ChainSchedule::new(0, kept, 9).unwrap(),
    )
    .unwrap();
    for (i, l) in lo.iter().enumerate() {
        let p = conditional_prob(phi.node_weight() + l);
        let se = (p * (1.0 - p) / kept as f64).sqrt();
        assert!((post.raw()[i] - p).abs() <= 3.0 * se, "cell {i}: {} vs {p}", post.raw()[i]);
    }
}
