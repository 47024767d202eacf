//! Monte Carlo EM for both MRF models.
//!
//! Each iteration runs a warm-started Gibbs chain under the current
//! parameters (E-step), averages the kept grids into pseudolikelihood
//! sufficient statistics and state frequencies, then maximizes the emission
//! parameters in closed form and the prior parameters by projected Newton
//! ascent (M-step).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::de::{eb_posterior, LocalFdrModel, ZScoreGrid};
use crate::emission::{
    estimate_sigma0, expected_log_emission, fit_plain_gmm, cell_log_odds, update_theta_mle, ExpressionTensor,
    GmmEmissionParams, PlainGmmFit, ThetaFlag,
};
use crate::error::{Error, Result};
use crate::lattice::LatentGrid;
use crate::model::pseudo::PlStats;
use crate::model::{Coefs, DeMrfParams, MrfParams, Prior, RegionGroup, MAX_DIM};
use crate::rng;
use crate::sampler::{posterior_marginals, run_chain_by_gene, ChainSchedule, PosteriorGrid, SweepOrder, Target};

const NEWTON_MAX_ITERS: usize = 200;
const ARMIJO: f64 = 1e-4;

/// A block of MCEM iterations sharing one chain length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub iterations: usize,
    pub burn_in: usize,
    pub kept: usize,
}

impl Stage {
    pub fn new(iterations: usize, burn_in: usize, kept: usize) -> Self {
        Stage {
            iterations,
            burn_in,
            kept,
        }
    }

    /// Parse `ITERSxBURN/TOTAL`, e.g. `20x500/1500` for 20 iterations of
    /// 1500 sweeps with the first 500 discarded.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("stage `{s}` is not of the form ITERSxBURN/TOTAL"));
        let (iters, rest) = s.trim().split_once('x').ok_or_else(bad)?;
        let (burn, total) = rest.split_once('/').ok_or_else(bad)?;
        let iterations: usize = iters.trim().parse().map_err(|_| bad())?;
        let burn_in: usize = burn.trim().parse().map_err(|_| bad())?;
        let total: usize = total.trim().parse().map_err(|_| bad())?;
        if total <= burn_in {
            return Err(Error::Config(format!("stage `{s}`: total sweeps must exceed burn-in")));
        }
        Ok(Stage::new(iterations, burn_in, total - burn_in))
    }

    /// Parse a comma-separated list of stages.
    pub fn parse_list(s: &str) -> Result<Vec<Stage>> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(Stage::parse).collect()
    }
}

/// Three stages of 20 iterations: 500/1500, 1000/6000 and 1000/10000 sweeps.
pub fn default_stages() -> Vec<Stage> {
    vec![Stage::new(20, 500, 1000), Stage::new(20, 1000, 5000), Stage::new(20, 1000, 9000)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McemConfig {
    pub stages: Vec<Stage>,
    pub seed: u64,
    /// Projected-gradient norm at which the M-step optimizer stops.
    pub optimizer_tol: f64,
    /// Coupling parameters are confined to `[-bound, bound]`.
    pub bound: f64,
    /// Relative parameter change counted as stable.
    pub convergence_tol: f64,
    /// Consecutive stable iterations that end a stage.
    pub stable_iterations: usize,
    /// Hold every coupling at its initial value (0) and fit only the node weight.
    #[serde(default)]
    pub freeze_couplings: bool,
    #[serde(default)]
    pub order: SweepOrder,
}

impl McemConfig {
    pub fn new(stages: Vec<Stage>, seed: u64) -> Self {
        McemConfig {
            stages,
            seed,
            optimizer_tol: 1e-5,
            bound: 10.0,
            convergence_tol: 1e-3,
            stable_iterations: 3,
            freeze_couplings: false,
            order: SweepOrder::Forward,
        }
    }

    pub fn with_default_stages(seed: u64) -> Self {
        Self::new(default_stages(), seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("at least one MCEM stage is required".into()));
        }
        if let Some(s) = self.stages.iter().find(|s| s.iterations == 0 || s.kept == 0) {
            return Err(Error::Config(format!("stage {s:?} has no iterations or keeps no samples")));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.optimizer_tol) || !positive(self.convergence_tol) || !positive(self.bound) {
            return Err(Error::Config("tolerances and bound must be positive".into()));
        }
        if self.stable_iterations == 0 {
            return Err(Error::Config("stable_iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    fn free_mask(&self, dim: usize) -> [bool; MAX_DIM] {
        let mut free = [false; MAX_DIM];
        for (k, f) in free.iter_mut().enumerate().take(dim) {
            *f = k == 0 || !self.freeze_couplings;
        }
        free
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum FittedParams {
    Expression { phi: MrfParams, theta: GmmEmissionParams },
    De { phi: DeMrfParams },
}

impl FittedParams {
    /// Prior parameters followed by emission parameters.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            FittedParams::Expression { phi, theta } => {
                let mut v = phi.coefs()[..phi.dim()].to_vec();
                v.extend(theta.to_vec());
                v
            }
            FittedParams::De { phi } => phi.coefs()[..phi.dim()].to_vec(),
        }
    }

    /// Labels matching [`FittedParams::to_vec`]; emission entries are
    /// suffixed with the region index.
    pub fn names(&self) -> Vec<String> {
        match self {
            FittedParams::Expression { phi, theta } => {
                let mut v: Vec<String> = phi.param_names().iter().map(|s| s.to_string()).collect();
                for b in 0..theta.regions.len() {
                    v.extend(["mu1", "sigma1", "mu2", "sigma2"].map(|n| format!("{n}_{b}")));
                }
                v.push("sigma0".into());
                v
            }
            FittedParams::De { phi } => phi.param_names().iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: usize,
    pub iteration: usize,
    pub params: Vec<f64>,
    /// Q at the previous parameters on this iteration's samples.
    pub q_previous: f64,
    /// Q at the updated parameters on the same samples.
    pub q_updated: f64,
    pub max_relative_change: f64,
    pub gradient_norm: f64,
    pub at_bound: bool,
}

/// Everything needed to continue a run after the last completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McemState {
    pub params: FittedParams,
    pub grid: LatentGrid,
    pub trace: Vec<TraceEntry>,
    /// Stage and within-stage iteration of the next iteration to run.
    pub stage: usize,
    pub stage_iteration: usize,
    pub stable_run: usize,
    pub converged: bool,
    pub finished: bool,
    pub seed: u64,
}

impl McemState {
    pub fn completed(&self) -> usize {
        self.trace.len()
    }

    fn fresh(params: FittedParams, grid: LatentGrid, seed: u64) -> Self {
        McemState {
            params,
            grid,
            trace: Vec::new(),
            stage: 0,
            stage_iteration: 0,
            stable_run: 0,
            converged: false,
            finished: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimReport {
    pub iterations: usize,
    /// Norm of the gradient restricted to free coordinates not pinned at the box.
    pub gradient_norm: f64,
    pub at_bound: bool,
    pub converged: bool,
}

fn projected_gradient(g: &Coefs, x: &Coefs, free: &[bool; MAX_DIM], dim: usize, bound: f64) -> (Vec<usize>, f64) {
    let mut active = Vec::with_capacity(dim);
    let mut norm = 0.0;
    for i in 0..dim {
        if !free[i] {
            continue;
        }
        let pinned = (x[i] >= bound && g[i] > 0.0) || (x[i] <= -bound && g[i] < 0.0);
        if !pinned {
            active.push(i);
            norm += g[i] * g[i];
        }
    }
    (active, norm.sqrt())
}

fn newton_direction(h: &[[f64; MAX_DIM]; MAX_DIM], g: &Coefs, active: &[usize]) -> Option<DVector<f64>> {
    let n = active.len();
    let neg = DMatrix::from_fn(n, n, |a, b| -h[active[a]][active[b]]);
    let rhs = DVector::from_fn(n, |a, _| g[active[a]]);
    let scale = (0..n).map(|a| neg[(a, a)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = neg.clone();
        for a in 0..n {
            m[(a, a)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 100.0 };
    }
    None
}

fn non_finite(coefs: &Coefs, dim: usize) -> Error {
    Error::NonFinite {
        params: coefs[..dim].to_vec(),
    }
}

/// Maximize the pseudolikelihood held in `stats` over the free coordinates
/// of the prior, within `[-bound, bound]`, starting from `init`.
pub fn maximize_couplings<P: Prior>(
    stats: &PlStats,
    init: &P,
    free: &[bool; MAX_DIM],
    bound: f64,
    tol: f64,
) -> Result<(P, OptimReport)> {
    let dim = init.dim();
    let start = init.coefs();
    let mut x = start;
    for i in 0..dim {
        if free[i] {
            x[i] = x[i].clamp(-bound, bound);
        }
    }
    let start_value = stats.value(dim, &start);
    let mut e = stats.evaluate(dim, &x);
    if !e.value.is_finite() || e.gradient[..dim].iter().any(|g| !g.is_finite()) {
        return Err(non_finite(&x, dim));
    }
    let mut report = OptimReport {
        iterations: 0,
        gradient_norm: f64::INFINITY,
        at_bound: false,
        converged: false,
    };
    for it in 0..NEWTON_MAX_ITERS {
        report.iterations = it;
        let (active, pg) = projected_gradient(&e.gradient, &x, free, dim, bound);
        report.gradient_norm = pg;
        if pg < tol {
            report.converged = true;
            break;
        }
        let Some(d) = newton_direction(&e.hessian, &e.gradient, &active) else {
            break;
        };
        let slack = 1e-12 * (1.0 + e.value.abs());
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = x;
            let mut ascent = 0.0;
            for (a, &i) in active.iter().enumerate() {
                xn[i] = (x[i] + step * d[a]).clamp(-bound, bound);
                ascent += e.gradient[i] * (xn[i] - x[i]);
            }
            let v = stats.value(dim, &xn);
            if !v.is_finite() {
                return Err(non_finite(&xn, dim));
            }
            if v >= e.value + ARMIJO * ascent - slack {
                accepted = Some(xn);
                break;
            }
            step *= 0.5;
        }
        let Some(xn) = accepted else {
            break;
        };
        let moved = (0..dim).any(|i| xn[i] != x[i]);
        x = xn;
        e = stats.evaluate(dim, &x);
        if !e.value.is_finite() {
            return Err(non_finite(&x, dim));
        }
        if !moved {
            break;
        }
    }
    if !report.converged {
        let (_, pg) = projected_gradient(&e.gradient, &x, free, dim, bound);
        report.gradient_norm = pg;
        report.converged = pg < tol;
    }
    if e.value < start_value && (0..dim).all(|i| !free[i] || start[i].abs() <= bound) {
        // never return a worse point than the (feasible) start
        x = start;
    }
    report.at_bound = (0..dim).any(|i| free[i] && x[i].abs() >= bound);
    Ok((init.with_coefs(&x), report))
}

/// Pseudolikelihood statistics averaged over a set of sample grids.
pub fn sample_stats<P: Prior>(prior: &P, samples: &[LatentGrid]) -> Result<PlStats> {
    if samples.is_empty() {
        return Err(Error::Config("at least one sample grid is required".into()));
    }
    let mut stats = PlStats::new();
    let w = 1.0 / samples.len() as f64;
    for s in samples {
        stats.add_grid(prior, s, w);
    }
    Ok(stats)
}

fn state_frequencies(samples: &[LatentGrid]) -> Vec<f64> {
    let n = samples[0].shape().cells();
    let mut freq = vec![0.0; n];
    for s in samples {
        for (f, &x) in freq.iter_mut().zip(s.states()) {
            *f += x as f64;
        }
    }
    let m = samples.len() as f64;
    freq.iter_mut().for_each(|f| *f /= m);
    freq
}

/// Monte Carlo Q for the expression model: the sample average of the
/// log-pseudolikelihood plus the log-emission density.
pub fn monte_carlo_q_expression(
    samples: &[LatentGrid],
    phi: &MrfParams,
    data: &ExpressionTensor,
    theta: &GmmEmissionParams,
) -> Result<f64> {
    let stats = sample_stats(phi, samples)?;
    let freq = state_frequencies(samples);
    Ok(stats.value(phi.dim(), &phi.coefs()) + expected_log_emission(data, theta, &freq))
}

/// Monte Carlo Q for the DE model; masked cells contribute nothing.
pub fn monte_carlo_q_de(samples: &[LatentGrid], phi: &DeMrfParams, z: &ZScoreGrid, model: &LocalFdrModel) -> Result<f64> {
    let stats = sample_stats(phi, samples)?;
    let freq = state_frequencies(samples);
    Ok(stats.value(phi.dim(), &phi.coefs()) + DensityTerm::new(z, model).expected(&freq))
}

/// The data side of the model as seen by the MCEM driver.
trait EmissionTerm {
    fn log_odds(&self) -> Vec<f64>;
    fn expected(&self, freq: &[f64]) -> f64;
    /// Closed-form M-step; returns flags to log.
    fn update(&mut self, freq: &[f64]) -> Vec<ThetaFlag>;
}

struct GmmTerm<'a> {
    data: &'a ExpressionTensor,
    theta: GmmEmissionParams,
}

impl EmissionTerm for GmmTerm<'_> {
    fn log_odds(&self) -> Vec<f64> {
        cell_log_odds(self.data, &self.theta)
    }

    fn expected(&self, freq: &[f64]) -> f64 {
        expected_log_emission(self.data, &self.theta, freq)
    }

    fn update(&mut self, freq: &[f64]) -> Vec<ThetaFlag> {
        let up = update_theta_mle(self.data, freq, &self.theta);
        self.theta = up.params;
        up.flags
    }
}

struct DensityTerm<'a> {
    z: &'a ZScoreGrid,
    model: &'a LocalFdrModel,
}

impl<'a> DensityTerm<'a> {
    fn new(z: &'a ZScoreGrid, model: &'a LocalFdrModel) -> Self {
        DensityTerm { z, model }
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl EmissionTerm for DensityTerm<'_> {
    fn log_odds(&self) -> Vec<f64> {
        de_log_odds(self.z, self.model)
    }

    fn expected(&self, freq: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, &w) in freq.iter().enumerate() {
            if self.z.mask()[i] {
                continue;
            }
            let z = self.z.z()[i];
            let ln_f0 = -0.5 * z * z - LN_SQRT_2PI;
            if w > 0.0 {
                total += w * (self.model.log_odds(z) + ln_f0);
            }
            if w < 1.0 {
                total += (1.0 - w) * ln_f0;
            }
        }
        total
    }

    fn update(&mut self, _freq: &[f64]) -> Vec<ThetaFlag> {
        Vec::new()
    }
}

/// Per-cell `log f1(z) - log f0(z)`, zero on masked cells.
pub fn de_log_odds(z: &ZScoreGrid, model: &LocalFdrModel) -> Vec<f64> {
    z.z()
        .iter()
        .zip(z.mask())
        .map(|(&v, &m)| if m { 0.0 } else { model.log_odds(v) })
        .collect()
}

struct EStep {
    grid: LatentGrid,
    stats: PlStats,
    freq: Vec<f64>,
}

fn e_step<P: Prior>(init: &LatentGrid, phi: &P, log_odds: &[f64], schedule: &ChainSchedule) -> Result<EStep> {
    let shape = *init.shape();
    let n = shape.block_len();
    let target = Target::new(phi, log_odds);
    let (grid, sinks) = run_chain_by_gene(
        init,
        &target,
        schedule,
        |_| (PlStats::new(), vec![0u32; n]),
        |(stats, counts), g, block| {
            stats.add_block(phi, &shape, block, init.gene_mask(g), 1.0);
            for (c, &x) in counts.iter_mut().zip(block) {
                *c += x as u32;
            }
        },
    )?;
    let mut stats = PlStats::new();
    let mut freq = Vec::with_capacity(shape.cells());
    let kept = schedule.kept as f64;
    for (s, counts) in &sinks {
        stats.merge(s);
        freq.extend(counts.iter().map(|&c| c as f64 / kept));
    }
    // each gene's sink counted `kept` blocks of weight 1
    stats.scale(1.0 / kept);
    Ok(EStep { grid, stats, freq })
}

fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(o, n)| (n - o).abs() / o.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn run_stages<P, E>(
    config: &McemConfig,
    phi: &mut P,
    emission: &mut E,
    state: &mut McemState,
    pack: impl Fn(&P, &E) -> FittedParams,
    hook: &mut dyn FnMut(&McemState) -> Result<()>,
) -> Result<()>
where
    P: Prior,
    E: EmissionTerm,
{
    let dim = phi.dim();
    let free = config.free_mask(dim);
    while !state.finished {
        let stage = config.stages[state.stage];
        let seed = rng::derive_seed(config.seed, &[state.completed() as u64]);
        let schedule = ChainSchedule::new(stage.burn_in, stage.kept, seed)?.with_order(config.order);
        let log_odds = emission.log_odds();
        let step = e_step(&state.grid, phi, &log_odds, &schedule)?;
        let before = state.params.to_vec();
        let q_previous = step.stats.value(dim, &phi.coefs()) + emission.expected(&step.freq);
        for flag in emission.update(&step.freq) {
            log::warn!("iteration {}: emission update {flag:?}", state.completed());
        }
        let (next, report) = maximize_couplings(&step.stats, phi, &free, config.bound, config.optimizer_tol)?;
        if !report.converged {
            log::warn!(
                "iteration {}: M-step stopped with gradient norm {:.3e}",
                state.completed(),
                report.gradient_norm
            );
        }
        *phi = next;
        let q_updated = step.stats.value(dim, &phi.coefs()) + emission.expected(&step.freq);
        state.params = pack(phi, emission);
        let params = state.params.to_vec();
        let change = relative_change(&before, &params);
        log::info!(
            "stage {} iteration {}: Q {:.6} -> {:.6}, max relative change {:.2e}",
            state.stage,
            state.stage_iteration,
            q_previous,
            q_updated,
            change
        );
        state.trace.push(TraceEntry {
            stage: state.stage,
            iteration: state.stage_iteration,
            params,
            q_previous,
            q_updated,
            max_relative_change: change,
            gradient_norm: report.gradient_norm,
            at_bound: report.at_bound,
        });
        state.grid = step.grid;
        state.stable_run = if change < config.convergence_tol { state.stable_run + 1 } else { 0 };
        state.stage_iteration += 1;
        let stable = state.stable_run >= config.stable_iterations;
        if stable || state.stage_iteration >= stage.iterations {
            if state.stage + 1 == config.stages.len() {
                state.finished = true;
                state.converged = stable;
            } else {
                state.stage += 1;
                state.stage_iteration = 0;
                state.stable_run = 0;
            }
        }
        hook(state)?;
    }
    if !state.converged {
        log::warn!("MCEM reached the end of its schedule without meeting the convergence rule");
    }
    Ok(())
}

fn check_resume(state: &McemState, config: &McemConfig, grid_like: &LatentGrid) -> Result<()> {
    if !state.grid.same_layout(grid_like) {
        return Err(Error::Checkpoint(format!(
            "checkpoint grid {:?} does not match the data {:?}",
            state.grid.shape(),
            grid_like.shape()
        )));
    }
    if state.seed != config.seed {
        return Err(Error::Checkpoint(format!(
            "checkpoint seed {} differs from the configured seed {}",
            state.seed, config.seed
        )));
    }
    if state.stage >= config.stages.len() && !state.finished {
        return Err(Error::Checkpoint("checkpoint stage lies beyond the configured schedule".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExpressionFit {
    pub phi: MrfParams,
    pub theta: GmmEmissionParams,
    /// The independent-mixture fit used to initialize (absent after resume).
    pub plain: Option<PlainGmmFit>,
    pub state: McemState,
}

pub fn fit_expression(data: &ExpressionTensor, config: &McemConfig) -> Result<ExpressionFit> {
    fit_expression_with(data, config, None, &mut |_| Ok(()))
}

/// Fit the expression model, optionally continuing from `resume`. `hook`
/// sees the state after every completed iteration; an error from it stops
/// the run and is returned.
pub fn fit_expression_with(
    data: &ExpressionTensor,
    config: &McemConfig,
    resume: Option<McemState>,
    hook: &mut dyn FnMut(&McemState) -> Result<()>,
) -> Result<ExpressionFit> {
    config.validate()?;
    let shape = *data.shape();
    let (mut phi, theta, plain, mut state) = match resume {
        Some(state) => {
            check_resume(&state, config, &LatentGrid::zeros(shape))?;
            let FittedParams::Expression { phi, theta } = state.params.clone() else {
                return Err(Error::Checkpoint("checkpoint holds a DE fit, not an expression fit".into()));
            };
            if theta.regions.len() != shape.regions {
                return Err(Error::Checkpoint("checkpoint region count does not match the data".into()));
            }
            (phi, theta, None, state)
        }
        None => {
            let sigma0_sq = estimate_sigma0(data)?;
            let plain = fit_plain_gmm(data, sigma0_sq)?;
            let free = config.free_mask(3);
            let zero = MrfParams::zero();
            let stats = PlStats::from_grid(&zero, &plain.grid);
            let (phi, _) = maximize_couplings(&stats, &zero, &free, config.bound, config.optimizer_tol)?;
            log::info!("initial prior from plain mixture calls: {phi:?}");
            let theta = plain.params.clone();
            let state = McemState::fresh(
                FittedParams::Expression {
                    phi,
                    theta: theta.clone(),
                },
                plain.grid.clone(),
                config.seed,
            );
            (phi, theta, Some(plain), state)
        }
    };
    let mut term = GmmTerm { data, theta };
    run_stages(
        config,
        &mut phi,
        &mut term,
        &mut state,
        |p, t| FittedParams::Expression {
            phi: *p,
            theta: t.theta.clone(),
        },
        hook,
    )?;
    Ok(ExpressionFit {
        phi,
        theta: term.theta,
        plain,
        state,
    })
}

#[derive(Debug, Clone)]
pub struct DeFit {
    pub phi: DeMrfParams,
    pub state: McemState,
}

pub fn fit_de(z: &ZScoreGrid, model: &LocalFdrModel, groups: &[RegionGroup], config: &McemConfig) -> Result<DeFit> {
    fit_de_with(z, model, groups, config, None, &mut |_| Ok(()))
}

/// Fit the DE prior with fixed emission densities. The initial calls are
/// the cells whose empirical-Bayes local fdr is below 0.5.
pub fn fit_de_with(
    z: &ZScoreGrid,
    model: &LocalFdrModel,
    groups: &[RegionGroup],
    config: &McemConfig,
    resume: Option<McemState>,
    hook: &mut dyn FnMut(&McemState) -> Result<()>,
) -> Result<DeFit> {
    config.validate()?;
    if groups.len() != z.shape().regions {
        return Err(Error::Shape(format!(
            "{} region groups for {} regions",
            groups.len(),
            z.shape().regions
        )));
    }
    let template = z.latent_template();
    let (mut phi, mut state) = match resume {
        Some(state) => {
            check_resume(&state, config, &template)?;
            let FittedParams::De { phi } = state.params.clone() else {
                return Err(Error::Checkpoint("checkpoint holds an expression fit, not a DE fit".into()));
            };
            if phi.groups != groups {
                return Err(Error::Checkpoint("checkpoint region groups differ from the metadata".into()));
            }
            (phi, state)
        }
        None => {
            let mut grid = template;
            for i in 0..grid.shape().cells() {
                if !z.mask()[i] && eb_posterior(z.z()[i], model) < 0.5 {
                    grid.states_mut()[i] = 1;
                }
            }
            let zero = DeMrfParams::zero(groups.to_vec());
            zero.validate(z.shape())?;
            let stats = PlStats::from_grid(&zero, &grid);
            let free = config.free_mask(zero.dim());
            let (phi, _) = maximize_couplings(&stats, &zero, &free, config.bound, config.optimizer_tol)?;
            log::info!("initial DE prior from empirical-Bayes calls: {phi:?}");
            let state = McemState::fresh(FittedParams::De { phi: phi.clone() }, grid, config.seed);
            (phi, state)
        }
    };
    let mut term = DensityTerm::new(z, model);
    run_stages(
        config,
        &mut phi,
        &mut term,
        &mut state,
        |p, _| FittedParams::De { phi: p.clone() },
        hook,
    )?;
    Ok(DeFit { phi, state })
}

/// Posterior probability of expression at fixed parameters.
pub fn expression_posterior(
    data: &ExpressionTensor,
    phi: &MrfParams,
    theta: &GmmEmissionParams,
    init: &LatentGrid,
    schedule: &ChainSchedule,
) -> Result<PosteriorGrid> {
    let lo = cell_log_odds(data, theta);
    posterior_marginals(init, &Target::new(phi, &lo), schedule)
}

/// Posterior probability of differential expression at fixed parameters.
pub fn de_posterior(
    z: &ZScoreGrid,
    model: &LocalFdrModel,
    phi: &DeMrfParams,
    init: &LatentGrid,
    schedule: &ChainSchedule,
) -> Result<PosteriorGrid> {
    let lo = de_log_odds(z, model);
    posterior_marginals(init, &Target::new(phi, &lo), schedule)
}
