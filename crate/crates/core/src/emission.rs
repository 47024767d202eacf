//! Gaussian mixture emission model for replicate expression values.
//!
//! Given the latent state `x`, each replicate of a (region, gene, period)
//! cell has marginal law `N(mu_x, sigma_x^2 + sigma0^2)`, where
//! `(mu_x, sigma_x)` are region-specific and `sigma0` is the global replicate
//! noise. Replicates of one cell share a cell-level mean drawn from the
//! component, so they are exchangeable rather than independent: the cell
//! density is multivariate normal with covariance
//! `sigma_x^2 J + sigma0^2 I`. Component 1 (`x = 0`, unexpressed) always has
//! the lower mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Cell, LatentGrid, LatticeShape};
use crate::model::RegionGroup;
use crate::rng;

/// Smallest variance any fitted component may take.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Ragged replicate array `y[b][g][t][k]` with `n[b][t]` replicates per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionTensor {
    shape: LatticeShape,
    replicates: Vec<usize>,
    offsets: Vec<usize>,
    per_gene: usize,
    values: Vec<f64>,
    pub region_names: Vec<String>,
    pub period_names: Vec<String>,
    pub gene_names: Vec<String>,
    pub groups: Option<Vec<RegionGroup>>,
}

impl ExpressionTensor {
    /// `replicates[b * T + t]` gives `n_bt`; `values` is gene-major, then
    /// region, then period, then replicate.
    pub fn new(shape: LatticeShape, replicates: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let (nb, nt) = (shape.regions, shape.times);
        if replicates.len() != nb * nt {
            return Err(Error::Shape(format!(
                "expected {} replicate counts, got {}",
                nb * nt,
                replicates.len()
            )));
        }
        let mut offsets = Vec::with_capacity(nb * nt);
        let mut acc = 0;
        for &n in &replicates {
            offsets.push(acc);
            acc += n;
        }
        if acc == 0 {
            return Err(Error::DegenerateData("no replicates in any cell".into()));
        }
        if values.len() != acc * shape.genes {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                acc * shape.genes,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::DegenerateData(format!("non-finite expression value {v}")));
        }
        Ok(ExpressionTensor {
            shape,
            replicates,
            offsets,
            per_gene: acc,
            values,
            region_names: (0..nb).map(|b| format!("R{}", b + 1)).collect(),
            period_names: (0..nt).map(|t| format!("P{}", t + 1)).collect(),
            gene_names: (0..shape.genes).map(|g| format!("G{}", g + 1)).collect(),
            groups: None,
        })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn replicates(&self, region: usize, time: usize) -> usize {
        self.replicates[region * self.shape.times + time]
    }

    pub fn replicate_counts(&self) -> &[usize] {
        &self.replicates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell(&self, cell: Cell) -> &[f64] {
        let bt = cell.region * self.shape.times + cell.time;
        let start = cell.gene * self.per_gene + self.offsets[bt];
        &self.values[start..start + self.replicates[bt]]
    }

    pub fn cell_mut(&mut self, cell: Cell) -> &mut [f64] {
        let bt = cell.region * self.shape.times + cell.time;
        let start = cell.gene * self.per_gene + self.offsets[bt];
        &mut self.values[start..start + self.replicates[bt]]
    }

    pub fn mean(&self, cell: Cell) -> Option<f64> {
        let y = self.cell(cell);
        (!y.is_empty()).then(|| y.iter().sum::<f64>() / y.len() as f64)
    }
}

/// Unbiased pooled within-cell variance `sigma0^2`.
pub fn estimate_sigma0(data: &ExpressionTensor) -> Result<f64> {
    let shape = data.shape();
    let df: usize = data
        .replicate_counts()
        .iter()
        .map(|&n| n.saturating_sub(1))
        .sum();
    if df == 0 {
        return Err(Error::DegenerateData(
            "every (region, period) has a single replicate; sigma0 is not estimable".into(),
        ));
    }
    let mut ss = 0.0;
    for i in 0..shape.cells() {
        let y = data.cell(shape.cell_at(i));
        if y.len() < 2 {
            continue;
        }
        let m = y.iter().sum::<f64>() / y.len() as f64;
        ss += y.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    Ok(ss / (shape.genes * df) as f64)
}

/// Mixture components of one region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionComponents {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
}

impl RegionComponents {
    pub fn component(&self, expressed: bool) -> (f64, f64) {
        if expressed {
            (self.mu2, self.sigma2)
        } else {
            (self.mu1, self.sigma1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmEmissionParams {
    pub regions: Vec<RegionComponents>,
    /// Replicate standard deviation.
    pub sigma0: f64,
}

impl GmmEmissionParams {
    pub fn uniform(regions: usize, comp: RegionComponents, sigma0: f64) -> Self {
        GmmEmissionParams {
            regions: vec![comp; regions],
            sigma0,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.regions
            .iter()
            .flat_map(|c| [c.mu1, c.sigma1, c.mu2, c.sigma2])
            .chain(std::iter::once(self.sigma0))
            .collect()
    }
}

/// Log density of a cell's replicate vector given its state.
///
/// Factorises into `log N(ybar; mu_x, sigma_x^2 + sigma0^2 / n)` and a
/// within-cell term that does not depend on the state. With a single
/// replicate this is `log N(y; mu_x, sigma_x^2 + sigma0^2)`. When
/// `sigma0 == 0` the joint law is singular and only the cell-mean term is
/// returned.
pub fn log_emission(y: &[f64], expressed: bool, comp: &RegionComponents, sigma0: f64) -> f64 {
    let (mu, sd) = comp.component(expressed);
    let n = y.len() as f64;
    let s0 = sigma0 * sigma0;
    let mean = y.iter().sum::<f64>() / n;
    let var = sd * sd + s0 / n;
    let between = -0.5 * (LN_2PI + var.ln() + (mean - mu).powi(2) / var);
    if y.len() < 2 || s0 <= 0.0 {
        return between;
    }
    let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    between - 0.5 * ((n - 1.0) * (LN_2PI + s0.ln()) + ss / s0 + n.ln())
}

/// Per-cell `log f(y | x = 1) - log f(y | x = 0)`; zero for cells without data.
pub fn cell_log_odds(data: &ExpressionTensor, theta: &GmmEmissionParams) -> Vec<f64> {
    let shape = data.shape();
    (0..shape.cells())
        .map(|i| {
            let cell = shape.cell_at(i);
            let y = data.cell(cell);
            if y.is_empty() {
                return 0.0;
            }
            let comp = &theta.regions[cell.region];
            log_emission(y, true, comp, theta.sigma0) - log_emission(y, false, comp, theta.sigma0)
        })
        .collect()
}

/// `sum_cells [w log f(y|1) + (1 - w) log f(y|0)]` for state frequencies `w`.
/// Equals the sample average of `log f(Y | X_l)` when `w` are the empirical
/// frequencies of `X_l`.
pub fn expected_log_emission(data: &ExpressionTensor, theta: &GmmEmissionParams, freq: &[f64]) -> f64 {
    let shape = data.shape();
    let mut total = 0.0;
    for (i, &w) in freq.iter().enumerate() {
        let cell = shape.cell_at(i);
        let y = data.cell(cell);
        if y.is_empty() {
            continue;
        }
        let comp = &theta.regions[cell.region];
        if w > 0.0 {
            total += w * log_emission(y, true, comp, theta.sigma0);
        }
        if w < 1.0 {
            total += (1.0 - w) * log_emission(y, false, comp, theta.sigma0);
        }
    }
    total
}

/// A fitted two-component univariate Gaussian mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixture1d {
    /// Weight of the high-mean component.
    pub weight_high: f64,
    pub mu_low: f64,
    pub var_low: f64,
    pub mu_high: f64,
    pub var_high: f64,
    pub loglik: f64,
    pub iterations: usize,
}

impl Mixture1d {
    /// Posterior probability of the high-mean component.
    pub fn posterior_high(&self, v: f64) -> f64 {
        let lh = self.weight_high.ln() - 0.5 * (self.var_high.ln() + (v - self.mu_high).powi(2) / self.var_high);
        let ll = (1.0 - self.weight_high).ln()
            - 0.5 * (self.var_low.ln() + (v - self.mu_low).powi(2) / self.var_low);
        crate::model::conditional_prob(lh - ll)
    }
}

const EM_MAX_ITER: usize = 1000;
const EM_TOL: f64 = 1e-10;
const EM_ATTEMPTS: usize = 5;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One EM run from the given starting means. Returns `None` when a component
/// collapses onto fewer than two effective points.
fn em_from(values: &[f64], start: (f64, f64), var0: f64) -> Option<Mixture1d> {
    let n = values.len() as f64;
    let (mut m1, mut m2) = start;
    let (mut v1, mut v2) = (var0, var0);
    let mut w2: f64 = 0.5;
    let mut resp = vec![0.0; values.len()];
    let mut prev = f64::NEG_INFINITY;
    for iter in 0..EM_MAX_ITER {
        let mut ll: f64 = 0.0;
        for (r, &v) in resp.iter_mut().zip(values) {
            let a = (1.0 - w2).ln() - 0.5 * (LN_2PI + v1.ln() + (v - m1).powi(2) / v1);
            let b = w2.ln() - 0.5 * (LN_2PI + v2.ln() + (v - m2).powi(2) / v2);
            let top = a.max(b);
            let lse = top + ((a - top).exp() + (b - top).exp()).ln();
            *r = (b - lse).exp();
            ll += lse;
        }
        if !ll.is_finite() {
            return None;
        }
        let s2: f64 = resp.iter().sum();
        let s1 = n - s2;
        if s1 < 2.0 || s2 < 2.0 {
            return None;
        }
        m1 = resp.iter().zip(values).map(|(r, v)| (1.0 - r) * v).sum::<f64>() / s1;
        m2 = resp.iter().zip(values).map(|(r, v)| r * v).sum::<f64>() / s2;
        let raw1 = resp.iter().zip(values).map(|(r, v)| (1.0 - r) * (v - m1).powi(2)).sum::<f64>() / s1;
        let raw2 = resp.iter().zip(values).map(|(r, v)| r * (v - m2).powi(2)).sum::<f64>() / s2;
        // A component below the floor that holds only a handful of points is
        // the classic likelihood singularity; a well-populated one is a
        // genuine point mass and is clamped.
        if (raw1 < VARIANCE_FLOOR && s1 < 5.0) || (raw2 < VARIANCE_FLOOR && s2 < 5.0) {
            return None;
        }
        v1 = raw1.max(VARIANCE_FLOOR);
        v2 = raw2.max(VARIANCE_FLOOR);
        w2 = s2 / n;
        if (ll - prev).abs() <= EM_TOL * ll.abs().max(1.0) {
            return Some(order(Mixture1d {
                weight_high: w2,
                mu_low: m1,
                var_low: v1,
                mu_high: m2,
                var_high: v2,
                loglik: ll,
                iterations: iter + 1,
            }));
        }
        prev = ll;
    }
    Some(order(Mixture1d {
        weight_high: w2,
        mu_low: m1,
        var_low: v1,
        mu_high: m2,
        var_high: v2,
        loglik: prev,
        iterations: EM_MAX_ITER,
    }))
}

fn order(m: Mixture1d) -> Mixture1d {
    if m.mu_low <= m.mu_high {
        m
    } else {
        Mixture1d {
            weight_high: 1.0 - m.weight_high,
            mu_low: m.mu_high,
            var_low: m.var_high,
            mu_high: m.mu_low,
            var_high: m.var_low,
            ..m
        }
    }
}

/// Two-component EM on univariate data, starting from the lower and upper
/// quartiles and retrying from random data points if a component collapses.
pub fn fit_two_component(values: &[f64], seed: u64) -> Result<Mixture1d> {
    fit_two_component_from(values, None, seed)
}

pub fn fit_two_component_from(values: &[f64], start: Option<(f64, f64)>, seed: u64) -> Result<Mixture1d> {
    if values.len() < 4 {
        return Err(Error::DegenerateData(format!(
            "mixture fit needs at least 4 values, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64)
        .max(VARIANCE_FLOOR);
    let mut start = start.unwrap_or((quantile(&sorted, 0.25), quantile(&sorted, 0.75)));
    let mut rng = rng::substream(seed, &[0x6d6978]);
    for _ in 0..EM_ATTEMPTS {
        if let Some(fit) = em_from(values, start, var) {
            return Ok(fit);
        }
        use rand::Rng;
        let a = sorted[rng.random_range(0..sorted.len())];
        let b = sorted[rng.random_range(0..sorted.len())];
        start = (a.min(b), a.max(b));
    }
    Err(Error::EmFailed {
        attempts: EM_ATTEMPTS,
        reason: "a mixture component collapsed below the variance floor".into(),
    })
}

/// Result of the independent (no coupling) mixture fit.
#[derive(Debug, Clone)]
pub struct PlainGmmFit {
    pub params: GmmEmissionParams,
    /// Hard calls, posterior of the expressed component >= 0.5.
    pub grid: LatentGrid,
    /// Posterior probability of the expressed component per cell
    /// (0.5 where a cell has no data).
    pub posterior: Vec<f64>,
    pub mixtures: Vec<Mixture1d>,
}

/// Per-region two-component EM on cell means, ignoring all coupling.
pub fn fit_plain_gmm(data: &ExpressionTensor, sigma0_sq: f64) -> Result<PlainGmmFit> {
    let shape = *data.shape();
    let mut regions = Vec::with_capacity(shape.regions);
    let mut mixtures = Vec::with_capacity(shape.regions);
    let mut posterior = vec![0.5; shape.cells()];
    for b in 0..shape.regions {
        let mut cells = Vec::new();
        let mut means = Vec::new();
        let mut inv_n = 0.0;
        for g in 0..shape.genes {
            for t in 0..shape.times {
                let c = Cell::new(b, g, t);
                if let Some(m) = data.mean(c) {
                    cells.push(shape.index(c));
                    means.push(m);
                    inv_n += 1.0 / data.replicates(b, t) as f64;
                }
            }
        }
        let fit = fit_two_component(&means, b as u64)?;
        inv_n /= means.len() as f64;
        // Cell means carry sigma0^2 / n of replicate noise on top of the
        // component spread.
        let deconv = |v: f64| (v - sigma0_sq * inv_n).max(VARIANCE_FLOOR).sqrt();
        regions.push(RegionComponents {
            mu1: fit.mu_low,
            sigma1: deconv(fit.var_low),
            mu2: fit.mu_high,
            sigma2: deconv(fit.var_high),
        });
        for (&i, &m) in cells.iter().zip(&means) {
            posterior[i] = fit.posterior_high(m);
        }
        mixtures.push(fit);
    }
    let states = posterior.iter().map(|&p| (p >= 0.5) as u8).collect();
    Ok(PlainGmmFit {
        params: GmmEmissionParams {
            regions,
            sigma0: sigma0_sq.sqrt(),
        },
        grid: LatentGrid::from_states(shape, states)?,
        posterior,
        mixtures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaFlag {
    /// No cell of the region carried weight for this component; the previous
    /// value was kept.
    EmptyComponent { region: usize, expressed: bool },
    /// The weighted means came out in the wrong order and were swapped.
    Swapped { region: usize },
}

#[derive(Debug, Clone)]
pub struct ThetaUpdate {
    pub params: GmmEmissionParams,
    pub flags: Vec<ThetaFlag>,
}

/// Maximise the emission part of the Monte Carlo Q function.
///
/// `freq[i]` is the fraction of samples with state 1 at cell `i`. Each
/// cell mean gets that weight for the expressed component and its
/// complement for the other. The weighted variance of cell means estimates
/// `sigma^2` plus the average `sigma0^2 / n`; the component spread is what is
/// left after removing the latter, floored at [`VARIANCE_FLOOR`].
pub fn update_theta_mle(
    data: &ExpressionTensor,
    freq: &[f64],
    prev: &GmmEmissionParams,
) -> ThetaUpdate {
    let shape = data.shape();
    let s0 = prev.sigma0 * prev.sigma0;
    let mut flags = Vec::new();
    let mut regions = prev.regions.clone();
    for (b, comp) in regions.iter_mut().enumerate() {
        // [weight, sum ybar, sum ybar^2, sum sigma0^2 / n] for low and high
        let mut acc = [[0.0f64; 4]; 2];
        for g in 0..shape.genes {
            for t in 0..shape.times {
                let c = Cell::new(b, g, t);
                let y = data.cell(c);
                if y.is_empty() {
                    continue;
                }
                let w = freq[shape.index(c)];
                let n = y.len() as f64;
                let m = y.iter().sum::<f64>() / n;
                for (k, wk) in [(0, 1.0 - w), (1, w)] {
                    acc[k][0] += wk;
                    acc[k][1] += wk * m;
                    acc[k][2] += wk * m * m;
                    acc[k][3] += wk * s0 / n;
                }
            }
        }
        let mut fitted = [(comp.mu1, comp.sigma1), (comp.mu2, comp.sigma2)];
        for (k, a) in acc.iter().enumerate() {
            if a[0] <= 0.0 {
                flags.push(ThetaFlag::EmptyComponent {
                    region: b,
                    expressed: k == 1,
                });
                continue;
            }
            let mu = a[1] / a[0];
            let var = (a[2] / a[0] - mu * mu).max(0.0);
            fitted[k] = (mu, (var - a[3] / a[0]).max(VARIANCE_FLOOR).sqrt());
        }
        if fitted[0].0 > fitted[1].0 {
            fitted.swap(0, 1);
            flags.push(ThetaFlag::Swapped { region: b });
        }
        *comp = RegionComponents {
            mu1: fitted[0].0,
            sigma1: fitted[0].1,
            mu2: fitted[1].0,
            sigma2: fitted[1].1,
        };
    }
    ThetaUpdate {
        params: GmmEmissionParams {
            regions,
            sigma0: prev.sigma0,
        },
        flags,
    }
}
