//! Synthetic data with known latent states, and the metrics used to score
//! estimators against them.
//!
//! Two expression settings (`expr-1`, `expr-2`) produce replicate
//! expression tensors; three DE settings (`de-1`, `de-2`, `de-3`) produce
//! z-score grids on `regions x genes x slots`.

mod compare;
mod metrics;

pub use compare::{compare_models, CompareSettings, Comparison, Method, RocSeries, RunOutcome, SummaryRow};
pub use metrics::{average_roc, misclassification_rate, roc_by_group, roc_curve, RocCurve, RocPoint, ROC_GRID_POINTS};

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::de::{t_statistic, t_to_z, ZScoreGrid};
use crate::emission::ExpressionTensor;
use crate::error::{Error, Result};
use crate::lattice::{Cell, LatentGrid, LatticeShape};
use crate::model::{DeMrfParams, MrfParams, Prior, RegionGroup};
use crate::rng::{self, Rng};
use crate::sampler::{run_chain, ChainSchedule, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "expr-1")]
    Expr1,
    #[serde(rename = "expr-2")]
    Expr2,
    #[serde(rename = "de-1")]
    De1,
    #[serde(rename = "de-2")]
    De2,
    #[serde(rename = "de-3")]
    De3,
}

impl Setting {
    pub fn is_expression(self) -> bool {
        matches!(self, Setting::Expr1 | Setting::Expr2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Setting::Expr1 => "expr-1",
            Setting::Expr2 => "expr-2",
            Setting::De1 => "de-1",
            Setting::De2 => "de-2",
            Setting::De3 => "de-3",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expr-1" => Ok(Setting::Expr1),
            "expr-2" => Ok(Setting::Expr2),
            "de-1" => Ok(Setting::De1),
            "de-2" => Ok(Setting::De2),
            "de-3" => Ok(Setting::De3),
            _ => Err(Error::Config(format!(
                "unknown setting `{s}` (expected expr-1, expr-2, de-1, de-2 or de-3)"
            ))),
        }
    }
}

/// Mixture used to draw per-cell mean expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpressionMixture {
    pub mu1: f64,
    pub sigma1: f64,
    pub mu2: f64,
    pub sigma2: f64,
    /// Replicate noise variance.
    pub sigma0_sq: f64,
}

impl Default for ExpressionMixture {
    fn default() -> Self {
        ExpressionMixture {
            mu1: 4.5,
            sigma1: 0.75,
            mu2: 8.0,
            sigma2: 1.5,
            sigma0_sq: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub setting: Setting,
    pub genes: usize,
    pub regions: usize,
    /// Leading regions forming the neocortex group.
    pub neocortex: usize,
    /// Periods for expression settings, DE slots for DE settings.
    pub periods: usize,
    pub replicates: usize,
    pub runs: usize,
    pub seed: u64,
    pub mixture: ExpressionMixture,
    pub phi: MrfParams,
    pub phi_de: DeParams,
    /// Full Gibbs sweeps applied to the random start.
    pub gibbs_rounds: usize,
    /// expr-2: per-period switching probability of the shared chain.
    pub transition: f64,
    /// expr-2: fraction of cells complemented; de-3: fraction of DE cells
    /// per slot exchanged with EE cells.
    pub perturbation: f64,
    /// de-1/de-2: DE probability of the Gibbs start.
    pub de_start: f64,
    /// Fraction of genes made unexpressed over a prefix or suffix of slots.
    pub unexpressed_genes: f64,
    /// de-1/de-3: magnitude of the DE z-score mean.
    pub de_shift: f64,
    /// de-3: DE probability in the first slot.
    pub de3_start: f64,
    /// de-3: fraction of DE genes switching to EE between slots.
    pub de3_churn: f64,
    /// de-3: fraction of neocortex DE genes that are EE in the other group.
    pub de3_group_switch: f64,
}

/// DE prior coefficients without the region grouping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeParams {
    pub gamma_de: f64,
    pub beta_cc: f64,
    pub beta_nn: f64,
    pub beta_cn: f64,
    pub beta_t: f64,
}

impl Default for DeParams {
    fn default() -> Self {
        DeParams {
            gamma_de: -0.10,
            beta_cc: 0.31,
            beta_nn: 0.52,
            beta_cn: 0.06,
            beta_t: 0.14,
        }
    }
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec::new(Setting::Expr1)
    }
}

impl SimSpec {
    pub fn new(setting: Setting) -> Self {
        SimSpec {
            setting,
            genes: 100,
            regions: 16,
            neocortex: 11,
            periods: if setting.is_expression() { 13 } else { 12 },
            replicates: 3,
            runs: 100,
            seed: 1,
            mixture: ExpressionMixture::default(),
            phi: MrfParams::new(0.08, 0.20, 1.5),
            phi_de: DeParams::default(),
            gibbs_rounds: 3,
            transition: 0.1,
            perturbation: 0.1,
            de_start: 0.4,
            unexpressed_genes: 0.1,
            de_shift: 2.0,
            de3_start: 0.15,
            de3_churn: 0.7,
            de3_group_switch: 0.4,
        }
    }

    pub fn groups(&self) -> Vec<RegionGroup> {
        RegionGroup::split(self.regions, self.neocortex)
    }

    pub fn de_prior(&self) -> DeMrfParams {
        let p = self.phi_de;
        DeMrfParams::new(p.gamma_de, p.beta_cc, p.beta_nn, p.beta_cn, p.beta_t, self.groups())
    }

    pub fn shape(&self) -> Result<LatticeShape> {
        LatticeShape::new(self.regions, self.genes, self.periods)
    }

    pub fn validate(&self) -> Result<()> {
        self.shape()?;
        if self.neocortex > self.regions {
            return Err(Error::Config(format!(
                "{} neocortex regions out of {}",
                self.neocortex, self.regions
            )));
        }
        let unit = [
            ("transition", self.transition),
            ("perturbation", self.perturbation),
            ("de_start", self.de_start),
            ("unexpressed_genes", self.unexpressed_genes),
            ("de3_start", self.de3_start),
            ("de3_churn", self.de3_churn),
            ("de3_group_switch", self.de3_group_switch),
        ];
        if let Some((name, v)) = unit.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("{name} = {v} is not a proportion")));
        }
        let m = self.mixture;
        let p = self.phi_de;
        let finite = [
            m.mu1, m.sigma1, m.mu2, m.sigma2, m.sigma0_sq, self.phi.gamma, self.phi.beta_spatial,
            self.phi.beta_temporal, p.gamma_de, p.beta_cc, p.beta_nn, p.beta_cn, p.beta_t, self.de_shift,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("simulation parameters must be finite".into()));
        }
        if m.sigma1 < 0.0 || m.sigma2 < 0.0 || m.sigma0_sq < 0.0 {
            return Err(Error::Config("standard deviations and variances must be non-negative".into()));
        }
        if self.setting == Setting::De2 || self.setting.is_expression() {
            if self.replicates < 2 {
                return Err(Error::Config("at least 2 replicates are needed".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum Observations {
    Expression(ExpressionTensor),
    ZScores(ZScoreGrid),
}

#[derive(Debug, Clone)]
pub struct Simulated {
    /// Latent truth; for DE settings masked cells are the unexpressed ones.
    pub truth: LatentGrid,
    pub observations: Observations,
}

impl Simulated {
    pub fn expression(&self) -> Option<&ExpressionTensor> {
        match &self.observations {
            Observations::Expression(e) => Some(e),
            Observations::ZScores(_) => None,
        }
    }

    pub fn zscores(&self) -> Option<&ZScoreGrid> {
        match &self.observations {
            Observations::ZScores(z) => Some(z),
            Observations::Expression(_) => None,
        }
    }
}

/// Draw run `run` of a setting. Deterministic in `(spec, run)`.
pub fn simulate(spec: &SimSpec, run: u64) -> Result<Simulated> {
    spec.validate()?;
    let shape = spec.shape()?;
    let mut r = rng::substream(spec.seed, &[run, 0x51]);
    let gibbs_seed = rng::derive_seed(spec.seed, &[run, 0x6b]);
    match spec.setting {
        Setting::Expr1 => {
            let truth = gibbs_rounds(&spec.phi, random_grid(shape, None, 0.5, &mut r), spec.gibbs_rounds, gibbs_seed)?;
            let data = expression_from(spec, &truth, &mut r)?;
            Ok(Simulated {
                truth,
                observations: Observations::Expression(data),
            })
        }
        Setting::Expr2 => {
            let truth = markov_flipped(spec, shape, &mut r)?;
            let data = expression_from(spec, &truth, &mut r)?;
            Ok(Simulated {
                truth,
                observations: Observations::Expression(data),
            })
        }
        Setting::De1 | Setting::De2 => {
            let mask = unexpressed_mask(spec, shape, &mut r);
            let start = random_grid(shape, Some(mask), spec.de_start, &mut r);
            let truth = gibbs_rounds(&spec.de_prior(), start, spec.gibbs_rounds, gibbs_seed)?;
            let z = if spec.setting == Setting::De1 {
                mixture_z(spec, &truth, &mut r)?
            } else {
                random_walk_z(spec, &truth, &mut r)?
            };
            Ok(Simulated {
                truth,
                observations: Observations::ZScores(z),
            })
        }
        Setting::De3 => {
            let states = churned_states(spec, shape, &mut r);
            let mask = unexpressed_mask(spec, shape, &mut r);
            let truth = LatentGrid::from_states(shape, states)?.with_mask(mask)?;
            let z = mixture_z(spec, &truth, &mut r)?;
            Ok(Simulated {
                truth,
                observations: Observations::ZScores(z),
            })
        }
    }
}

/// Sample a grid from a prior alone: `sweeps` Gibbs sweeps from `init`.
pub fn gibbs_rounds<P: Prior>(prior: &P, init: LatentGrid, sweeps: usize, seed: u64) -> Result<LatentGrid> {
    if sweeps == 0 {
        return Ok(init);
    }
    prior.validate(init.shape())?;
    let schedule = ChainSchedule::new(sweeps - 1, 1, seed)?;
    let mut out = run_chain(&init, &Target::prior_only(prior), &schedule)?;
    Ok(out.pop().expect("one kept sample"))
}

fn random_grid(shape: LatticeShape, mask: Option<Vec<bool>>, p: f64, r: &mut Rng) -> LatentGrid {
    let states = (0..shape.cells()).map(|_| r.random_bool(p) as u8).collect();
    let mut grid = LatentGrid::from_states(shape, states).expect("sized by shape");
    if let Some(mask) = mask {
        grid = grid.with_mask(mask).expect("sized by shape");
        for i in 0..shape.cells() {
            if grid.is_masked_index(i) {
                grid.states_mut()[i] = 0;
            }
        }
    }
    grid
}

fn expression_from(spec: &SimSpec, truth: &LatentGrid, r: &mut Rng) -> Result<ExpressionTensor> {
    let shape = *truth.shape();
    let m = spec.mixture;
    let low = Normal::new(m.mu1, m.sigma1).map_err(|e| Error::Config(e.to_string()))?;
    let high = Normal::new(m.mu2, m.sigma2).map_err(|e| Error::Config(e.to_string()))?;
    let s0 = m.sigma0_sq.sqrt();
    let mut values = Vec::with_capacity(shape.cells() * spec.replicates);
    for &x in truth.states() {
        let mu = if x == 1 { high.sample(r) } else { low.sample(r) };
        for _ in 0..spec.replicates {
            let e: f64 = StandardNormal.sample(r);
            values.push(mu + s0 * e);
        }
    }
    ExpressionTensor::new(shape, vec![spec.replicates; shape.regions * shape.times], values)
}

/// One two-state Markov chain per gene shared by all regions, then an exact
/// fraction of all cells complemented.
fn markov_flipped(spec: &SimSpec, shape: LatticeShape, r: &mut Rng) -> Result<LatentGrid> {
    let (nb, nt) = (shape.regions, shape.times);
    let mut states = vec![0u8; shape.cells()];
    for g in 0..shape.genes {
        let mut chain = Vec::with_capacity(nt);
        let mut x = r.random_bool(0.5) as u8;
        chain.push(x);
        for _ in 1..nt {
            if r.random_bool(spec.transition) {
                x = 1 - x;
            }
            chain.push(x);
        }
        for b in 0..nb {
            let start = (g * nb + b) * nt;
            states[start..start + nt].copy_from_slice(&chain);
        }
    }
    let k = (spec.perturbation * shape.cells() as f64).round() as usize;
    for i in sample(r, shape.cells(), k) {
        states[i] = 1 - states[i];
    }
    LatentGrid::from_states(shape, states)
}

/// Genes chosen with probability `unexpressed_genes`, masked in every region
/// over slots `0..=t` or `t..T` (equal odds, `t` uniform).
fn unexpressed_mask(spec: &SimSpec, shape: LatticeShape, r: &mut Rng) -> Vec<bool> {
    let (nb, nt) = (shape.regions, shape.times);
    let mut mask = vec![false; shape.cells()];
    let k = (spec.unexpressed_genes * shape.genes as f64).round() as usize;
    for g in sample(r, shape.genes, k) {
        let t = r.random_range(0..nt);
        let range = if r.random_bool(0.5) { 0..t + 1 } else { t..nt };
        for b in 0..nb {
            for s in range.clone() {
                mask[(g * nb + b) * nt + s] = true;
            }
        }
    }
    mask
}

fn mixture_z(spec: &SimSpec, truth: &LatentGrid, r: &mut Rng) -> Result<ZScoreGrid> {
    let shape = *truth.shape();
    let mask = truth.mask().map(|m| m.to_vec()).unwrap_or_else(|| vec![false; shape.cells()]);
    let mut z = vec![0.0; shape.cells()];
    for i in 0..shape.cells() {
        if mask[i] {
            continue;
        }
        let e: f64 = StandardNormal.sample(r);
        z[i] = if truth.states()[i] == 1 {
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * spec.de_shift + e
        } else {
            e
        };
    }
    let df = vec![2 * spec.replicates.max(2) - 2; shape.regions * shape.times];
    ZScoreGrid::from_parts(shape, z, mask, df)
}

/// Mean expression starts at 0 in the first period and moves by
/// `s * delta`, `delta ~ N(0, 1)`, at every DE slot; replicates add
/// `N(0, sigma0^2)` and each slot is scored by a two-sample t test.
fn random_walk_z(spec: &SimSpec, truth: &LatentGrid, r: &mut Rng) -> Result<ZScoreGrid> {
    let shape = *truth.shape();
    let (nb, nt) = (shape.regions, shape.times);
    let s0 = spec.mixture.sigma0_sq.sqrt();
    let n = spec.replicates;
    let mut mask = truth.mask().map(|m| m.to_vec()).unwrap_or_else(|| vec![false; shape.cells()]);
    let mut z = vec![0.0; shape.cells()];
    let mut prev = vec![0.0; n];
    let mut curr = vec![0.0; n];
    for g in 0..shape.genes {
        for b in 0..nb {
            let mut mu = 0.0;
            for v in prev.iter_mut() {
                *v = mu + s0 * Distribution::<f64>::sample(&StandardNormal, r);
            }
            for t in 0..nt {
                let i = shape.index(Cell::new(b, g, t));
                if truth.states()[i] == 1 && !mask[i] {
                    let delta: f64 = StandardNormal.sample(r);
                    mu += delta;
                }
                for v in curr.iter_mut() {
                    *v = mu + s0 * Distribution::<f64>::sample(&StandardNormal, r);
                }
                if !mask[i] {
                    match t_statistic(&prev, &curr) {
                        Ok((t, df)) => z[i] = t_to_z(t, df),
                        Err(e) => {
                            log::info!("simulated transition masked: {e}");
                            mask[i] = true;
                        }
                    }
                }
                std::mem::swap(&mut prev, &mut curr);
            }
        }
    }
    let df = vec![2 * n - 2; nb * nt];
    ZScoreGrid::from_parts(shape, z, mask, df)
}

fn exchange(states: &mut [u8], idx: &[usize], from: u8, k: usize, r: &mut impl RngCore) {
    let pool: Vec<usize> = idx.iter().copied().filter(|&i| states[i] == from).collect();
    let k = k.min(pool.len());
    for j in sample(r, pool.len(), k) {
        states[pool[j]] = 1 - from;
    }
}

/// The de-3 latent process: a per-gene neocortex pattern with constant DE
/// count per slot, a thinned copy for the other group, then a per-slot
/// exchange of DE and EE cells across the whole slot.
fn churned_states(spec: &SimSpec, shape: LatticeShape, r: &mut Rng) -> Vec<u8> {
    let (nb, ng, nt) = (shape.regions, shape.genes, shape.times);
    let genes: Vec<usize> = (0..ng).collect();
    // base[t][g]
    let mut base = vec![vec![0u8; ng]; nt];
    for g in 0..ng {
        base[0][g] = r.random_bool(spec.de3_start) as u8;
    }
    for t in 1..nt {
        let mut next = base[t - 1].clone();
        let de: Vec<usize> = genes.iter().copied().filter(|&g| next[g] == 1).collect();
        let ee: Vec<usize> = genes.iter().copied().filter(|&g| next[g] == 0).collect();
        let k = ((spec.de3_churn * de.len() as f64).round() as usize).min(ee.len());
        for j in sample(r, de.len(), k) {
            next[de[j]] = 0;
        }
        for j in sample(r, ee.len(), k) {
            next[ee[j]] = 1;
        }
        base[t] = next;
    }
    let mut other = base.clone();
    for row in other.iter_mut() {
        let de: Vec<usize> = genes.iter().copied().filter(|&g| row[g] == 1).collect();
        let k = (spec.de3_group_switch * de.len() as f64).round() as usize;
        for j in sample(r, de.len(), k) {
            row[de[j]] = 0;
        }
    }
    let mut states = vec![0u8; shape.cells()];
    for g in 0..ng {
        for b in 0..nb {
            let src = if b < spec.neocortex { &base } else { &other };
            for t in 0..nt {
                states[(g * nb + b) * nt + t] = src[t][g];
            }
        }
    }
    for t in 0..nt {
        let slot: Vec<usize> = (0..ng * nb).map(|gb| gb * nt + t).collect();
        let de = slot.iter().filter(|&&i| states[i] == 1).count();
        let k = (spec.perturbation * de as f64).round() as usize;
        let ee = slot.len() - de;
        let k = k.min(ee);
        let before: Vec<u8> = slot.iter().map(|&i| states[i]).collect();
        let de_idx: Vec<usize> = slot.iter().copied().zip(&before).filter(|(_, &x)| x == 1).map(|(i, _)| i).collect();
        let ee_idx: Vec<usize> = slot.iter().copied().zip(&before).filter(|(_, &x)| x == 0).map(|(i, _)| i).collect();
        exchange(&mut states, &de_idx, 1, k, r);
        exchange(&mut states, &ee_idx, 0, k, r);
    }
    states
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(setting: Setting) -> SimSpec {
        let mut s = SimSpec::new(setting);
        s.genes = 40;
        s.seed = 7;
        s
    }

    #[test]
    fn deterministic_given_seed() {
        for setting in [Setting::Expr1, Setting::Expr2, Setting::De1, Setting::De2, Setting::De3] {
            let s = small(setting);
            let a = simulate(&s, 3).unwrap();
            let b = simulate(&s, 3).unwrap();
            assert_eq!(a.truth, b.truth, "{setting}");
            let c = simulate(&s, 4).unwrap();
            assert_ne!(a.truth, c.truth, "{setting}");
            match (&a.observations, &b.observations) {
                (Observations::Expression(x), Observations::Expression(y)) => assert_eq!(x, y),
                (Observations::ZScores(x), Observations::ZScores(y)) => assert_eq!(x, y),
                _ => panic!("observation kinds differ"),
            }
        }
    }

    #[test]
    fn expression_shapes() {
        let s = small(Setting::Expr1);
        let sim = simulate(&s, 0).unwrap();
        let data = sim.expression().unwrap();
        assert_eq!(data.shape(), sim.truth.shape());
        assert_eq!(data.values().len(), 16 * 40 * 13 * 3);
        assert!(sim.truth.mask().is_none());
    }

    #[test]
    fn expr2_flips_an_exact_fraction() {
        let mut s = small(Setting::Expr2);
        s.perturbation = 0.5;
        let sim = simulate(&s, 1).unwrap();
        let shape = *sim.truth.shape();
        // agreement of every region with the majority pattern of its gene/time
        let mut agree = 0usize;
        for g in 0..shape.genes {
            for t in 0..shape.times {
                let ones: usize = (0..16).map(|b| sim.truth.get(Cell::new(b, g, t)) as usize).sum();
                agree += ones.max(16 - ones);
            }
        }
        let frac = agree as f64 / shape.cells() as f64;
        // pure chance gives about 0.6 for 16 fair coins; unflipped data gives 1
        assert!(frac < 0.7, "{frac}");
        s.perturbation = 0.0;
        let clean = simulate(&s, 1).unwrap();
        for g in 0..shape.genes {
            for t in 0..shape.times {
                let first = clean.truth.get(Cell::new(0, g, t));
                assert!((1..16).all(|b| clean.truth.get(Cell::new(b, g, t)) == first));
            }
        }
    }

    #[test]
    fn de1_masks_a_tenth_of_genes() {
        let mut s = SimSpec::new(Setting::De1);
        s.seed = 2;
        let sim = simulate(&s, 0).unwrap();
        let shape = *sim.truth.shape();
        let masked_genes = (0..shape.genes).filter(|&g| sim.truth.gene_mask(g).is_some_and(|m| m.iter().any(|&x| x))).count();
        assert_eq!(masked_genes, 10);
        let z = sim.zscores().unwrap();
        assert_eq!(z.mask(), sim.truth.mask().unwrap());
        for g in 0..shape.genes {
            if let Some(m) = sim.truth.gene_mask(g) {
                // masked slots form a prefix or suffix shared by every region
                for b in 1..shape.regions {
                    assert_eq!(&m[b * shape.times..(b + 1) * shape.times], &m[..shape.times]);
                }
                let row = &m[..shape.times];
                let prefix = row.iter().take_while(|&&x| x).count();
                let suffix = row.iter().rev().take_while(|&&x| x).count();
                let total = row.iter().filter(|&&x| x).count();
                assert!(total == 0 || total == prefix || total == suffix);
            }
        }
    }

    #[test]
    fn de3_keeps_per_slot_count() {
        let s = small(Setting::De3);
        let sim = simulate(&s, 5).unwrap();
        let shape = *sim.truth.shape();
        let counts: Vec<usize> = (0..shape.times)
            .map(|t| {
                (0..shape.genes)
                    .flat_map(|g| (0..shape.regions).map(move |b| Cell::new(b, g, t)))
                    .filter(|&c| sim.truth.get(c) == 1)
                    .count()
            })
            .collect();
        assert!(counts.iter().all(|&c| c == counts[0]), "{counts:?}");
        assert!(counts[0] > 0);
    }

    #[test]
    fn de2_z_scores_follow_truth() {
        let s = small(Setting::De2);
        let sim = simulate(&s, 2).unwrap();
        let z = sim.zscores().unwrap();
        let (mut de, mut ee) = (Vec::new(), Vec::new());
        for i in 0..z.z().len() {
            if !z.mask()[i] {
                if sim.truth.states()[i] == 1 {
                    de.push(z.z()[i].abs());
                } else {
                    ee.push(z.z()[i].abs());
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&de) > mean(&ee) + 0.5, "{} vs {}", mean(&de), mean(&ee));
    }

    #[test]
    fn validation() {
        let mut s = small(Setting::De1);
        s.periods = 1;
        assert!(simulate(&s, 0).is_err());
        let mut s = small(Setting::Expr2);
        s.perturbation = 1.5;
        assert!(s.validate().is_err());
        assert_eq!("de-3".parse::<Setting>().unwrap(), Setting::De3);
        assert!("de-4".parse::<Setting>().is_err());
    }
}
