//! Pairwise binary Markov random field priors over a gene's region x time graph.
//!
//! Two priors share one structure. The expression prior has a node weight
//! `gamma`, one coupling for all spatial edges and one for temporal edges. The
//! differential-expression prior splits regions into neocortex and
//! non-neocortex groups with separate within- and between-group couplings.
//!
//! The conditional log-odds of a cell is linear in the parameters:
//! `logit = theta . features(cell)` with `features[0] == 1` and integer
//! neighbour sums `sum(2x - 1)` elsewhere. The pseudolikelihood machinery in
//! [`pseudo`] works entirely on those features.

pub mod pseudo;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{build_edges, Cell, LatentGrid, LatticeShape};

/// Largest parameter vector of any prior.
pub const MAX_DIM: usize = 5;

pub type Coefs = [f64; MAX_DIM];
pub type Features = [i32; MAX_DIM];

/// Logistic function, stable for large `|x|`.
#[inline]
pub fn conditional_prob(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Neighbour tallies for one time slot of one gene, excluding the target cell.
/// Index 0 is the neocortex (or only) group, index 1 the non-neocortex group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ColumnTally {
    pub ones: [i32; 2],
    pub present: [i32; 2],
}

impl ColumnTally {
    /// `sum(2x - 1)` over the unmasked cells of `group`.
    #[inline]
    pub fn spin_sum(&self, group: usize) -> i32 {
        2 * self.ones[group] - self.present[group]
    }
}

/// A binary MRF prior whose conditional logits are linear in its parameters.
pub trait Prior: Clone + Send + Sync {
    /// Number of free parameters, including the node weight at index 0.
    fn dim(&self) -> usize;

    fn coefs(&self) -> Coefs;

    fn with_coefs(&self, coefs: &Coefs) -> Self;

    fn param_names(&self) -> &'static [&'static str];

    /// Group index (0 or 1) of a region.
    fn group_of(&self, region: usize) -> usize;

    /// Feature vector given the column tally (target excluded) and the
    /// temporal spin sum of the target's existing, unmasked neighbours.
    fn features(&self, group: usize, tally: &ColumnTally, temporal: i32) -> Features;

    /// Coupling on the spatial edge between two regions.
    fn spatial_coupling(&self, region_a: usize, region_b: usize) -> f64;

    fn temporal_coupling(&self) -> f64;

    fn node_weight(&self) -> f64 {
        self.coefs()[0]
    }

    fn validate(&self, shape: &LatticeShape) -> Result<()>;

    #[inline]
    fn logit_from_features(&self, f: &Features) -> f64 {
        let c = self.coefs();
        (0..self.dim()).map(|i| c[i] * f[i] as f64).sum()
    }

    /// Conditional log-odds of state 1 for `cell` given all other cells.
    fn conditional_logit(&self, grid: &LatentGrid, cell: Cell) -> Result<f64> {
        let shape = grid.shape();
        shape.check(cell)?;
        if grid.is_masked(cell) {
            return Err(Error::MaskedCell {
                region: cell.region,
                gene: cell.gene,
                time: cell.time,
            });
        }
        let f = cell_features(self, grid, cell);
        Ok(self.logit_from_features(&f))
    }
}

/// Features of one cell computed by scanning its neighbourhood directly.
pub fn cell_features<P: Prior>(prior: &P, grid: &LatentGrid, cell: Cell) -> Features {
    let shape = grid.shape();
    let mut tally = ColumnTally::default();
    for b in 0..shape.regions {
        if b == cell.region {
            continue;
        }
        let other = Cell::new(b, cell.gene, cell.time);
        if grid.is_masked(other) {
            continue;
        }
        let g = prior.group_of(b);
        tally.present[g] += 1;
        tally.ones[g] += grid.get(other) as i32;
    }
    let mut temporal = 0;
    if cell.time > 0 {
        let prev = Cell::new(cell.region, cell.gene, cell.time - 1);
        if !grid.is_masked(prev) {
            temporal += 2 * grid.get(prev) as i32 - 1;
        }
    }
    if cell.time + 1 < shape.times {
        let next = Cell::new(cell.region, cell.gene, cell.time + 1);
        if !grid.is_masked(next) {
            temporal += 2 * grid.get(next) as i32 - 1;
        }
    }
    prior.features(prior.group_of(cell.region), &tally, temporal)
}

/// Unnormalised log-probability of one gene's block: node weight times the
/// number of ones plus each edge coupling whose endpoints agree. Masked
/// nodes and their edges are left out.
pub fn joint_log_potential<P: Prior>(prior: &P, grid: &LatentGrid, gene: usize) -> f64 {
    let shape = grid.shape();
    let block = grid.gene_block(gene);
    let mask = grid.gene_mask(gene);
    let live = |i: usize| mask.is_none_or(|m| !m[i]);
    let nt = shape.times;

    let mut total = 0.0;
    for (i, &s) in block.iter().enumerate() {
        if live(i) && s == 1 {
            total += prior.node_weight();
        }
    }
    let edges = build_edges(shape);
    for e in &edges.spatial {
        if live(e.a) && live(e.b) && block[e.a] == block[e.b] {
            total += prior.spatial_coupling(e.a / nt, e.b / nt);
        }
    }
    for e in &edges.temporal {
        if live(e.a) && live(e.b) && block[e.a] == block[e.b] {
            total += prior.temporal_coupling();
        }
    }
    total
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("parameters must be finite: {values:?}")))
    }
}

/// Expression prior: node weight `gamma`, spatial `beta_spatial`, temporal
/// `beta_temporal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrfParams {
    pub gamma: f64,
    pub beta_spatial: f64,
    pub beta_temporal: f64,
}

impl MrfParams {
    pub fn new(gamma: f64, beta_spatial: f64, beta_temporal: f64) -> Self {
        MrfParams {
            gamma,
            beta_spatial,
            beta_temporal,
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }
}

impl Prior for MrfParams {
    fn dim(&self) -> usize {
        3
    }

    fn coefs(&self) -> Coefs {
        [self.gamma, self.beta_spatial, self.beta_temporal, 0.0, 0.0]
    }

    fn with_coefs(&self, c: &Coefs) -> Self {
        MrfParams::new(c[0], c[1], c[2])
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["gamma", "beta_spatial", "beta_temporal"]
    }

    fn group_of(&self, _region: usize) -> usize {
        0
    }

    #[inline]
    fn features(&self, _group: usize, tally: &ColumnTally, temporal: i32) -> Features {
        [1, tally.spin_sum(0), temporal, 0, 0]
    }

    fn spatial_coupling(&self, _a: usize, _b: usize) -> f64 {
        self.beta_spatial
    }

    fn temporal_coupling(&self) -> f64 {
        self.beta_temporal
    }

    fn validate(&self, _shape: &LatticeShape) -> Result<()> {
        check_finite(&self.coefs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionGroup {
    Neocortex,
    NonNeocortex,
}

impl RegionGroup {
    pub fn index(self) -> usize {
        match self {
            RegionGroup::Neocortex => 0,
            RegionGroup::NonNeocortex => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "neocortex" | "c" => Some(RegionGroup::Neocortex),
            "non-neocortex" | "nonneocortex" | "n" => Some(RegionGroup::NonNeocortex),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegionGroup::Neocortex => "neocortex",
            RegionGroup::NonNeocortex => "non-neocortex",
        }
    }

    /// The 11 + 5 split used for the 16 sampled regions: first `neocortex`
    /// regions are neocortex, the rest are not.
    pub fn split(regions: usize, neocortex: usize) -> Vec<RegionGroup> {
        (0..regions)
            .map(|b| {
                if b < neocortex {
                    RegionGroup::Neocortex
                } else {
                    RegionGroup::NonNeocortex
                }
            })
            .collect()
    }
}

/// Differential-expression prior with group-specific spatial couplings.
/// The cross-group coupling is a single field, so it is symmetric by
/// construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeMrfParams {
    pub gamma_de: f64,
    pub beta_cc: f64,
    pub beta_nn: f64,
    pub beta_cn: f64,
    pub beta_t: f64,
    pub groups: Vec<RegionGroup>,
}

impl DeMrfParams {
    pub fn new(
        gamma_de: f64,
        beta_cc: f64,
        beta_nn: f64,
        beta_cn: f64,
        beta_t: f64,
        groups: Vec<RegionGroup>,
    ) -> Self {
        DeMrfParams {
            gamma_de,
            beta_cc,
            beta_nn,
            beta_cn,
            beta_t,
            groups,
        }
    }

    pub fn zero(groups: Vec<RegionGroup>) -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0, groups)
    }
}

impl Prior for DeMrfParams {
    fn dim(&self) -> usize {
        5
    }

    fn coefs(&self) -> Coefs {
        [self.gamma_de, self.beta_cc, self.beta_nn, self.beta_cn, self.beta_t]
    }

    fn with_coefs(&self, c: &Coefs) -> Self {
        DeMrfParams::new(c[0], c[1], c[2], c[3], c[4], self.groups.clone())
    }

    fn param_names(&self) -> &'static [&'static str] {
        &["gamma_de", "beta_cc", "beta_nn", "beta_cn", "beta_t"]
    }

    #[inline]
    fn group_of(&self, region: usize) -> usize {
        self.groups[region].index()
    }

    #[inline]
    fn features(&self, group: usize, tally: &ColumnTally, temporal: i32) -> Features {
        let c = tally.spin_sum(0);
        let n = tally.spin_sum(1);
        if group == 0 {
            [1, c, 0, n, temporal]
        } else {
            [1, 0, n, c, temporal]
        }
    }

    fn spatial_coupling(&self, a: usize, b: usize) -> f64 {
        match (self.groups[a], self.groups[b]) {
            (RegionGroup::Neocortex, RegionGroup::Neocortex) => self.beta_cc,
            (RegionGroup::NonNeocortex, RegionGroup::NonNeocortex) => self.beta_nn,
            _ => self.beta_cn,
        }
    }

    fn temporal_coupling(&self) -> f64 {
        self.beta_t
    }

    fn validate(&self, shape: &LatticeShape) -> Result<()> {
        if self.groups.len() != shape.regions {
            return Err(Error::Config(format!(
                "{} region group labels for {} regions",
                self.groups.len(),
                shape.regions
            )));
        }
        check_finite(&self.coefs())
    }
}
