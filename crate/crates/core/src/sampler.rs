//! Gibbs sampling of latent grids.
//!
//! A sweep visits every unmasked cell once in raster order (region-major
//! within a gene, then time) and redraws it from
//! `p(x = 1 | rest) = logistic(prior logit + evidence log-odds)`.
//! Genes share no edges, so each gene's chain runs on its own random
//! substream and chains for different genes run in parallel; the result is
//! identical to a serial gene-major sweep.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Cell, LatentGrid, LatticeShape};
use crate::model::{conditional_prob, ColumnTally, Prior};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSchedule {
    pub burn_in: usize,
    pub kept: usize,
    pub seed: u64,
    #[serde(default)]
    pub order: SweepOrder,
}

impl ChainSchedule {
    pub fn new(burn_in: usize, kept: usize, seed: u64) -> Result<Self> {
        if kept == 0 {
            return Err(Error::Config("a chain must keep at least one sample".into()));
        }
        Ok(ChainSchedule {
            burn_in,
            kept,
            seed,
            order: SweepOrder::Forward,
        })
    }

    pub fn with_order(mut self, order: SweepOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn sweeps(&self) -> usize {
        self.burn_in + self.kept
    }
}

/// Prior plus per-cell evidence log-odds `log f(data | 1) - log f(data | 0)`.
/// Evidence may be infinite; an empty evidence slice means prior only.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a, P: Prior> {
    pub prior: &'a P,
    pub log_odds: &'a [f64],
}

impl<'a, P: Prior> Target<'a, P> {
    pub fn new(prior: &'a P, log_odds: &'a [f64]) -> Self {
        Target { prior, log_odds }
    }

    pub fn prior_only(prior: &'a P) -> Self {
        Target { prior, log_odds: &[] }
    }

    fn check(&self, grid: &LatentGrid) -> Result<()> {
        if !self.log_odds.is_empty() && self.log_odds.len() != grid.shape().cells() {
            return Err(Error::Shape(format!(
                "{} evidence values for {} cells",
                self.log_odds.len(),
                grid.shape().cells()
            )));
        }
        self.prior.validate(grid.shape())
    }
}

/// One sweep over a single gene block.
pub fn sweep_block<P: Prior>(
    prior: &P,
    shape: &LatticeShape,
    block: &mut [u8],
    mask: Option<&[bool]>,
    log_odds: Option<&[f64]>,
    order: SweepOrder,
    rng: &mut Rng,
) {
    let (nb, nt) = (shape.regions, shape.times);
    let live = |i: usize| mask.is_none_or(|m| !m[i]);
    let mut tallies = vec![ColumnTally::default(); nt];
    for b in 0..nb {
        let g = prior.group_of(b);
        for t in 0..nt {
            let i = b * nt + t;
            if live(i) {
                tallies[t].present[g] += 1;
                tallies[t].ones[g] += block[i] as i32;
            }
        }
    }
    let n = nb * nt;
    for step in 0..n {
        let i = match order {
            SweepOrder::Forward => step,
            SweepOrder::Reverse => n - 1 - step,
        };
        if !live(i) {
            continue;
        }
        let (b, t) = (i / nt, i % nt);
        let g = prior.group_of(b);
        let x = block[i] as i32;
        let mut tally = tallies[t];
        tally.present[g] -= 1;
        tally.ones[g] -= x;
        let mut temporal = 0;
        if t > 0 && live(i - 1) {
            temporal += 2 * block[i - 1] as i32 - 1;
        }
        if t + 1 < nt && live(i + 1) {
            temporal += 2 * block[i + 1] as i32 - 1;
        }
        let f = prior.features(g, &tally, temporal);
        let mut eta = prior.logit_from_features(&f);
        if let Some(lo) = log_odds {
            eta += lo[i];
        }
        let p = conditional_prob(eta);
        let new = (rng.random::<f64>() < p) as i32;
        if new != x {
            tallies[t].ones[g] += new - x;
            block[i] = new as u8;
        }
    }
}

/// One sweep over every gene, gene `g` drawing from `rngs[g]`.
pub fn gibbs_sweep<P: Prior>(
    grid: &mut LatentGrid,
    target: &Target<'_, P>,
    rngs: &mut [Rng],
    order: SweepOrder,
) -> Result<()> {
    target.check(grid)?;
    let shape = *grid.shape();
    if rngs.len() != shape.genes {
        return Err(Error::Config(format!(
            "{} random streams for {} genes",
            rngs.len(),
            shape.genes
        )));
    }
    let n = shape.block_len();
    let (blocks, masks) = grid.blocks_mut();
    blocks
        .into_par_iter()
        .zip(rngs.par_iter_mut())
        .enumerate()
        .for_each(|(g, (block, rng))| {
            let lo = (!target.log_odds.is_empty()).then(|| &target.log_odds[g * n..(g + 1) * n]);
            let mask = masks.as_ref().map(|m| m[g]);
            sweep_block(target.prior, &shape, block, mask, lo, order, rng);
        });
    Ok(())
}

/// Run each gene's chain to completion, feeding every kept block to
/// `observe`. Returns the final grid and the per-gene sinks.
pub fn run_chain_by_gene<P, S, M, O>(
    init: &LatentGrid,
    target: &Target<'_, P>,
    schedule: &ChainSchedule,
    make_sink: M,
    observe: O,
) -> Result<(LatentGrid, Vec<S>)>
where
    P: Prior,
    S: Send,
    M: Fn(usize) -> S + Sync,
    O: Fn(&mut S, usize, &[u8]) + Sync,
{
    if schedule.kept == 0 {
        return Err(Error::Config("a chain must keep at least one sample".into()));
    }
    target.check(init)?;
    let mut grid = init.clone();
    let shape = *grid.shape();
    let n = shape.block_len();
    let (blocks, masks) = grid.blocks_mut();
    let sinks: Vec<S> = blocks
        .into_par_iter()
        .enumerate()
        .map(|(g, block)| {
            let mut rng = rng::substream(schedule.seed, &[g as u64]);
            let lo = (!target.log_odds.is_empty()).then(|| &target.log_odds[g * n..(g + 1) * n]);
            let mask = masks.as_ref().map(|m| m[g]);
            let mut sink = make_sink(g);
            for _ in 0..schedule.burn_in {
                sweep_block(target.prior, &shape, block, mask, lo, schedule.order, &mut rng);
            }
            for _ in 0..schedule.kept {
                sweep_block(target.prior, &shape, block, mask, lo, schedule.order, &mut rng);
                observe(&mut sink, g, block);
            }
            sink
        })
        .collect();
    Ok((grid, sinks))
}

/// Discard `burn_in` sweeps and return the next `kept` consecutive grids.
pub fn run_chain<P: Prior>(
    init: &LatentGrid,
    target: &Target<'_, P>,
    schedule: &ChainSchedule,
) -> Result<Vec<LatentGrid>> {
    let shape = *init.shape();
    let n = shape.block_len();
    let (_, per_gene) = run_chain_by_gene(
        init,
        target,
        schedule,
        |_| Vec::<u8>::with_capacity(schedule.kept * n),
        |buf, _, block| buf.extend_from_slice(block),
    )?;
    let mut out = Vec::with_capacity(schedule.kept);
    for k in 0..schedule.kept {
        let mut grid = init.clone();
        let states = grid.states_mut();
        for (g, buf) in per_gene.iter().enumerate() {
            states[g * n..(g + 1) * n].copy_from_slice(&buf[k * n..(k + 1) * n]);
        }
        out.push(grid);
    }
    Ok(out)
}

/// Per-cell posterior probability of state 1, estimated by a chain with
/// fixed parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    shape: LatticeShape,
    prob_one: Vec<f64>,
    mask: Option<Vec<bool>>,
    samples: usize,
}

impl PosteriorGrid {
    pub fn new(shape: LatticeShape, prob_one: Vec<f64>, mask: Option<Vec<bool>>, samples: usize) -> Result<Self> {
        if prob_one.len() != shape.cells() || mask.as_ref().is_some_and(|m| m.len() != shape.cells()) {
            return Err(Error::Shape("posterior grid size does not match its shape".into()));
        }
        if prob_one.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("posterior probabilities must lie in [0, 1]".into()));
        }
        Ok(PosteriorGrid {
            shape,
            prob_one,
            mask,
            samples,
        })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    fn masked(&self, i: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[i])
    }

    /// Probability of state 1, or `None` for masked cells.
    pub fn prob_one(&self, cell: Cell) -> Option<f64> {
        self.prob_one_at(self.shape.index(cell))
    }

    pub fn prob_one_at(&self, i: usize) -> Option<f64> {
        (!self.masked(i)).then(|| self.prob_one[i])
    }

    /// Probability of state 0 (the posterior local fdr in the DE model).
    pub fn null_prob_at(&self, i: usize) -> Option<f64> {
        self.prob_one_at(i).map(|p| 1.0 - p)
    }

    pub fn raw(&self) -> &[f64] {
        &self.prob_one
    }

    /// Hard calls `prob_one >= cutoff`; masked cells are set to 0.
    pub fn classify(&self, cutoff: f64) -> LatentGrid {
        let states = (0..self.shape.cells())
            .map(|i| (!self.masked(i) && self.prob_one[i] >= cutoff) as u8)
            .collect();
        let grid = LatentGrid::from_states(self.shape, states).expect("shape checked at construction");
        match &self.mask {
            Some(m) => grid.with_mask(m.clone()).expect("shape checked at construction"),
            None => grid,
        }
    }

    /// `(index, null probability)` for every unmasked cell.
    pub fn null_probs(&self) -> Vec<(usize, f64)> {
        (0..self.shape.cells())
            .filter_map(|i| self.null_prob_at(i).map(|q| (i, q)))
            .collect()
    }
}

/// Mean of the sampled indicators over the kept sweeps.
pub fn posterior_marginals<P: Prior>(
    init: &LatentGrid,
    target: &Target<'_, P>,
    schedule: &ChainSchedule,
) -> Result<PosteriorGrid> {
    let shape = *init.shape();
    let n = shape.block_len();
    let (_, counts) = run_chain_by_gene(
        init,
        target,
        schedule,
        |_| vec![0u32; n],
        |c, _, block| {
            for (acc, &s) in c.iter_mut().zip(block) {
                *acc += s as u32;
            }
        },
    )?;
    let kept = schedule.kept as f64;
    let prob = counts.into_iter().flatten().map(|c| c as f64 / kept).collect();
    PosteriorGrid::new(shape, prob, init.mask().map(|m| m.to_vec()), schedule.kept)
}
