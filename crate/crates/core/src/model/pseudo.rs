//! Log-pseudolikelihood of a latent grid and its sufficient statistics.
//!
//! Every cell's conditional logit is `theta . f` for an integer feature vector
//! `f`, so the pseudolikelihood of any set of grids is determined by the
//! weighted histogram of `(state, f)` pairs. [`PlStats`] holds that histogram;
//! the Monte Carlo M-step only ever touches it.

use rustc_hash::FxHashMap;

use super::{cell_features, conditional_prob, log1p_exp, ColumnTally, Coefs, Features, Prior, MAX_DIM};
use crate::lattice::{LatentGrid, LatticeShape};

/// Value and gradient of the log-pseudolikelihood, computed cell by cell.
pub fn log_pseudolikelihood<P: Prior>(prior: &P, grid: &LatentGrid) -> (f64, Vec<f64>) {
    let dim = prior.dim();
    let mut value = 0.0;
    let mut grad = vec![0.0; dim];
    for i in 0..grid.shape().cells() {
        if grid.is_masked_index(i) {
            continue;
        }
        let cell = grid.shape().cell_at(i);
        let f = cell_features(prior, grid, cell);
        let eta = prior.logit_from_features(&f);
        let x = grid.states()[i] as f64;
        value += x * eta - log1p_exp(eta);
        let resid = x - conditional_prob(eta);
        for k in 0..dim {
            grad[k] += resid * f[k] as f64;
        }
    }
    (value, grad)
}

/// Visit every unmasked cell of one gene block with its state and features.
///
/// Column tallies are built once per time slot, so the cost is linear in the
/// block size.
pub fn for_each_cell<P: Prior>(
    prior: &P,
    shape: &LatticeShape,
    block: &[u8],
    mask: Option<&[bool]>,
    mut visit: impl FnMut(usize, u8, &Features),
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
    for b in 0..nb {
        let g = prior.group_of(b);
        for t in 0..nt {
            let i = b * nt + t;
            if !live(i) {
                continue;
            }
            let x = block[i];
            let mut tally = tallies[t];
            tally.present[g] -= 1;
            tally.ones[g] -= x as i32;
            let mut temporal = 0;
            if t > 0 && live(i - 1) {
                temporal += 2 * block[i - 1] as i32 - 1;
            }
            if t + 1 < nt && live(i + 1) {
                temporal += 2 * block[i + 1] as i32 - 1;
            }
            let f = prior.features(g, &tally, temporal);
            visit(i, x, &f);
        }
    }
}

#[inline]
fn pack(x: u8, f: &Features) -> u64 {
    let mut key = x as u64;
    for (k, &v) in f.iter().enumerate().skip(1) {
        key |= ((v + 128) as u64 & 0xff) << (8 * k);
    }
    key
}

#[inline]
fn unpack(key: u64) -> (f64, Features) {
    let mut f = [0i32; MAX_DIM];
    f[0] = 1;
    for (k, slot) in f.iter_mut().enumerate().skip(1) {
        *slot = ((key >> (8 * k)) & 0xff) as i32 - 128;
    }
    ((key & 1) as f64, f)
}

/// Pseudolikelihood value, gradient and Hessian at one parameter point.
#[derive(Debug, Clone)]
pub struct PlEval {
    pub value: f64,
    pub gradient: Coefs,
    pub hessian: [[f64; MAX_DIM]; MAX_DIM],
}

/// Weighted histogram of `(state, features)` over a collection of grids.
#[derive(Debug, Clone, Default)]
pub struct PlStats {
    entries: FxHashMap<u64, f64>,
    weight: f64,
}

impl PlStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_grid<P: Prior>(prior: &P, grid: &LatentGrid) -> Self {
        let mut s = Self::new();
        s.add_grid(prior, grid, 1.0);
        s
    }

    pub fn add_grid<P: Prior>(&mut self, prior: &P, grid: &LatentGrid, weight: f64) {
        for g in 0..grid.shape().genes {
            self.add_block(prior, grid.shape(), grid.gene_block(g), grid.gene_mask(g), weight);
        }
    }

    pub fn add_block<P: Prior>(
        &mut self,
        prior: &P,
        shape: &LatticeShape,
        block: &[u8],
        mask: Option<&[bool]>,
        weight: f64,
    ) {
        for_each_cell(prior, shape, block, mask, |_, x, f| {
            *self.entries.entry(pack(x, f)).or_insert(0.0) += weight;
        });
        self.weight += weight;
    }

    pub fn merge(&mut self, other: &PlStats) {
        for (&k, &w) in &other.entries {
            *self.entries.entry(k).or_insert(0.0) += w;
        }
        self.weight += other.weight;
    }

    /// Multiply every count by `factor` (e.g. `1/m` to average over samples).
    pub fn scale(&mut self, factor: f64) {
        for w in self.entries.values_mut() {
            *w *= factor;
        }
        self.weight *= factor;
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    /// Total weight of the cells recorded.
    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn value(&self, dim: usize, coefs: &Coefs) -> f64 {
        self.entries
            .iter()
            .map(|(&key, &w)| {
                let (x, f) = unpack(key);
                let eta: f64 = (0..dim).map(|k| coefs[k] * f[k] as f64).sum();
                w * (x * eta - log1p_exp(eta))
            })
            .sum()
    }

    pub fn evaluate(&self, dim: usize, coefs: &Coefs) -> PlEval {
        let mut out = PlEval {
            value: 0.0,
            gradient: [0.0; MAX_DIM],
            hessian: [[0.0; MAX_DIM]; MAX_DIM],
        };
        for (&key, &w) in &self.entries {
            let (x, f) = unpack(key);
            let eta: f64 = (0..dim).map(|k| coefs[k] * f[k] as f64).sum();
            let p = conditional_prob(eta);
            out.value += w * (x * eta - log1p_exp(eta));
            let r = w * (x - p);
            let c = w * p * (1.0 - p);
            for i in 0..dim {
                out.gradient[i] += r * f[i] as f64;
                for j in 0..=i {
                    out.hessian[i][j] -= c * (f[i] * f[j]) as f64;
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                out.hessian[j][i] = out.hessian[i][j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeShape;
    use crate::model::{DeMrfParams, MrfParams, RegionGroup};
    use rand::{Rng, SeedableRng};

    fn random_grid(b: usize, g: usize, t: usize, seed: u64, masked: bool) -> LatentGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shape = LatticeShape::new(b, g, t).unwrap();
        let states = (0..shape.cells()).map(|_| rng.random_bool(0.5) as u8).collect();
        let grid = LatentGrid::from_states(shape, states).unwrap();
        if masked {
            let mask = (0..shape.cells()).map(|_| rng.random_bool(0.2)).collect();
            grid.with_mask(mask).unwrap()
        } else {
            grid
        }
    }

    #[test]
    fn pack_round_trip() {
        let f = [1, -15, 7, 0, -2];
        let (x, back) = unpack(pack(1, &f));
        assert_eq!(x, 1.0);
        assert_eq!(back, f);
    }

    #[test]
    fn zero_couplings_reduce_to_bernoulli() {
        let grid = random_grid(4, 3, 5, 11, false);
        let gamma: f64 = 0.4;
        let p = MrfParams::new(gamma, 0.0, 0.0);
        let (value, _) = log_pseudolikelihood(&p, &grid);
        let n = grid.unmasked_count() as f64;
        let xbar = grid.ones() as f64 / n;
        let s = conditional_prob(gamma);
        let expected = n * (xbar * s.ln() + (1.0 - xbar) * (1.0 - s).ln());
        assert!((value - expected).abs() < 1e-9);
    }

    #[test]
    fn histogram_matches_direct_route() {
        for (seed, masked) in [(1, false), (2, true)] {
            let grid = random_grid(5, 4, 6, seed, masked);
            let p = DeMrfParams::new(-0.3, 0.4, -0.2, 0.1, 0.7, RegionGroup::split(5, 3));
            let (value, grad) = log_pseudolikelihood(&p, &grid);
            let stats = PlStats::from_grid(&p, &grid);
            let eval = stats.evaluate(5, &p.coefs());
            assert!((eval.value - value).abs() < 1e-9);
            for k in 0..5 {
                assert!((eval.gradient[k] - grad[k]).abs() < 1e-9);
            }
            assert!((stats.total() - grid.unmasked_count() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn gene_relabeling_leaves_value_unchanged() {
        let grid = random_grid(3, 4, 4, 5, false);
        let shape = *grid.shape();
        let n = shape.block_len();
        let mut permuted = Vec::with_capacity(shape.cells());
        for g in [2usize, 0, 3, 1] {
            permuted.extend_from_slice(&grid.states()[g * n..(g + 1) * n]);
        }
        let other = LatentGrid::from_states(shape, permuted).unwrap();
        let p = MrfParams::new(0.1, 0.3, -0.4);
        let (a, _) = log_pseudolikelihood(&p, &grid);
        let (b, _) = log_pseudolikelihood(&p, &other);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn hessian_is_negative_semidefinite_diagonal() {
        let grid = random_grid(4, 2, 5, 9, false);
        let p = MrfParams::new(0.2, 0.1, 0.5);
        let eval = PlStats::from_grid(&p, &grid).evaluate(3, &p.coefs());
        for i in 0..3 {
            assert!(eval.hessian[i][i] <= 0.0);
        }
    }
}
