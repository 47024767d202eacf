//! Differential-expression evidence: z-scores for adjacent-period
//! transitions, the local-fdr mixture, posterior FDR control and gene-set
//! enrichment.

mod enrich;
mod fdr;
mod locfdr;
mod spline;
mod tstat;

pub use enrich::{gene_set_enrichment, Enrichment};
pub use fdr::{fdr_threshold, FdrSelection};
pub use locfdr::{eb_posterior, fit_local_fdr, DensityPoint, LocalFdrModel, LINDSEY_BINS, SPLINE_DF};
pub use spline::NaturalSplineBasis;
pub use tstat::{t_statistic, t_to_z, Z_CLAMP};

use serde::{Deserialize, Serialize};

use crate::emission::ExpressionTensor;
use crate::error::{Error, Result};
use crate::lattice::{Cell, LatentGrid, LatticeShape};

/// Why a transition carries no z-score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskReason {
    Unexpressed,
    /// Too few replicates or zero pooled variance.
    Degenerate,
}

/// z-scores on the `regions x genes x (periods - 1)` transition lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreGrid {
    shape: LatticeShape,
    z: Vec<f64>,
    mask: Vec<bool>,
    /// Degrees of freedom per `(region, transition)`, at `b * (T - 1) + t`.
    df: Vec<usize>,
}

impl ZScoreGrid {
    /// Assemble a grid from raw parts; masked cells ignore their `z`.
    pub fn from_parts(shape: LatticeShape, z: Vec<f64>, mask: Vec<bool>, df: Vec<usize>) -> Result<Self> {
        if z.len() != shape.cells() || mask.len() != shape.cells() {
            return Err(Error::Shape(format!(
                "z grid needs {} cells, got {} values and {} mask entries",
                shape.cells(),
                z.len(),
                mask.len()
            )));
        }
        if df.len() != shape.regions * shape.times {
            return Err(Error::Shape(format!(
                "expected {} degree-of-freedom entries, got {}",
                shape.regions * shape.times,
                df.len()
            )));
        }
        if let Some(i) = (0..z.len()).find(|&i| !mask[i] && !z[i].is_finite()) {
            let c = shape.cell_at(i);
            return Err(Error::NonFinite { params: vec![z[i], c.region as f64, c.gene as f64, c.time as f64] });
        }
        Ok(ZScoreGrid { shape, z, mask, df })
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn df(&self, region: usize, transition: usize) -> usize {
        self.df[region * self.shape.times + transition]
    }

    pub fn get(&self, cell: Cell) -> Option<f64> {
        let i = self.shape.index(cell);
        (!self.mask[i]).then_some(self.z[i])
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|m| !**m).count()
    }

    /// Unmasked z-scores in lattice order.
    pub fn pooled(&self) -> Vec<f64> {
        self.z.iter().zip(&self.mask).filter(|(_, m)| !**m).map(|(z, _)| *z).collect()
    }

    /// An all-zero latent grid carrying this grid's mask.
    pub fn latent_template(&self) -> LatentGrid {
        LatentGrid::zeros(self.shape)
            .with_mask(self.mask.clone())
            .expect("mask length matches shape")
    }
}

/// Compute `z` for every transition whose two periods are both expressed.
///
/// Returns the grid and the reasons for every masked cell, by lattice index.
pub fn build_zscore_grid(data: &ExpressionTensor, expressed: &LatentGrid) -> Result<(ZScoreGrid, Vec<(usize, MaskReason)>)> {
    let ds = *data.shape();
    if expressed.shape() != &ds {
        return Err(Error::Shape(format!(
            "expression calls have shape {:?}, data has {:?}",
            expressed.shape(),
            ds
        )));
    }
    let shape = LatticeShape::new(ds.regions, ds.genes, ds.times - 1)?;
    let mut df = Vec::with_capacity(ds.regions * shape.times);
    for b in 0..ds.regions {
        for t in 0..shape.times {
            let n = data.replicates(b, t) + data.replicates(b, t + 1);
            df.push(n.saturating_sub(2));
        }
    }
    let mut z = vec![0.0; shape.cells()];
    let mut mask = vec![true; shape.cells()];
    let mut reasons = Vec::new();
    for i in 0..shape.cells() {
        let c = shape.cell_at(i);
        let prev = Cell::new(c.region, c.gene, c.time);
        let next = Cell::new(c.region, c.gene, c.time + 1);
        let on = |cell: Cell| expressed.get(cell) == 1 && !expressed.is_masked(cell);
        if !(on(prev) && on(next)) {
            reasons.push((i, MaskReason::Unexpressed));
            continue;
        }
        match t_statistic(data.cell(prev), data.cell(next)) {
            Ok((t, d)) => {
                z[i] = t_to_z(t, d);
                mask[i] = false;
            }
            Err(e) => {
                log::info!(
                    "transition masked at region {} gene {} periods {}->{}: {e}",
                    c.region,
                    c.gene,
                    c.time,
                    c.time + 1
                );
                reasons.push((i, MaskReason::Degenerate));
            }
        }
    }
    Ok((ZScoreGrid::from_parts(shape, z, mask, df)?, reasons))
}
