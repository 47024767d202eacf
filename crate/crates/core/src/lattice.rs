//! The region x gene x time lattice and binary latent grids over it.
//!
//! Cells are stored gene-major, then region, then time, which is also the
//! raster order used by the Gibbs sampler. Each gene owns a contiguous block
//! of `regions * times` cells; no edge crosses a gene boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest region count supported. Spatial feature sums are packed into
/// signed bytes by the pseudolikelihood statistics.
pub const MAX_REGIONS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeShape {
    pub regions: usize,
    pub genes: usize,
    pub times: usize,
}

impl LatticeShape {
    pub fn new(regions: usize, genes: usize, times: usize) -> Result<Self> {
        if regions == 0 || genes == 0 {
            return Err(Error::Shape(format!(
                "need at least one region and one gene, got B={regions}, G={genes}"
            )));
        }
        if times < 2 {
            return Err(Error::Shape(format!("need at least two time slots, got T={times}")));
        }
        if regions > MAX_REGIONS {
            return Err(Error::Shape(format!(
                "at most {MAX_REGIONS} regions are supported, got {regions}"
            )));
        }
        Ok(LatticeShape { regions, genes, times })
    }

    pub fn cells(&self) -> usize {
        self.regions * self.genes * self.times
    }

    pub fn block_len(&self) -> usize {
        self.regions * self.times
    }

    #[inline]
    pub fn index(&self, cell: Cell) -> usize {
        (cell.gene * self.regions + cell.region) * self.times + cell.time
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let time = index % self.times;
        let rest = index / self.times;
        Cell {
            region: rest % self.regions,
            gene: rest / self.regions,
            time,
        }
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.region < self.regions && cell.gene < self.genes && cell.time < self.times
    }

    pub fn check(&self, cell: Cell) -> Result<()> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(Error::Index {
                region: cell.region,
                gene: cell.gene,
                time: cell.time,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub region: usize,
    pub gene: usize,
    pub time: usize,
}

impl Cell {
    pub fn new(region: usize, gene: usize, time: usize) -> Self {
        Cell { region, gene, time }
    }
}

/// An undirected edge between two cells of the same gene, stored as
/// within-block offsets `region * times + time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
}

/// Spatial edges (every region pair within a time slot) and temporal edges
/// (same region, adjacent slots) of one gene's graph.
#[derive(Debug, Clone)]
pub struct EdgeSets {
    pub spatial: Vec<Edge>,
    pub temporal: Vec<Edge>,
}

pub fn build_edges(shape: &LatticeShape) -> EdgeSets {
    let (nb, nt) = (shape.regions, shape.times);
    let mut spatial = Vec::with_capacity(nt * nb * nb.saturating_sub(1) / 2);
    for t in 0..nt {
        for b in 0..nb {
            for b2 in (b + 1)..nb {
                spatial.push(Edge {
                    a: b * nt + t,
                    b: b2 * nt + t,
                });
            }
        }
    }
    let mut temporal = Vec::with_capacity(nb * (nt - 1));
    for b in 0..nb {
        for t in 0..nt - 1 {
            temporal.push(Edge {
                a: b * nt + t,
                b: b * nt + t + 1,
            });
        }
    }
    EdgeSets { spatial, temporal }
}

/// Binary latent states over a lattice with an optional exclusion mask.
///
/// Masked cells keep a stored state (zero unless set otherwise) but take no
/// part in any node or edge term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGrid {
    shape: LatticeShape,
    states: Vec<u8>,
    mask: Option<Vec<bool>>,
}

impl LatentGrid {
    pub fn zeros(shape: LatticeShape) -> Self {
        LatentGrid {
            shape,
            states: vec![0; shape.cells()],
            mask: None,
        }
    }

    pub fn from_states(shape: LatticeShape, states: Vec<u8>) -> Result<Self> {
        if states.len() != shape.cells() {
            return Err(Error::Shape(format!(
                "expected {} states, got {}",
                shape.cells(),
                states.len()
            )));
        }
        if states.iter().any(|&s| s > 1) {
            return Err(Error::Shape("latent states must be 0 or 1".into()));
        }
        Ok(LatentGrid {
            shape,
            states,
            mask: None,
        })
    }

    /// `mask[i] == true` excludes cell `i` from the model.
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.shape.cells() {
            return Err(Error::Shape(format!(
                "expected {} mask entries, got {}",
                self.shape.cells(),
                mask.len()
            )));
        }
        self.mask = if mask.iter().any(|&m| m) { Some(mask) } else { None };
        Ok(self)
    }

    pub fn shape(&self) -> &LatticeShape {
        &self.shape
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [u8] {
        &mut self.states
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn is_masked_index(&self, index: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[index])
    }

    pub fn is_masked(&self, cell: Cell) -> bool {
        self.is_masked_index(self.shape.index(cell))
    }

    pub fn get(&self, cell: Cell) -> u8 {
        self.states[self.shape.index(cell)]
    }

    pub fn set(&mut self, cell: Cell, value: bool) {
        let i = self.shape.index(cell);
        self.states[i] = value as u8;
    }

    pub fn unmasked_count(&self) -> usize {
        match &self.mask {
            Some(m) => m.iter().filter(|&&x| !x).count(),
            None => self.states.len(),
        }
    }

    pub fn ones(&self) -> usize {
        self.states
            .iter()
            .enumerate()
            .filter(|&(i, &s)| s == 1 && !self.is_masked_index(i))
            .count()
    }

    pub fn gene_block(&self, gene: usize) -> &[u8] {
        let n = self.shape.block_len();
        &self.states[gene * n..(gene + 1) * n]
    }

    pub fn gene_mask(&self, gene: usize) -> Option<&[bool]> {
        let n = self.shape.block_len();
        self.mask.as_ref().map(|m| &m[gene * n..(gene + 1) * n])
    }

    /// Mutable state blocks, one per gene, together with the mask blocks.
    pub fn blocks_mut(&mut self) -> (Vec<&mut [u8]>, Option<Vec<&[bool]>>) {
        let n = self.shape.block_len();
        let blocks = self.states.chunks_mut(n).collect();
        let masks = self.mask.as_ref().map(|m| m.chunks(n).collect());
        (blocks, masks)
    }

    /// The grid with every state flipped; the mask is kept.
    pub fn complement(&self) -> LatentGrid {
        let mut out = self.clone();
        for s in out.states.iter_mut() {
            *s ^= 1;
        }
        out
    }

    pub fn same_layout(&self, other: &LatentGrid) -> bool {
        self.shape == other.shape && self.mask == other.mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(b: usize, g: usize, t: usize) -> LatticeShape {
        LatticeShape::new(b, g, t).unwrap()
    }

    #[test]
    fn edge_counts_at_full_size() {
        let e = build_edges(&shape(16, 1, 13));
        assert_eq!(e.spatial.len(), 1560);
        assert_eq!(e.temporal.len(), 192);
    }

    #[test]
    fn edge_counts_small() {
        let e = build_edges(&shape(2, 1, 2));
        assert_eq!((e.spatial.len(), e.temporal.len()), (2, 2));
        let e = build_edges(&shape(1, 1, 5));
        assert_eq!((e.spatial.len(), e.temporal.len()), (0, 4));
    }

    #[test]
    fn index_round_trip_follows_raster_order() {
        let s = shape(3, 4, 5);
        let mut expected = 0;
        for g in 0..4 {
            for b in 0..3 {
                for t in 0..5 {
                    let c = Cell::new(b, g, t);
                    assert_eq!(s.index(c), expected);
                    assert_eq!(s.cell_at(expected), c);
                    expected += 1;
                }
            }
        }
    }

    #[test]
    fn shape_validation() {
        assert!(LatticeShape::new(0, 1, 3).is_err());
        assert!(LatticeShape::new(2, 1, 1).is_err());
        assert!(shape(2, 1, 2).check(Cell::new(2, 0, 0)).is_err());
    }

    #[test]
    fn masked_cells_are_not_counted() {
        let s = shape(2, 1, 2);
        let g = LatentGrid::from_states(s, vec![1, 1, 0, 1])
            .unwrap()
            .with_mask(vec![false, true, false, false])
            .unwrap();
        assert_eq!(g.unmasked_count(), 3);
        assert_eq!(g.ones(), 2);
        assert!(g.is_masked(Cell::new(0, 0, 1)));
    }
}
