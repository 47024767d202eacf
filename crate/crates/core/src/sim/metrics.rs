//! Misclassification, ROC curves and AUC against known truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatentGrid;
use crate::model::RegionGroup;

/// Specificity grid used when averaging curves across runs.
pub const ROC_GRID_POINTS: usize = 101;

/// Fraction of unmasked cells where `estimate` and `truth` differ.
pub fn misclassification_rate(estimate: &LatentGrid, truth: &LatentGrid) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "estimate {:?} vs truth {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    if estimate.mask() != truth.mask() {
        return Err(Error::Shape("estimate and truth have different masks".into()));
    }
    let n = truth.unmasked_count();
    if n == 0 {
        return Err(Error::DegenerateData("no unmasked cells to compare".into()));
    }
    let wrong = (0..truth.shape().cells())
        .filter(|&i| !truth.is_masked_index(i) && estimate.states()[i] != truth.states()[i])
        .count();
    Ok(wrong as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Cells with null probability `<= threshold` are called positive.
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From the strictest threshold (nothing called) to the loosest.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Sensitivity at a given specificity, interpolating linearly between
    /// neighbouring points.
    pub fn sensitivity_at(&self, specificity: f64) -> f64 {
        let p = &self.points;
        // specificity decreases along the curve
        let k = p.partition_point(|q| q.specificity > specificity);
        if k == 0 {
            return p[0].sensitivity;
        }
        if k == p.len() {
            return p[k - 1].sensitivity;
        }
        let (a, b) = (&p[k - 1], &p[k]);
        if a.specificity == b.specificity {
            return b.sensitivity;
        }
        let w = (a.specificity - specificity) / (a.specificity - b.specificity);
        a.sensitivity + w * (b.sensitivity - a.sensitivity)
    }
}

fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[0].specificity - w[1].specificity) * 0.5 * (w[0].sensitivity + w[1].sensitivity))
        .sum()
}

/// ROC curve of null probabilities against truth over the unmasked cells
/// of `regions` (all regions when `None`).
pub fn roc_curve(null_prob: &[f64], truth: &LatentGrid, regions: Option<&[usize]>) -> Result<RocCurve> {
    let shape = *truth.shape();
    if null_prob.len() != shape.cells() {
        return Err(Error::Shape(format!(
            "{} posterior values for {} cells",
            null_prob.len(),
            shape.cells()
        )));
    }
    let mut keep = vec![regions.is_none(); shape.regions];
    if let Some(rs) = regions {
        for &b in rs {
            if b >= shape.regions {
                return Err(Error::Config(format!("region {b} out of range")));
            }
            keep[b] = true;
        }
    }
    let mut scored: Vec<(f64, bool)> = (0..shape.cells())
        .filter(|&i| !truth.is_masked_index(i) && keep[shape.cell_at(i).region])
        .map(|i| (null_prob[i], truth.states()[i] == 1))
        .collect();
    if let Some((v, _)) = scored.iter().find(|(v, _)| !v.is_finite()) {
        return Err(Error::NonFinite { params: vec![*v] });
    }
    let pos = scored.iter().filter(|(_, x)| *x).count();
    let neg = scored.len() - pos;
    if pos == 0 {
        return Err(Error::UndefinedRoc("no positive cells in truth"));
    }
    if neg == 0 {
        return Err(Error::UndefinedRoc("no negative cells in truth"));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = vec![RocPoint {
        threshold: f64::NEG_INFINITY,
        sensitivity: 0.0,
        specificity: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let v = scored[i].0;
        while i < scored.len() && scored[i].0 == v {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: v,
            sensitivity: tp as f64 / pos as f64,
            specificity: 1.0 - fp as f64 / neg as f64,
        });
    }
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}

/// One curve per region group, neocortex first.
pub fn roc_by_group(null_prob: &[f64], truth: &LatentGrid, groups: &[RegionGroup]) -> Result<[RocCurve; 2]> {
    if groups.len() != truth.shape().regions {
        return Err(Error::Shape(format!(
            "{} region groups for {} regions",
            groups.len(),
            truth.shape().regions
        )));
    }
    let members = |g: RegionGroup| -> Vec<usize> { (0..groups.len()).filter(|&b| groups[b] == g).collect() };
    let neo = members(RegionGroup::Neocortex);
    let non = members(RegionGroup::NonNeocortex);
    Ok([
        roc_curve(null_prob, truth, Some(&neo))?,
        roc_curve(null_prob, truth, Some(&non))?,
    ])
}

/// Mean sensitivity at `grid_points` equally spaced specificities from 1
/// down to 0, with the trapezoid AUC of the averaged curve.
pub fn average_roc(curves: &[RocCurve], grid_points: usize) -> Result<RocCurve> {
    if curves.is_empty() || grid_points < 2 {
        return Err(Error::Config("averaging needs at least one curve and two grid points".into()));
    }
    let points: Vec<RocPoint> = (0..grid_points)
        .map(|k| {
            let spec = 1.0 - k as f64 / (grid_points - 1) as f64;
            let sens = curves.iter().map(|c| c.sensitivity_at(spec)).sum::<f64>() / curves.len() as f64;
            RocPoint {
                threshold: f64::NAN,
                sensitivity: sens,
                specificity: spec,
            }
        })
        .collect();
    let auc = trapezoid(&points);
    Ok(RocCurve { points, auc })
}
