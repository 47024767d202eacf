//! Two-group model `f = p0 f0 + (1 - p0) f1` for pooled z-scores with a
//! fixed standard-normal null.
//!
//! The marginal is estimated by Lindsey's method: bin the sample, fit a
//! Poisson log-linear model on a natural-spline basis of the bin centres,
//! and tabulate the result on a fine grid. `p0` comes from matching the
//! null at `z = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::spline::NaturalSplineBasis;
use crate::error::{Error, Result};

pub const LINDSEY_BINS: usize = 120;
pub const SPLINE_DF: usize = 7;
const MIN_SAMPLE: usize = 100;
const TABLE_POINTS: usize = 1201;
const NULL_ONLY: f64 = 1.0 - 1e-6;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn null_density(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub z: f64,
    /// Fitted marginal density.
    pub f: f64,
    /// Non-null density.
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFdrModel {
    pub p0: f64,
    /// True when `p0` is numerically 1 and `f1` is undefined.
    pub null_only: bool,
    /// Ascending in `z`.
    pub table: Vec<DensityPoint>,
}

impl LocalFdrModel {
    /// A model with no non-null component.
    pub fn null() -> Self {
        LocalFdrModel {
            p0: 1.0,
            null_only: true,
            table: Vec::new(),
        }
    }

    pub fn f0(&self, z: f64) -> f64 {
        null_density(z)
    }

    /// Log-linear interpolation of a positive tabulated column; beyond the
    /// table the end segments are extended.
    fn interp(&self, z: f64, pick: impl Fn(&DensityPoint) -> f64) -> f64 {
        let tab = &self.table;
        if tab.len() < 2 {
            return 0.0;
        }
        let k = tab.partition_point(|p| p.z <= z).clamp(1, tab.len() - 1);
        let (a, b) = (&tab[k - 1], &tab[k]);
        let (fa, fb) = (pick(a), pick(b));
        let w = (z - a.z) / (b.z - a.z);
        if fa > 0.0 && fb > 0.0 {
            (fa.ln() + w * (fb.ln() - fa.ln())).exp()
        } else if (0.0..=1.0).contains(&w) {
            (fa + w * (fb - fa)).max(0.0)
        } else {
            0.0
        }
    }

    /// The spline estimate of the marginal before the two-group split.
    pub fn fitted_marginal(&self, z: f64) -> f64 {
        if self.table.is_empty() {
            return null_density(z);
        }
        self.interp(z, |p| p.f)
    }

    pub fn f1(&self, z: f64) -> f64 {
        if self.null_only {
            return 0.0;
        }
        self.interp(z, |p| p.f1)
    }

    /// `p0 f0 + (1 - p0) f1`.
    pub fn mixture(&self, z: f64) -> f64 {
        self.p0 * self.f0(z) + (1.0 - self.p0) * self.f1(z)
    }

    /// `log f1(z) - log f0(z)`, the evidence for the non-null state.
    pub fn log_odds(&self, z: f64) -> f64 {
        if self.null_only {
            return f64::NEG_INFINITY;
        }
        let f1 = self.f1(z);
        if f1 <= 0.0 {
            return f64::NEG_INFINITY;
        }
        f1.ln() - (-0.5 * z * z - LN_SQRT_2PI)
    }
}

/// Local false discovery rate `p0 f0(z) / f(z)`, capped at 1.
pub fn eb_posterior(z: f64, model: &LocalFdrModel) -> f64 {
    if model.null_only {
        return 1.0;
    }
    let null = model.p0 * model.f0(z);
    let m = null + (1.0 - model.p0) * model.f1(z);
    if m <= 0.0 {
        return 1.0;
    }
    (null / m).min(1.0)
}

fn poisson_irls(x: &DMatrix<f64>, y: &[f64]) -> Result<DVector<f64>> {
    let (n, p) = x.shape();
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = mean.max(1e-3).ln();
    let mut last_dev = f64::INFINITY;
    for _ in 0..100 {
        let eta = x * &beta;
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        let mut dev = 0.0;
        for i in 0..n {
            let mu = eta[i].exp();
            let zi = eta[i] + (y[i] - mu) / mu;
            let row = x.row(i);
            for a in 0..p {
                xtwz[a] += mu * row[a] * zi;
                for b in 0..=a {
                    xtwx[(a, b)] += mu * row[a] * row[b];
                }
            }
            if y[i] > 0.0 {
                dev += y[i] * (y[i] / mu).ln();
            }
            dev -= y[i] - mu;
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let next = match xtwx.clone().cholesky() {
            Some(ch) => ch.solve(&xtwz),
            None => {
                let ridge = 1e-8 * (0..p).map(|a| xtwx[(a, a)]).fold(1.0, f64::max);
                let mut m = xtwx;
                for a in 0..p {
                    m[(a, a)] += ridge;
                }
                m.lu()
                    .solve(&xtwz)
                    .ok_or_else(|| Error::DegenerateData("density fit: singular normal equations".into()))?
            }
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { params: next.iter().copied().collect() });
        }
        beta = next;
        if (last_dev - dev).abs() <= 1e-10 * (1.0 + dev.abs()) {
            break;
        }
        last_dev = dev;
    }
    Ok(beta)
}

/// Fit the two-group model to pooled z-scores.
pub fn fit_local_fdr(z: &[f64]) -> Result<LocalFdrModel> {
    if z.len() < MIN_SAMPLE {
        return Err(Error::DegenerateData(format!(
            "local fdr needs at least {MIN_SAMPLE} z-scores, got {}",
            z.len()
        )));
    }
    if let Some(v) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { params: vec![*v] });
    }
    if z.len() < 1000 {
        log::warn!("local fdr fitted on only {} z-scores", z.len());
    }
    let (min, max) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = (min - 0.1, max + 0.1);
    let width = (hi - lo) / LINDSEY_BINS as f64;
    let mut counts = vec![0.0; LINDSEY_BINS];
    for &v in z {
        let k = (((v - lo) / width) as usize).min(LINDSEY_BINS - 1);
        counts[k] += 1.0;
    }
    let centers: Vec<f64> = (0..LINDSEY_BINS).map(|k| lo + (k as f64 + 0.5) * width).collect();
    let (c0, c1) = (centers[0], centers[LINDSEY_BINS - 1]);
    let scale = |v: f64| (v - c0) / (c1 - c0);
    let scaled: Vec<f64> = centers.iter().map(|&c| scale(c)).collect();
    let basis = NaturalSplineBasis::with_df(&scaled, SPLINE_DF);
    let p = basis.len();
    let x = DMatrix::from_fn(LINDSEY_BINS, p, |i, j| basis.eval(scaled[i])[j]);
    let beta = poisson_irls(&x, &counts)?;
    let norm = z.len() as f64 * width;
    let marginal = |v: f64| {
        let row = basis.eval(scale(v));
        let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        eta.exp() / norm
    };

    let p0 = (marginal(0.0) / null_density(0.0)).min(1.0);
    let step = (hi - lo) / (TABLE_POINTS - 1) as f64;
    let zs: Vec<f64> = (0..TABLE_POINTS).map(|i| lo + i as f64 * step).collect();
    let fs: Vec<f64> = zs.iter().map(|&v| marginal(v)).collect();
    let raw: Vec<f64> = zs.iter().zip(&fs).map(|(&v, &f)| (f - p0 * null_density(v)).max(0.0)).collect();
    let mass: f64 = raw.windows(2).map(|w| 0.5 * (w[0] + w[1]) * step).sum();
    let null_only = p0 >= NULL_ONLY || mass <= 1e-12;
    if null_only {
        log::warn!("local fdr: null proportion {p0:.6} leaves no non-null density");
    }
    let table = zs
        .iter()
        .zip(fs.iter().zip(&raw))
        .map(|(&z, (&f, &r))| DensityPoint {
            z,
            f,
            f1: if null_only { 0.0 } else { r / mass },
        })
        .collect();
    Ok(LocalFdrModel {
        p0: if null_only { 1.0 } else { p0 },
        null_only,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn pure_null_sample() {
        let m = fit_local_fdr(&normals(50_000, 1)).unwrap();
        assert!(m.p0 >= 0.98, "p0 = {}", m.p0);
    }

    #[test]
    fn two_group_mixture() {
        let mut z = normals(50_000, 2);
        for v in z.iter_mut().take(10_000) {
            *v += 3.0;
        }
        let m = fit_local_fdr(&z).unwrap();
        let oracle = |v: f64| {
            let a = 0.8 * null_density(v);
            a / (a + 0.2 * null_density(v - 3.0))
        };
        assert!((eb_posterior(0.0, &m) - oracle(0.0)).abs() < 0.02, "{}", eb_posterior(0.0, &m));
        assert!(eb_posterior(4.0, &m) <= 0.05);
        assert!((eb_posterior(4.0, &m) - oracle(4.0)).abs() < 0.02);
        let mass: f64 = m.table.windows(2).map(|w| 0.5 * (w[0].f1 + w[1].f1) * (w[1].z - w[0].z)).sum();
        assert!((mass - 1.0).abs() < 1e-3);
        assert!(m.table.iter().all(|p| p.f > 0.0 && p.f1 >= 0.0));
    }

    #[test]
    fn symmetric_alternative_is_monotone_in_abs_z() {
        // oracle: 0.8 N(0,1) + 0.2 N(0,9), tabulated exactly
        let f1 = |v: f64| null_density(v / 3.0) / 3.0;
        let table = (0..=1600)
            .map(|i| {
                let z = -8.0 + i as f64 * 0.01;
                DensityPoint { z, f: 0.8 * null_density(z) + 0.2 * f1(z), f1: f1(z) }
            })
            .collect();
        let oracle = LocalFdrModel { p0: 0.8, null_only: false, table };
        let mut z = normals(50_000, 6);
        for v in z.iter_mut().take(10_000) {
            *v *= 3.0;
        }
        let fitted = fit_local_fdr(&z).unwrap();
        for sign in [1.0, -1.0] {
            let mut last = 1.0;
            for i in 0..=60 {
                let q = eb_posterior(sign * i as f64 * 0.1, &oracle);
                assert!(q < last || i == 0, "oracle |z|={}: {q} after {last}", i as f64 * 0.1);
                last = q;
            }
            let mut last = 1.0;
            for i in 10..=40 {
                let q = eb_posterior(sign * i as f64 * 0.1, &fitted);
                assert!(q <= last, "fitted |z|={}: {q} after {last}", i as f64 * 0.1);
                last = q;
            }
        }
    }

    #[test]
    fn symmetric_sample_gives_symmetric_fit() {
        let half = normals(5_000, 3);
        let mut z: Vec<f64> = half.iter().map(|v| v * 1.5).collect();
        z.extend(half.iter().map(|v| -v * 1.5));
        let m = fit_local_fdr(&z).unwrap();
        let top = m.table.last().unwrap().z;
        for i in 0..=40 {
            let v = top * i as f64 / 40.0;
            let (a, b) = (m.fitted_marginal(v), m.fitted_marginal(-v));
            assert!((a - b).abs() <= 0.02 * a.max(b), "z={v}: {a} vs {b}");
        }
    }

    #[test]
    fn null_only_model() {
        let m = LocalFdrModel::null();
        assert_eq!(eb_posterior(3.0, &m), 1.0);
        assert_eq!(m.log_odds(1.0), f64::NEG_INFINITY);
        assert!(fit_local_fdr(&normals(50, 4)).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let m = fit_local_fdr(&normals(2_000, 5)).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: LocalFdrModel = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }
}
