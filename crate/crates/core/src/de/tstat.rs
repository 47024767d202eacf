//! Two-sample t statistics between consecutive periods and their normal z-scores.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// `|z|` assigned when the t tail probability underflows.
pub const Z_CLAMP: f64 = 8.0;
const TAIL_EPS: f64 = 1e-15;

/// Pooled-variance two-sample t statistic for `mean(curr) - mean(prev)`,
/// with `n_prev + n_curr - 2` degrees of freedom.
pub fn t_statistic(prev: &[f64], curr: &[f64]) -> Result<(f64, usize)> {
    let (n1, n2) = (prev.len(), curr.len());
    if n1 == 0 || n2 == 0 || n1 + n2 < 3 {
        return Err(Error::DegenerateData(format!(
            "t statistic needs two non-empty samples with at least 3 values, got {n1} and {n2}"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m1, m2) = (mean(prev), mean(curr));
    let ss = prev.iter().map(|v| (v - m1).powi(2)).sum::<f64>() + curr.iter().map(|v| (v - m2).powi(2)).sum::<f64>();
    let df = n1 + n2 - 2;
    let pooled = ss / df as f64;
    if pooled <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let se = (pooled * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    Ok(((m2 - m1) / se, df))
}

/// `z = Phi^{-1}(F_df(t))`, computed from the upper tail so that it is exactly
/// odd in `t` and accurate for large `|t|`.
pub fn t_to_z(t: f64, df: usize) -> f64 {
    if t == 0.0 || df == 0 {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    let tail = dist.sf(t.abs());
    let magnitude = if tail < TAIL_EPS {
        Z_CLAMP
    } else {
        (-Normal::standard().inverse_cdf(tail)).min(Z_CLAMP)
    };
    magnitude.copysign(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_t() {
        let (t, df) = t_statistic(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap();
        assert!((t - 6.0f64.sqrt()).abs() < 1e-12, "{t}");
        assert_eq!(df, 4);
        let (back, _) = t_statistic(&[3.0, 4.0, 5.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(back, -t);
        let (zero, _) = t_statistic(&[1.0, 3.0], &[2.0, 2.5, 1.5]).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(t_statistic(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::ZeroVariance)));
        assert!(t_statistic(&[1.0], &[2.0]).is_err());
        assert!(t_statistic(&[], &[2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn z_transform_values() {
        assert_eq!(t_to_z(0.0, 4), 0.0);
        // reference value from an independent t CDF / normal quantile pair
        assert!((t_to_z(2.0, 4) - 1.571_284_742_868_764).abs() < 1e-9);
        assert_eq!(t_to_z(-2.0, 4), -t_to_z(2.0, 4));
        assert_eq!(t_to_z(1e6, 4), Z_CLAMP);
        assert_eq!(t_to_z(-1e6, 4), -Z_CLAMP);
    }

    #[test]
    fn z_transform_is_monotone() {
        for df in [1, 2, 4, 10, 30] {
            let mut last = f64::NEG_INFINITY;
            for i in -200..=200 {
                let z = t_to_z(i as f64 * 0.05, df);
                assert!(z > last, "df={df} t={}", i as f64 * 0.05);
                last = z;
            }
        }
    }
}
