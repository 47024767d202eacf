//! Natural cubic spline basis in truncated-power form.
//!
//! With knots `k_1 < ... < k_K` the basis is `1, x` and, for
//! `j = 1..K-2`, `d_j(x) - d_{K-1}(x)` where
//! `d_j(x) = ((x - k_j)_+^3 - (x - k_K)_+^3) / (k_K - k_j)`. The span is all
//! cubic splines with those knots that are linear beyond the boundary knots.

#[derive(Debug, Clone, PartialEq)]
pub struct NaturalSplineBasis {
    knots: Vec<f64>,
}

impl NaturalSplineBasis {
    pub fn new(knots: Vec<f64>) -> Self {
        assert!(knots.len() >= 2, "a natural spline needs at least two knots");
        assert!(knots.windows(2).all(|w| w[0] < w[1]), "knots must be strictly increasing");
        NaturalSplineBasis { knots }
    }

    /// `df` basis columns besides the intercept: boundary knots at the extremes
    /// of `x` and `df - 1` interior knots at equally spaced quantiles.
    pub fn with_df(x: &[f64], df: usize) -> Self {
        assert!(df >= 1 && !x.is_empty());
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        let knots = (0..=df).map(|i| q(i as f64 / df as f64)).collect();
        Self::new(knots)
    }

    /// Number of columns including the intercept.
    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let k = &self.knots;
        let kk = k.len();
        let last = k[kk - 1];
        let d = |j: usize| {
            let a = (x - k[j]).max(0.0).powi(3);
            let b = (x - last).max(0.0).powi(3);
            (a - b) / (last - k[j])
        };
        let mut out = Vec::with_capacity(kk);
        out.push(1.0);
        out.push(x);
        if kk > 2 {
            let tail = d(kk - 2);
            for j in 0..kk - 2 {
                out.push(d(j) - tail);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_count() {
        let x: Vec<f64> = (0..120).map(|i| i as f64 / 119.0).collect();
        let b = NaturalSplineBasis::with_df(&x, 7);
        assert_eq!(b.len(), 8);
        assert_eq!(b.eval(0.3).len(), 8);
        assert_eq!(b.knots()[0], 0.0);
        assert_eq!(*b.knots().last().unwrap(), 1.0);
    }

    #[test]
    fn linear_beyond_boundary() {
        let b = NaturalSplineBasis::new(vec![0.0, 0.3, 0.5, 0.8, 1.0]);
        for x0 in [1.0, -0.5] {
            let dir = if x0 > 0.5 { 1.0 } else { -1.0 };
            let f = |x: f64| b.eval(x);
            let (a, m, c) = (f(x0 + dir * 0.5), f(x0 + dir * 1.0), f(x0 + dir * 1.5));
            for j in 0..b.len() {
                let second = a[j] - 2.0 * m[j] + c[j];
                assert!(second.abs() < 1e-9, "column {j} curves outside the knots: {second}");
            }
        }
    }
}
