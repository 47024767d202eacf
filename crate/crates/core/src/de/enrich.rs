//! One-sided binomial enrichment of DE calls in a gene set.

use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enrichment {
    pub set_size: usize,
    pub observed: usize,
    pub expected: f64,
    pub fold_change: f64,
    /// `P(X >= observed)` for `X ~ Binomial(set_size, rate)`.
    pub p_value: f64,
    /// Set when the background rate is 0 but calls were observed.
    pub degenerate_rate: bool,
}

/// Binomial over-representation test of DE calls within a gene set.
pub fn gene_set_enrichment(calls: &[bool], set: &[usize], rate: f64) -> Result<Enrichment> {
    if set.is_empty() {
        return Err(Error::Config("gene set is empty".into()));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("background rate {rate} outside [0, 1]")));
    }
    if let Some(&g) = set.iter().find(|&&g| g >= calls.len()) {
        return Err(Error::Config(format!("gene index {g} out of range for {} genes", calls.len())));
    }
    let n = set.len();
    let observed = set.iter().filter(|&&g| calls[g]).count();
    let expected = n as f64 * rate;
    let fold_change = if observed == 0 {
        0.0
    } else if expected > 0.0 {
        observed as f64 / expected
    } else {
        f64::INFINITY
    };
    let degenerate_rate = rate == 0.0 && observed > 0;
    let p_value = if observed == 0 {
        1.0
    } else if degenerate_rate {
        0.0
    } else {
        let dist = Binomial::new(rate, n as u64).map_err(|e| Error::Config(e.to_string()))?;
        dist.sf(observed as u64 - 1)
    };
    Ok(Enrichment {
        set_size: n,
        observed,
        expected,
        fold_change,
        p_value,
        degenerate_rate,
    })
}
