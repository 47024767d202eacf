//! Posterior FDR control: reject the smallest local fdr values while
//! their running mean stays within the target.

/// The cells rejected at a posterior FDR level.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrSelection {
    /// Largest rejected q value, `None` when nothing is rejected.
    pub cutoff: Option<f64>,
    /// Indices into the input, ascending in q.
    pub rejected: Vec<usize>,
    /// Mean q over the rejected set.
    pub mean_q: f64,
}

/// Reject the `k` smallest q values, with `k` the largest count whose
/// running mean stays at or below `alpha`.
pub fn fdr_threshold(q: &[f64], alpha: f64) -> FdrSelection {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)));
    let mut sum = 0.0;
    let mut k = 0;
    let mut mean_q = 0.0;
    for (t, &i) in order.iter().enumerate() {
        sum += q[i];
        let mean = sum / (t + 1) as f64;
        if mean <= alpha {
            k = t + 1;
            mean_q = mean;
        }
    }
    order.truncate(k);
    FdrSelection {
        cutoff: order.last().map(|&i| q[i]),
        rejected: order,
        mean_q,
    }
}
