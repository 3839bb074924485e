//! Order statistics over latency samples.

/// Summary of a set of latency samples, all in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_us: f64,
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

/// Nearest-rank percentile of an ascending slice: the smallest sample with at
/// least `p` percent of samples at or below it.
pub fn nearest_rank(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Mean, p50, p99 and max. `None` when there are no samples.
pub fn summarize(samples: &[u64]) -> Option<LatencySummary> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let sum: u128 = sorted.iter().map(|&s| u128::from(s)).sum();
    Some(LatencySummary {
        count: sorted.len(),
        mean_us: sum as f64 / sorted.len() as f64,
        p50_us: nearest_rank(&sorted, 50.0)?,
        p99_us: nearest_rank(&sorted, 99.0)?,
        max_us: *sorted.last()?,
    })
}
