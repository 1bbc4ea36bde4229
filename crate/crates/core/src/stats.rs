//! Small order-statistics helpers shared by metric code.

/// Nearest-rank quantile of an ascending slice: the value at rank `ceil(q * n)`.
/// `q` is a fraction in `[0, 1]`; `q = 0` returns the minimum.
pub fn nearest_rank(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (q.clamp(0.0, 1.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

/// Nearest-rank quantile of an ascending `f64` slice.
pub fn nearest_rank_f64(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = (q.clamp(0.0, 1.0) * n as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two samples.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Empirical CDF points `(value, cumulative probability)` at each distinct value.
pub fn ecdf(sorted: &[u64]) -> Vec<(u64, f64)> {
    let n = sorted.len() as f64;
    let mut out: Vec<(u64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = p,
            _ => out.push((v, p)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_small() {
        let xs: Vec<u64> = (1..=10).map(|i| i * 10).collect();
        assert_eq!(nearest_rank(&xs, 0.5), Some(50));
        assert_eq!(nearest_rank(&xs, 0.95), Some(100));
        assert_eq!(nearest_rank(&xs, 0.0), Some(10));
        assert_eq!(nearest_rank(&xs, 1.0), Some(100));
        assert_eq!(nearest_rank(&[], 0.5), None);
    }

    #[test]
    fn moments() {
        assert_eq!(mean(&[0.0, 2.0]), 1.0);
        assert_eq!(std_dev(&[3.0, 3.0, 3.0]), 0.0);
        assert!((std_dev(&[0.0, 2.0]) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ecdf_merges_ties() {
        assert_eq!(ecdf(&[1, 1, 2, 4]), vec![(1, 0.5), (2, 0.75), (4, 1.0)]);
    }
}
