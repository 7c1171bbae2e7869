//! Percentile bootstrap over prompt indices.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::quantile_sorted;

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const MIN_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapInterval {
    pub lower: f64,
    pub upper: f64,
    /// Statistic on the original (unresampled) index set.
    pub point: f64,
    pub level: f64,
    pub resamples: usize,
}

/// Draws `n` indices with replacement for resample `index` of `seed`.
pub fn resample_indices(n: usize, seed: u64, index: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, index as u64);
    (0..n).map(|_| r.random_range(0..n)).collect()
}

/// Percentile bootstrap confidence interval.
///
/// `statistic` receives prompt indices (with repetition) and returns the
/// statistic on that resample. Resample `b` draws from its own ChaCha stream
/// of `seed`, so results do not depend on evaluation order.
pub fn bootstrap_ci<F>(
    mut statistic: F,
    n: usize,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapInterval>
where
    F: FnMut(&[usize]) -> Result<f64>,
{
    if resamples < MIN_RESAMPLES {
        return Err(Error::InvalidParameter {
            name: "resamples",
            reason: format!("{resamples} < {MIN_RESAMPLES}"),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter { name: "level", reason: format!("{level} is outside (0, 1)") });
    }
    if n == 0 {
        return Err(Error::TooShort { len: 0, min: 1 });
    }
    let identity: Vec<usize> = (0..n).collect();
    let point = statistic(&identity)?;
    let mut stats = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let idx = resample_indices(n, seed, b);
        let v = statistic(&idx).map_err(|e| Error::Resample { index: b, source: Box::new(e) })?;
        stats.push(v);
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok(BootstrapInterval {
        lower: quantile_sorted(&stats, alpha / 2.0),
        upper: quantile_sorted(&stats, 1.0 - alpha / 2.0),
        point,
        level,
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_statistic() {
        let ci = bootstrap_ci(|_| Ok(4.2), 10, 200, 1, DEFAULT_LEVEL).unwrap();
        assert_eq!((ci.lower, ci.upper, ci.point), (4.2, 4.2, 4.2));
    }

    #[test]
    fn deterministic_given_seed() {
        let data: Vec<f64> = (0..50).map(|i| libm::sin(i as f64)).collect();
        let stat = |idx: &[usize]| Ok(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        let a = bootstrap_ci(stat, data.len(), 300, 9, 0.9).unwrap();
        let b = bootstrap_ci(stat, data.len(), 300, 9, 0.9).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(stat, data.len(), 300, 10, 0.9).unwrap();
        assert_ne!(a, c);
        assert!(a.lower <= a.point && a.point <= a.upper);
    }

    #[test]
    fn failure_carries_resample_index() {
        let mut calls = 0;
        let err = bootstrap_ci(
            |_| {
                calls += 1;
                if calls == 4 {
                    Err(Error::ZeroVariance("test"))
                } else {
                    Ok(1.0)
                }
            },
            5,
            100,
            0,
            0.95,
        )
        .unwrap_err();
        // call 1 is the point estimate, so the failing resample is index 2
        assert!(matches!(err, Error::Resample { index: 2, .. }));
    }

    #[test]
    fn parameter_checks() {
        assert!(bootstrap_ci(|_| Ok(0.0), 5, 99, 0, 0.95).is_err());
        assert!(bootstrap_ci(|_| Ok(0.0), 5, 100, 0, 1.0).is_err());
        assert!(bootstrap_ci(|_| Ok(0.0), 0, 100, 0, 0.5).is_err());
    }
}
