//! Empirical tail statistics over delay samples: survival function, tail
//! index estimators, running-variance diagnostics and per-node fairness.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::scalar::{ols, Real};

pub const DEFAULT_TAIL_FRACTION: f64 = 0.1;
pub const MIN_FIT_SAMPLES: usize = 1000;
pub const MIN_TAIL_POINTS: usize = 100;
pub const DEFAULT_WINDOWS: usize = 10;
/// Last-over-first running variance ratio that raises the divergence flag.
pub const DIVERGENCE_RATIO: f64 = 3.0;
pub const DEFAULT_STARVATION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TailMethod {
    LogLogOls,
    Hill,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit<T> {
    pub method: TailMethod,
    pub alpha_hat: T,
    /// Only for the log-log regression.
    pub r_squared: Option<T>,
    pub tail_fraction: T,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcdfPoint<T> {
    pub x: T,
    pub tail_prob: T,
}

fn sorted<T: Real>(samples: &[T]) -> Result<Vec<T>> {
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("samples contain NaN".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(v)
}

/// Empirical survival function `P(X >= x)` at each distinct sample value,
/// in increasing `x`.
pub fn ccdf<T: Real>(samples: &[T]) -> Result<Vec<CcdfPoint<T>>> {
    if samples.is_empty() {
        return Err(Error::Domain("ccdf of an empty sample".into()));
    }
    let v = sorted(samples)?;
    let n = T::from_count(v.len());
    let mut out = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        if i == 0 || x != v[i - 1] {
            out.push(CcdfPoint {
                x,
                tail_prob: T::from_count(v.len() - i) / n,
            });
        }
    }
    Ok(out)
}

/// Log-log regression of the empirical survival function over the largest
/// `tail_fraction` of the samples; `α̂` is minus the slope.
pub fn loglog_slope<T: Real>(samples: &[T], tail_fraction: T) -> Result<TailFit<T>> {
    if !(tail_fraction > T::zero() && tail_fraction <= T::lit(0.5)) {
        return Err(invalid("tail_fraction", format!("must lie in (0, 0.5], got {tail_fraction}")));
    }
    let n = samples.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData { len: n, needed: MIN_FIT_SAMPLES });
    }
    let m = (tail_fraction * T::from_count(n)).ceil().to_usize().unwrap_or(0);
    if m < MIN_TAIL_POINTS {
        return Err(Error::InsufficientData { len: m, needed: MIN_TAIL_POINTS });
    }
    let cutoff = T::from_count(m) / T::from_count(n);
    let (xs, ys): (Vec<T>, Vec<T>) = ccdf(samples)?
        .into_iter()
        .filter(|p| p.tail_prob <= cutoff && p.x > T::zero())
        .map(|p| (p.x.ln(), p.tail_prob.ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(Error::FitUnavailable("fewer than two distinct tail values".into()));
    }
    let (slope, _, r2) = ols(&xs, &ys);
    let alpha_hat = -slope;
    if alpha_hat.is_nan() || alpha_hat <= T::zero() {
        return Err(Error::FitUnavailable(format!("non-decreasing tail, slope {slope}")));
    }
    Ok(TailFit {
        method: TailMethod::LogLogOls,
        alpha_hat,
        r_squared: Some(r2),
        tail_fraction,
        sample_count: n,
    })
}

/// `⌊√n⌋`.
pub fn default_hill_k(n: usize) -> usize {
    (n as f64).sqrt().floor() as usize
}

/// Hill estimator over the `k` largest order statistics.
pub fn hill<T: Real>(samples: &[T], k: usize) -> Result<TailFit<T>> {
    let n = samples.len();
    if k < 2 || 2 * k > n {
        return Err(invalid("k", format!("need 2 <= k <= n/2, got k = {k} with n = {n}")));
    }
    let v = sorted(samples)?;
    let threshold = v[n - k - 1];
    if threshold.is_nan() || threshold <= T::zero() {
        return Err(Error::Domain(format!("hill threshold {threshold} is not positive")));
    }
    let ln_t = threshold.ln();
    let denom: T = v[n - k..].iter().map(|&x| x.ln() - ln_t).sum();
    if denom.is_nan() || denom <= T::zero() {
        return Err(Error::FitUnavailable("tied order statistics give a zero hill denominator".into()));
    }
    Ok(TailFit {
        method: TailMethod::Hill,
        alpha_hat: T::from_count(k) / denom,
        r_squared: None,
        tail_fraction: T::from_count(k) / T::from_count(n),
        sample_count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariancePoint<T> {
    pub n_used: usize,
    pub running_variance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceGrowth<T> {
    pub points: Vec<VariancePoint<T>>,
    /// Last over first running variance; `None` when the first is zero.
    pub ratio: Option<T>,
    pub divergence_suspected: bool,
}

/// Sample variance over the prefixes `n/w, 2n/w, …, n`.
///
/// Divergence is suspected when the last variance is at least three times
/// the first and no intermediate prefix falls back below the first. This is
/// a heuristic: finite samples always have finite variance.
pub fn variance_growth<T: Real>(samples: &[T], windows: usize) -> Result<VarianceGrowth<T>> {
    if windows == 0 {
        return Err(invalid("windows", "must be positive"));
    }
    if samples.len() < 10 * windows {
        return Err(Error::InsufficientData { len: samples.len(), needed: 10 * windows });
    }
    let n = samples.len();
    let mut points = Vec::with_capacity(windows);
    // Welford accumulation in f64 regardless of T
    let (mut count, mut mean, mut m2) = (0usize, 0.0f64, 0.0f64);
    for w in 1..=windows {
        let end = n * w / windows;
        for &x in &samples[count..end] {
            count += 1;
            let x = x.as_f64();
            let d = x - mean;
            mean += d / count as f64;
            m2 += d * (x - mean);
        }
        let var = if count > 1 { m2 / (count - 1) as f64 } else { 0.0 };
        points.push(VariancePoint { n_used: end, running_variance: T::lit(var) });
    }
    let first = points[0].running_variance;
    let last = points[windows - 1].running_variance;
    let ratio = (first > T::zero()).then(|| last / first);
    let divergence_suspected = ratio.is_some_and(|r| r >= T::lit(DIVERGENCE_RATIO))
        && points.iter().all(|p| p.running_variance >= first);
    Ok(VarianceGrowth { points, ratio, divergence_suspected })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub per_node: Vec<u64>,
    pub mean: f64,
    pub min: u64,
    pub max: u64,
    pub jain_index: f64,
    pub starved_fraction: f64,
}

/// Jain index and fraction of nodes below `threshold · mean`.
pub fn fairness(per_node: &[u64], threshold: f64) -> Result<FairnessReport> {
    if per_node.len() < 2 {
        return Err(Error::InsufficientData { len: per_node.len(), needed: 2 });
    }
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(invalid("starvation_threshold", format!("must be finite and non-negative, got {threshold}")));
    }
    let n = per_node.len() as f64;
    let sum: f64 = per_node.iter().map(|&x| x as f64).sum();
    if sum == 0.0 {
        return Err(Error::Domain("jain index is undefined when every count is zero".into()));
    }
    let sum_sq: f64 = per_node.iter().map(|&x| (x as f64) * (x as f64)).sum();
    let mean = sum / n;
    let starved = per_node.iter().filter(|&&x| (x as f64) < threshold * mean).count();
    Ok(FairnessReport {
        per_node: per_node.to_vec(),
        mean,
        min: *per_node.iter().min().unwrap(),
        max: *per_node.iter().max().unwrap(),
        jain_index: sum * sum / (n * sum_sq),
        starved_fraction: starved as f64 / n,
    })
}
