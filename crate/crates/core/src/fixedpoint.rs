//! Mean-field saturation model: slot probabilities, the fixed point for the
//! attempt rate `tau` and collision probability `pc`, normalized throughput,
//! and large-network limits.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::backoff::{BackoffSpec, Family, GrowthClass};
use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Bisection stops once `|h(pc)|` falls below this.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Upper end of the bisection interval for `pc`.
pub const PC_UPPER: f64 = 1.0 - 1e-9;
/// Relative size of the last term at which an infinite series is cut.
pub const SERIES_REL_TOL: f64 = 1e-12;
/// Minimum stage index before the relative cut may apply.
pub const SERIES_MIN_TERMS: usize = 32;
/// Length of a run of non-decreasing terms that signals divergence.
pub const DIVERGENCE_RUN: usize = 64;
/// Hard budget on series terms; a sum cut here is only a lower bound.
pub const MAX_SERIES_TERMS: usize = 1 << 20;

const MAX_BISECTION_STEPS: usize = 200;

/// Retry limit `K`: a packet is dropped when it collides at stage `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RetryLimit {
    Finite(u32),
    #[default]
    Infinite,
}

impl RetryLimit {
    pub fn is_infinite(&self) -> bool {
        matches!(self, RetryLimit::Infinite)
    }
}

impl fmt::Display for RetryLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetryLimit::Finite(k) => write!(f, "{k}"),
            RetryLimit::Infinite => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for RetryLimit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" | "∞" => Ok(RetryLimit::Infinite),
            other => other
                .parse::<u32>()
                .map(RetryLimit::Finite)
                .map_err(|_| invalid("retry_limit", format!("expected an integer or `inf`, got `{other}`"))),
        }
    }
}

// JSON form: a non-negative integer or the string "inf".
impl Serialize for RetryLimit {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RetryLimit::Finite(k) => s.serialize_u32(*k),
            RetryLimit::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for RetryLimit {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(k) => Ok(RetryLimit::Finite(k)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Lengths of idle, successful and collided slots in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhyProfile<T> {
    pub t_idle: T,
    pub t_succ: T,
    pub t_coll: T,
}

/// Raw PHY/MAC timing fields from which a [`PhyProfile`] is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhyParams {
    pub rate_mbps: f64,
    pub preamble_us: f64,
    pub mac_header_bits: f64,
    pub payload_bits: f64,
    pub sifs_us: f64,
    pub difs_us: f64,
    pub ack_us: f64,
    pub slot_us: f64,
}

impl PhyParams {
    /// 802.11g basic access at 54 Mbps with a 1500-byte payload.
    pub const fn ieee80211g() -> Self {
        PhyParams {
            rate_mbps: 54.0,
            preamble_us: 24.0,
            mac_header_bits: 272.0,
            payload_bits: 12_000.0,
            sifs_us: 16.0,
            difs_us: 34.0,
            ack_us: 24.5,
            slot_us: 9.0,
        }
    }

    /// Slot lengths before quantization:
    /// idle = slot; success = preamble + header + payload + SIFS + ACK + DIFS;
    /// collision = preamble + header + payload + DIFS.
    pub fn raw_slot_lengths(&self) -> (f64, f64, f64) {
        let frame = self.preamble_us
            + self.mac_header_bits / self.rate_mbps
            + self.payload_bits / self.rate_mbps;
        (
            self.slot_us,
            frame + self.sifs_us + self.ack_us + self.difs_us,
            frame + self.difs_us,
        )
    }
}

/// Slot lengths are stored on a 0.1 µs grid.
pub const TIME_RESOLUTION_US: f64 = 0.1;

impl<T: Real> PhyProfile<T> {
    pub fn new(t_idle: T, t_succ: T, t_coll: T) -> Result<Self> {
        for (name, v) in [("t_idle", t_idle), ("t_succ", t_succ), ("t_coll", t_coll)] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(invalid(name, format!("must be a positive duration, got {v}")));
            }
        }
        if t_succ < t_idle {
            return Err(invalid("t_succ", "must not be shorter than t_idle"));
        }
        if t_coll < t_idle {
            return Err(invalid("t_coll", "must not be shorter than t_idle"));
        }
        Ok(Self { t_idle, t_succ, t_coll })
    }

    /// Derives the triple from raw timing fields, rounded to 0.1 µs.
    pub fn from_params(params: &PhyParams) -> Result<Self> {
        let (i, s, c) = params.raw_slot_lengths();
        let q = |x: f64| T::lit((x / TIME_RESOLUTION_US).round() * TIME_RESOLUTION_US);
        Self::new(q(i), q(s), q(c))
    }

    /// Default 802.11g profile: 9 µs / 325.8 µs / 285.3 µs.
    pub fn ieee80211g() -> Self {
        Self::from_params(&PhyParams::ieee80211g()).expect("802.11g timings are valid")
    }

    /// All three slots of the same length (throughput then equals `p_succ`).
    pub fn uniform(len: T) -> Result<Self> {
        Self::new(len, len, len)
    }

    pub fn min_len(&self) -> T {
        self.t_idle.min(self.t_succ).min(self.t_coll)
    }

    pub fn max_len(&self) -> T {
        self.t_idle.max(self.t_succ).max(self.t_coll)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotProbabilities<T> {
    pub p_idle: T,
    pub p_succ: T,
    pub p_coll: T,
}

/// `(1 - x)^m`, with `0^0 = 1`.
pub(crate) fn pow_one_minus<T: Real>(x: T, m: u64) -> T {
    if m == 0 {
        T::one()
    } else {
        (T::from_u64(m).unwrap() * (-x).ln_1p()).exp()
    }
}

/// Probabilities of idle, successful and collided generic slots when each of
/// `n` nodes transmits independently with probability `tau`.
pub fn slot_probabilities<T: Real>(tau: T, n: u64) -> SlotProbabilities<T> {
    let p_idle = pow_one_minus(tau, n);
    let p_succ = T::from_u64(n).unwrap() * tau * pow_one_minus(tau, n.saturating_sub(1));
    let p_coll = (T::one() - p_idle - p_succ).max(T::zero());
    SlotProbabilities { p_idle, p_succ, p_coll }
}

/// Outcome of summing `sum_k pc^k (W_k - 1)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum<T> {
    pub sum: T,
    pub terms: usize,
    /// Terms stopped shrinking and the growth ratio confirms divergence;
    /// `sum` is the partial sum at that point.
    pub diverged: bool,
    /// The term budget ran out before convergence; `sum` is a lower bound.
    pub budget_exhausted: bool,
}

/// Whether the terms' growth ratio `pc * gamma` is at least one, or `None`
/// when the backoff function has no usable ratio limit.
fn ratio_diverges<T: Real>(spec: &BackoffSpec<T>, pc: T) -> Option<bool> {
    match spec.family() {
        Family::Exponential { r } => Some(pc * *r >= T::one()),
        Family::SubExponential { .. } | Family::Polynomial { .. } => Some(false),
        Family::Table(_) => spec.growth_class().ok().map(|c| pc * c.gamma() >= T::one()),
    }
}

/// Stage `k` term `pc^k (W_k - 1) / 2`, evaluated in log space.
fn ln_mean_counter_term<T: Real>(spec: &BackoffSpec<T>, ln_pc: T, k: usize) -> Result<T> {
    let ln_w = spec.ln_window(k)?;
    let ln_wm1 = if ln_w <= T::zero() {
        T::neg_infinity()
    } else {
        ln_w + (-(-ln_w).exp()).ln_1p()
    };
    Ok(T::from_count(k) * ln_pc + ln_wm1 - T::LN_2())
}

/// `sum_{k=0}^{K} pc^k E[B_k]` with `E[B_k] = (W_k - 1)/2`.
///
/// Finite `K` sums exactly. For `K = inf` the sum is cut once a term drops
/// below `1e-12` of the partial sum (at `k >= 32`); a run of 64
/// non-decreasing terms is reported as divergence when `pc * gamma >= 1`
/// confirms it, otherwise summation continues up to [`MAX_SERIES_TERMS`].
pub fn mean_backoff_series<T: Real>(
    spec: &BackoffSpec<T>,
    pc: T,
    retry_limit: RetryLimit,
) -> Result<SeriesSum<T>> {
    if !(pc >= T::zero() && pc < T::one()) {
        return Err(invalid("pc", format!("must lie in [0, 1), got {pc}")));
    }
    let last = match (retry_limit, spec.table_len()) {
        (RetryLimit::Finite(k), Some(len)) if k as usize >= len => {
            return Err(Error::TableExhausted {
                needed: k as usize,
                last: len - 1,
            })
        }
        (RetryLimit::Finite(k), _) => Some(k as usize),
        (RetryLimit::Infinite, _) => None,
    };
    if pc == T::zero() {
        let w0 = T::from_u32(spec.w0()).unwrap();
        return Ok(SeriesSum {
            sum: (w0 - T::one()) / T::lit(2.0),
            terms: 1,
            diverged: false,
            budget_exhausted: false,
        });
    }

    let ln_pc = pc.ln();
    let rel_tol = T::lit(SERIES_REL_TOL);
    let mut confirmed: Option<Option<bool>> = None;
    let mut sum = T::zero();
    let mut prev = T::neg_infinity();
    let mut run = 0usize;
    let mut k = 0usize;
    loop {
        if let Some(last) = last {
            if k > last {
                return Ok(SeriesSum { sum, terms: k, diverged: false, budget_exhausted: false });
            }
        }
        if let Some(len) = spec.table_len() {
            if k >= len {
                return Err(Error::TableExhausted { needed: k, last: len - 1 });
            }
        }
        let term = ln_mean_counter_term(spec, ln_pc, k)?.exp();
        if !term.is_finite() {
            return Ok(SeriesSum { sum, terms: k, diverged: true, budget_exhausted: false });
        }
        sum = sum + term;
        run = if term >= prev { run + 1 } else { 0 };
        prev = term;
        k += 1;
        if last.is_some() {
            continue;
        }
        if run >= DIVERGENCE_RUN {
            let verdict = *confirmed.get_or_insert_with(|| ratio_diverges(spec, pc));
            if verdict.unwrap_or(true) {
                return Ok(SeriesSum { sum, terms: k, diverged: true, budget_exhausted: false });
            }
        }
        if k > SERIES_MIN_TERMS && term < rel_tol * sum {
            return Ok(SeriesSum { sum, terms: k, diverged: false, budget_exhausted: false });
        }
        if k >= MAX_SERIES_TERMS {
            return Ok(SeriesSum { sum, terms: k, diverged: false, budget_exhausted: true });
        }
    }
}

/// One solved saturation scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointSolution<T> {
    pub n: u64,
    pub tau: T,
    pub pc: T,
    /// Normalized saturation throughput.
    pub s: T,
    pub series_terms_used: usize,
    pub converged: bool,
    /// `pc - Psi(pc)` at the returned root.
    pub residual: T,
    pub iterations: usize,
}

struct Eval<T> {
    h: T,
    theta: T,
    terms: usize,
    /// `h` is only a lower bound (series budget ran out).
    lower_bound: bool,
}

/// Attempt rate implied by a collision probability.
fn theta<T: Real>(spec: &BackoffSpec<T>, pc: T, k: RetryLimit) -> Result<(T, SeriesSum<T>)> {
    let series = mean_backoff_series(spec, pc, k)?;
    let th = match k {
        RetryLimit::Infinite if series.diverged => T::zero(),
        RetryLimit::Infinite => (T::one() + (T::one() - pc) * series.sum).recip(),
        RetryLimit::Finite(kk) => {
            // sum_{k<=K} pc^k
            let attempts = if pc == T::zero() {
                T::one()
            } else {
                (T::one() - pc.powi(kk as i32 + 1)) / (T::one() - pc)
            };
            attempts / (attempts + series.sum)
        }
    };
    Ok((th, series))
}

fn evaluate<T: Real>(spec: &BackoffSpec<T>, n: u64, k: RetryLimit, pc: T) -> Result<Eval<T>> {
    let (th, series) = theta(spec, pc, k)?;
    let psi = T::one() - pow_one_minus(th, n - 1);
    Ok(Eval {
        h: pc - psi,
        theta: th,
        terms: series.terms,
        lower_bound: series.budget_exhausted,
    })
}

/// Solves `pc = 1 - (1 - Theta(pc))^(n-1)` by bisection on `[0, 1 - 1e-9]`.
///
/// `h(pc) = pc - Psi(pc)` is strictly increasing for non-decreasing `g`, so
/// the root is unique. A diverging window series maps to `Theta = 0`.
pub fn solve<T: Real>(
    spec: &BackoffSpec<T>,
    n: u64,
    retry_limit: RetryLimit,
    phy: &PhyProfile<T>,
) -> Result<FixedPointSolution<T>> {
    if n == 0 {
        return Err(invalid("n", "network size must be at least 1"));
    }
    let tol = T::tol(RESIDUAL_TOL);
    let mut lo = T::zero();
    let mut hi = T::lit(PC_UPPER).min(T::one() - T::epsilon());
    let at_lo = evaluate(spec, n, retry_limit, lo)?;

    let finish = |pc: T, e: Eval<T>, iterations: usize, uncertain: bool| {
        let s = throughput(e.theta, n, phy);
        FixedPointSolution {
            n,
            tau: e.theta,
            pc,
            s,
            series_terms_used: e.terms,
            converged: e.h.abs() < tol && !uncertain && !e.lower_bound,
            residual: e.h,
            iterations,
        }
    };
    if at_lo.h >= T::zero() {
        return Ok(finish(lo, at_lo, 0, false));
    }
    let at_hi = evaluate(spec, n, retry_limit, hi)?;
    if at_hi.h < T::zero() && !at_hi.lower_bound {
        return Err(Error::NotBracketed {
            h_lo: at_lo.h.as_f64(),
            h_hi: at_hi.h.as_f64(),
        });
    }

    let mut uncertain = false;
    let mut best = (lo, at_lo);
    for it in 1..=MAX_BISECTION_STEPS {
        let mid = (lo + hi) / T::lit(2.0);
        if mid <= lo || mid >= hi {
            return Ok(finish(best.0, best.1, it, uncertain));
        }
        let e = evaluate(spec, n, retry_limit, mid)?;
        if e.h.abs() < tol && !e.lower_bound {
            return Ok(finish(mid, e, it, uncertain));
        }
        if e.h > T::zero() {
            hi = mid;
        } else {
            // a lower-bound h <= 0 does not prove the root lies above
            uncertain |= e.lower_bound;
            lo = mid;
        }
        if e.h.abs() <= best.1.h.abs() {
            best = (mid, e);
        }
    }
    Ok(finish(best.0, best.1, MAX_BISECTION_STEPS, uncertain))
}

/// Fraction of airtime carrying successful transmissions.
pub fn throughput<T: Real>(tau: T, n: u64, phy: &PhyProfile<T>) -> T {
    let p = slot_probabilities(tau, n);
    let busy = p.p_succ * phy.t_succ;
    let total = p.p_idle * phy.t_idle + busy + p.p_coll * phy.t_coll;
    if total > T::zero() {
        (busy / total).min(T::one())
    } else {
        T::zero()
    }
}

impl<T: Real> FixedPointSolution<T> {
    /// Throughput of this solution under another PHY profile.
    pub fn throughput(&self, phy: &PhyProfile<T>) -> T {
        throughput(self.tau, self.n, phy)
    }
}

/// Large-network behaviour of a backoff function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Asymptote<T> {
    /// `lim_{N -> inf} pc`.
    pub limit: T,
    /// Non-zero asymptotic throughput.
    pub stable: bool,
    /// `ln(1/(1-pc)) (1-pc)` at the limit, assuming equal slot lengths.
    pub throughput: T,
}

/// Asymptotic throughput `-(1-p) ln(1-p)` for equal slot lengths.
pub fn asymptotic_throughput<T: Real>(pc: T) -> T {
    let q = T::one() - pc;
    if q <= T::zero() {
        T::zero()
    } else {
        -q * q.ln()
    }
}

/// `pc -> 1/gamma` (stable) for exponential-or-faster growth, `pc -> 1`
/// (unstable) otherwise.
pub fn asymptotic_pc<T: Real>(spec: &BackoffSpec<T>) -> Result<Asymptote<T>> {
    if let Err(e @ Error::Oscillating { .. }) = spec.gamma_limit() {
        return Err(Error::ClassificationUnavailable(e.to_string()));
    }
    let limit = match spec.growth_class()? {
        GrowthClass::AtLeastExponential { gamma } => gamma.recip(),
        GrowthClass::SubExponential => T::one(),
    };
    Ok(Asymptote {
        limit,
        stable: limit < T::one(),
        throughput: asymptotic_throughput(limit),
    })
}

/// Independent solves over several network sizes, order preserved.
pub fn sweep<T: Real>(
    spec: &BackoffSpec<T>,
    n_values: &[u64],
    retry_limit: RetryLimit,
    phy: &PhyProfile<T>,
) -> Vec<Result<FixedPointSolution<T>>> {
    n_values
        .par_iter()
        .map(|&n| solve(spec, n, retry_limit, phy))
        .collect()
}
