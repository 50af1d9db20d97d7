//! Moments and distribution of the total backoff countdown `Λ = Σ_{k≤J} B_k`,
//! where `J` is the number of collisions before success (geometric with
//! parameter `pc`) and `B_k` is uniform on `[0, W_k - 1]`.
//!
//! Moment finiteness follows the ratio criterion `pc·γⁿ < 1`; the tail
//! taxonomy is power law (exponential-or-faster growth), heavy but not power
//! law (sub-exponential and super-linear polynomial) and light (linear or
//! sub-linear polynomial).

use std::fmt;

use crate::backoff::{BackoffSpec, Family, GrowthClass};
use crate::error::{invalid, Error, Result};
use crate::fixedpoint::{
    mean_backoff_series, slot_probabilities, FixedPointSolution, PhyProfile, RetryLimit,
    MAX_SERIES_TERMS, SERIES_MIN_TERMS, SERIES_REL_TOL,
};
use crate::scalar::{log_add_exp, ols, Real};

/// Stages whose weight `pc^j` falls below this are left out of the PMF.
pub const PMF_STAGE_CUTOFF: f64 = 1e-12;
/// PMF entries at or below this are ignored by the light-tail fit.
pub const FIT_FLOOR: f64 = 1e-30;
/// Minimum number of usable points for the light-tail fit.
pub const FIT_MIN_POINTS: usize = 64;
/// Captured mass below `1 - UNDERCAPTURE_TOL` flags an under-resolved PMF.
pub const UNDERCAPTURE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentValue<T> {
    Finite(T),
    Divergent,
}

impl<T: Copy> MomentValue<T> {
    pub fn finite(&self) -> Option<T> {
        match *self {
            MomentValue::Finite(v) => Some(v),
            MomentValue::Divergent => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, MomentValue::Divergent)
    }
}

/// Finiteness of `E[Λⁿ]` (equivalently of `E[Xⁿ]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentReport<T> {
    pub order: u32,
    pub finite: bool,
    /// `E[Λⁿ]` when finite and `order <= 2`.
    pub value: Option<T>,
    /// `pc·γⁿ`; the moment is finite iff this is below one.
    pub criterion: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailClass<T> {
    PowerLaw { alpha: T },
    HeavyNonPowerLaw,
    LightTail,
    /// Custom tables: not a power law, heavy/light split unavailable.
    NonPowerLaw,
}

impl<T> TailClass<T> {
    pub fn region(&self) -> &'static str {
        match self {
            TailClass::PowerLaw { .. } => "power-law",
            TailClass::HeavyNonPowerLaw => "heavy-non-power-law",
            TailClass::LightTail => "light-tail",
            TailClass::NonPowerLaw => "non-power-law",
        }
    }
}

impl<T: fmt::Display> fmt::Display for TailClass<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TailClass::PowerLaw { alpha } => write!(f, "power-law(alpha={alpha})"),
            other => f.write_str(other.region()),
        }
    }
}

fn check_pc<T: Real>(pc: T, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { pc >= T::zero() } else { pc > T::zero() } && pc < T::one();
    if ok {
        Ok(())
    } else {
        Err(invalid("pc", format!("must lie in {}0, 1), got {pc}", if allow_zero { "[" } else { "(" })))
    }
}

/// `γ` for moment criteria; oscillating tables have none.
fn criterion_gamma<T: Real>(spec: &BackoffSpec<T>) -> Result<T> {
    spec.gamma_limit().map_err(|e| match e {
        Error::Oscillating { .. } => Error::ClassificationUnavailable(e.to_string()),
        other => other,
    })
}

/// Decides whether `E[Λⁿ]` is finite via `pc·γⁿ < 1`.
pub fn moment_finite<T: Real>(spec: &BackoffSpec<T>, pc: T, order: u32) -> Result<MomentReport<T>> {
    check_pc(pc, false)?;
    if order == 0 {
        return Err(invalid("order", "moment order must be at least 1"));
    }
    let gamma = criterion_gamma(spec)?;
    let criterion = pc * gamma.powi(order as i32);
    let finite = criterion < T::one();
    let value = if finite && order <= 2 {
        match countdown_moments(spec, pc) {
            Ok(m) if order == 1 => m.mean.finite(),
            Ok(m) => m.second_moment.finite(),
            Err(Error::TableExhausted { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(MomentReport { order, finite, value, criterion })
}

/// Power-law slope `α = -ln pc / ln γ`, or `None` when `γ = 1`.
pub fn powerlaw_slope<T: Real>(spec: &BackoffSpec<T>, pc: T) -> Result<Option<T>> {
    check_pc(pc, false)?;
    Ok(match spec.growth_class()? {
        GrowthClass::AtLeastExponential { gamma } => Some(-pc.ln() / gamma.ln()),
        GrowthClass::SubExponential => None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountdownMoments<T> {
    pub mean: MomentValue<T>,
    pub second_moment: MomentValue<T>,
    pub variance: MomentValue<T>,
    /// Stages summed for the second moment.
    pub terms: usize,
}

/// Per-stage log quantities of a uniform counter on `[0, W - 1]`, real `W`.
struct StageLogs<T> {
    ln_mean: T,
    ln_var: T,
    ln_second: T,
}

fn stage_logs<T: Real>(spec: &BackoffSpec<T>, k: usize) -> Result<StageLogs<T>> {
    let ln_w = spec.ln_window(k)?;
    // ln(W - 1), ln(W + 1), ln(2W - 1)
    let ln_wm1 = ln_w + (-(-ln_w).exp()).ln_1p();
    let ln_wp1 = ln_w + (-ln_w).exp().ln_1p();
    let ln_2wm1 = T::LN_2() + ln_w + (-(-ln_w).exp() / T::lit(2.0)).ln_1p();
    Ok(StageLogs {
        ln_mean: ln_wm1 - T::LN_2(),
        ln_var: ln_wm1 + ln_wp1 - T::lit(12.0).ln(),
        ln_second: ln_wm1 + ln_2wm1 - T::lit(6.0).ln(),
    })
}

/// Running per-stage sums up to stage `j`, in log space.
struct Prefix<T> {
    j: usize,
    ln_mean_sum: T,
    ln_var_sum: T,
    ln_second_sum: T,
}

/// `(1 - pc) Σ_j pc^j exp(bracket(prefix_j))`, cut like the window series.
fn weighted_stage_series<T: Real>(
    spec: &BackoffSpec<T>,
    pc: T,
    bracket: impl Fn(&Prefix<T>) -> T,
) -> Result<(T, usize, bool)> {
    let ln_pc = if pc == T::zero() { T::neg_infinity() } else { pc.ln() };
    let rel_tol = T::lit(SERIES_REL_TOL);
    let mut pre = Prefix {
        j: 0,
        ln_mean_sum: T::neg_infinity(),
        ln_var_sum: T::neg_infinity(),
        ln_second_sum: T::neg_infinity(),
    };
    let mut sum = T::zero();
    loop {
        let j = pre.j;
        if let Some(len) = spec.table_len() {
            if j >= len {
                return Err(Error::TableExhausted { needed: j, last: len - 1 });
            }
        }
        let s = stage_logs(spec, j)?;
        pre.ln_mean_sum = log_add_exp(pre.ln_mean_sum, s.ln_mean);
        pre.ln_var_sum = log_add_exp(pre.ln_var_sum, s.ln_var);
        pre.ln_second_sum = log_add_exp(pre.ln_second_sum, s.ln_second);
        let weight = if j == 0 { T::zero() } else { T::from_count(j) * ln_pc };
        let term = (weight + bracket(&pre)).exp();
        sum = sum + term;
        pre.j += 1;
        if pc == T::zero() {
            break;
        }
        if pre.j > SERIES_MIN_TERMS && term < rel_tol * sum {
            break;
        }
        if pre.j >= MAX_SERIES_TERMS || !sum.is_finite() {
            return Ok(((T::one() - pc) * sum, pre.j, true));
        }
    }
    Ok(((T::one() - pc) * sum, pre.j, false))
}

/// `E[Λ]`, `E[Λ²]` and `Var[Λ]` with real-valued windows.
///
/// Divergence is decided by `pc·γⁿ < 1` where a ratio limit exists;
/// otherwise by the series' own divergence detection.
pub fn countdown_moments<T: Real>(spec: &BackoffSpec<T>, pc: T) -> Result<CountdownMoments<T>> {
    check_pc(pc, true)?;
    let gamma = match spec.gamma_limit() {
        Ok(g) => Some(g),
        Err(Error::Oscillating { .. }) | Err(Error::InsufficientData { .. }) => None,
        Err(e) => return Err(e),
    };
    let diverges = |order: i32| gamma.map(|g| pc * g.powi(order) >= T::one());

    let mean = if diverges(1) == Some(true) {
        MomentValue::Divergent
    } else {
        let series = mean_backoff_series(spec, pc, RetryLimit::Infinite)?;
        if series.diverged || series.budget_exhausted {
            MomentValue::Divergent
        } else {
            MomentValue::Finite(series.sum)
        }
    };
    let (second_moment, terms) = if mean.is_divergent() || diverges(2) == Some(true) {
        (MomentValue::Divergent, 0)
    } else {
        let (v, terms, cut) = weighted_stage_series(spec, pc, |p| {
            log_add_exp(p.ln_var_sum, T::lit(2.0) * p.ln_mean_sum)
        })?;
        (if cut { MomentValue::Divergent } else { MomentValue::Finite(v) }, terms)
    };
    let variance = match (mean, second_moment) {
        (MomentValue::Finite(m), MomentValue::Finite(s)) => MomentValue::Finite((s - m * m).max(T::zero())),
        _ => MomentValue::Divergent,
    };
    Ok(CountdownMoments { mean, second_moment, variance, terms })
}

/// Lower and upper bounds on `E[Λ²]` from Jensen's and Hölder's inequalities:
/// `(1-pc) Σ_j pc^j (Σ_{k≤j} E[B_k])²` and
/// `(1-pc) Σ_j pc^j (j+1) Σ_{k≤j} E[B_k²]`.
pub fn second_moment_bounds<T: Real>(spec: &BackoffSpec<T>, pc: T) -> Result<MomentValue<(T, T)>> {
    check_pc(pc, true)?;
    if let Ok(g) = spec.gamma_limit() {
        if pc * g * g >= T::one() {
            return Ok(MomentValue::Divergent);
        }
    }
    let (lower, _, cut_lo) = weighted_stage_series(spec, pc, |p| T::lit(2.0) * p.ln_mean_sum)?;
    let (upper, _, cut_hi) = weighted_stage_series(spec, pc, |p| {
        T::from_count(p.j + 1).ln() + p.ln_second_sum
    })?;
    Ok(if cut_lo || cut_hi {
        MomentValue::Divergent
    } else {
        MomentValue::Finite((lower, upper))
    })
}

/// Mean medium access delay in µs:
/// `E[X] = E[Λ]·E[L] + pc/(1-pc)·t_coll + t_succ`, where `E[L]` is the mean
/// length of a countdown slot as produced by the other `N - 1` nodes.
pub fn mean_delay<T: Real>(
    spec: &BackoffSpec<T>,
    sol: &FixedPointSolution<T>,
    phy: &PhyProfile<T>,
) -> Result<MomentValue<T>> {
    let m = countdown_moments(spec, sol.pc)?;
    let Some(mean_lambda) = m.mean.finite() else {
        return Ok(MomentValue::Divergent);
    };
    let others = slot_probabilities(sol.tau, sol.n - 1);
    let mean_slot = others.p_idle * phy.t_idle + others.p_succ * phy.t_succ + others.p_coll * phy.t_coll;
    let collisions = sol.pc / (T::one() - sol.pc);
    Ok(MomentValue::Finite(mean_lambda * mean_slot + collisions * phy.t_coll + phy.t_succ))
}

/// PMF of `Λ` on `0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountdownPmf<T> {
    pub p: Vec<T>,
    pub pc: T,
    pub spec: BackoffSpec<T>,
    /// `1 - Σ p[n]`: mass beyond `n_max` plus the stages left out.
    pub truncation_mass: T,
    pub stages_used: usize,
    /// Less than `1 - 1e-3` of the mass was captured.
    pub undercaptured: bool,
}

impl<T: Real> CountdownPmf<T> {
    pub fn n_max(&self) -> usize {
        self.p.len() - 1
    }

    pub fn mean(&self) -> T {
        self.p
            .iter()
            .enumerate()
            .map(|(n, &p)| T::from_count(n) * p)
            .sum()
    }

    pub fn lighttail_fit(&self) -> Result<LightTailFit<T>> {
        lighttail_fit(&self.p)
    }
}

/// `acc ∗ Uniform{0..width-1}` truncated to `acc.len()` entries.
///
/// Window sums are assembled from per-block suffix and prefix sums so that
/// only additions of non-negative terms occur; a running sum with
/// subtraction leaves cancellation residue far above the deep tail.
fn convolve_uniform<T: Real>(acc: &[T], width: T, out: &mut Vec<T>, suffix: &mut Vec<T>) {
    let len = acc.len();
    let span = width.to_usize().unwrap_or(usize::MAX).min(len).max(1);
    let scale = width.recip();
    suffix.clear();
    suffix.resize(len, T::zero());
    for block in (0..len).step_by(span) {
        let stop = (block + span).min(len);
        let mut run = T::zero();
        for i in (block..stop).rev() {
            run = run + acc[i];
            suffix[i] = run;
        }
    }
    out.clear();
    let mut prefix = T::zero();
    for (n, &a) in acc.iter().enumerate() {
        if n % span == 0 {
            prefix = T::zero();
        }
        prefix = prefix + a;
        let lo = (n + 1).saturating_sub(span);
        let window = if lo % span == 0 { prefix } else { suffix[lo] + prefix };
        out.push(window * scale);
    }
}

/// PMF of `Λ` from its stage decomposition:
/// `p[n] = (1-pc) Σ_j pc^j (U_0 ∗ … ∗ U_j)[n]`, with `U_k` uniform on
/// `{0, …, ⌈W_k⌉ - 1}`. Stages with `pc^j < 1e-12` are dropped.
pub fn lambda_pmf<T: Real>(spec: &BackoffSpec<T>, pc: T, n_max: usize) -> Result<CountdownPmf<T>> {
    check_pc(pc, true)?;
    if n_max < spec.w0() as usize {
        return Err(invalid("n_max", format!("must be at least W0 = {}, got {n_max}", spec.w0())));
    }
    let cutoff = T::lit(PMF_STAGE_CUTOFF);
    let len = n_max + 1;
    let mut conv = vec![T::zero(); len];
    conv[0] = T::one();
    let mut scratch = Vec::with_capacity(len);
    let mut suffix = Vec::with_capacity(len);
    let mut p = vec![T::zero(); len];
    let mut weight = T::one();
    let mut j = 0usize;
    while weight >= cutoff {
        if let Some(tl) = spec.table_len() {
            if j >= tl {
                return Err(Error::TableExhausted { needed: j, last: tl - 1 });
            }
        }
        // ceil with a little slack so that 16.000000000001 stays 16
        let width = (spec.window(j)?.analytic - T::lit(1e-9)).ceil().max(T::one());
        convolve_uniform(&conv, width, &mut scratch, &mut suffix);
        std::mem::swap(&mut conv, &mut scratch);
        let w = (T::one() - pc) * weight;
        for (pn, &c) in p.iter_mut().zip(&conv) {
            *pn = *pn + w * c;
        }
        j += 1;
        weight = weight * pc;
    }
    let captured: T = p.iter().copied().sum();
    let truncation_mass = T::one() - captured;
    Ok(CountdownPmf {
        p,
        pc,
        spec: spec.clone(),
        truncation_mass,
        stages_used: j,
        undercaptured: captured < T::one() - T::lit(UNDERCAPTURE_TOL),
    })
}

/// Exponential-tail fit `ln p[n] ≈ c - λ₀ n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightTailFit<T> {
    pub lambda0: T,
    pub r_squared: T,
    pub points: usize,
}

/// Least-squares fit of `ln p[n]` against `n` over the upper half of the
/// support, skipping entries at or below `1e-30`.
pub fn lighttail_fit<T: Real>(p: &[T]) -> Result<LightTailFit<T>> {
    if p.is_empty() {
        return Err(Error::FitUnavailable("empty pmf".into()));
    }
    let n_max = p.len() - 1;
    let floor = T::lit(FIT_FLOOR);
    let (xs, ys): (Vec<T>, Vec<T>) = (n_max.div_ceil(2)..=n_max)
        .filter(|&n| p[n] > floor)
        .map(|n| (T::from_count(n), p[n].ln()))
        .unzip();
    if xs.len() < FIT_MIN_POINTS {
        return Err(Error::FitUnavailable(format!(
            "{} usable points in the upper half, {FIT_MIN_POINTS} needed",
            xs.len()
        )));
    }
    let (slope, _, r2) = ols(&xs, &ys);
    Ok(LightTailFit {
        lambda0: -slope,
        r_squared: r2,
        points: xs.len(),
    })
}

/// Largest number of terms [`lerch`] will sum.
pub const LERCH_MAX_TERMS: usize = 10_000_000;

/// Lerch transcendent `Φ(z, s, v) = Σ_{i≥0} zⁱ (v + i)^(-s)` by direct
/// summation, for `0 < z < 1`. With `v = 0` and `s < 0` the `i = 0` term is 0.
pub fn lerch<T: Real>(z: T, s: T, v: T, tol: T) -> Result<T> {
    if !(z > T::zero() && z < T::one()) {
        return Err(Error::Domain(format!("lerch needs 0 < z < 1, got {z}")));
    }
    if v < T::zero() {
        return Err(Error::Domain(format!("lerch needs v >= 0, got {v}")));
    }
    if v == T::zero() && s > T::zero() {
        return Err(Error::Domain("lerch term i = 0 is infinite for v = 0, s > 0".into()));
    }
    let ln_z = z.ln();
    // terms grow until i ≈ -s / ln(1/z) - v
    let peak = (s / ln_z - v).max(T::zero()).ceil().to_usize().unwrap_or(0) + 1;
    let mut sum = T::zero();
    for i in 0..LERCH_MAX_TERMS {
        let base = v + T::from_count(i);
        let term = if base == T::zero() {
            if s == T::zero() { T::one() } else { T::zero() }
        } else {
            (T::from_count(i) * ln_z - s * base.ln()).exp()
        };
        sum = sum + term;
        if i >= peak && term <= tol * sum {
            return Ok(sum);
        }
    }
    Err(Error::Domain(format!("lerch did not converge in {LERCH_MAX_TERMS} terms")))
}

/// `Γ(1-s) z^(-v) (ln 1/z)^(s-1)`, the large-order approximation of `Φ(z, s, v)`.
pub fn lerch_gamma_approx<T: Real>(z: T, s: T, v: T) -> T {
    let gamma = T::lit(statrs::function::gamma::gamma((T::one() - s).as_f64()));
    gamma * z.powf(-v) * (-z.ln()).powf(s - T::one())
}

/// Lower bound on `E[Λⁿ]` for `g(k) = 1 + k^b`:
/// `(1-pc)/(bn+1) · (W0/2)ⁿ · Φ(pc, -(bn+1), 0)`.
pub fn pb_moment_lower_bound<T: Real>(b: T, w0: u32, pc: T, order: u32) -> Result<T> {
    check_pc(pc, false)?;
    let nf = T::from_u32(order).unwrap();
    let exponent = b * nf + T::one();
    let half_w = T::from_u32(w0).unwrap() / T::lit(2.0);
    let phi = lerch(pc, -exponent, T::zero(), T::tol(1e-14))?;
    Ok((T::one() - pc) / exponent * half_w.powi(order as i32) * phi)
}

/// Tail region of the medium-access delay at collision probability `pc`.
pub fn classify_tail<T: Real>(spec: &BackoffSpec<T>, pc: T) -> Result<TailClass<T>> {
    check_pc(pc, false)?;
    Ok(match spec.family() {
        Family::Exponential { r } => TailClass::PowerLaw { alpha: -pc.ln() / r.ln() },
        Family::SubExponential { .. } => TailClass::HeavyNonPowerLaw,
        Family::Polynomial { b } if *b > T::one() => TailClass::HeavyNonPowerLaw,
        Family::Polynomial { .. } => TailClass::LightTail,
        Family::Table(_) => match spec.growth_class()? {
            GrowthClass::AtLeastExponential { gamma } => TailClass::PowerLaw { alpha: -pc.ln() / gamma.ln() },
            GrowthClass::SubExponential => TailClass::NonPowerLaw,
        },
    })
}
