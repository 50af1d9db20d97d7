//! Independent oracles for the countdown distribution and its moments.

use backoff_tail::moments::{
    countdown_moments, lambda_pmf, lerch, lerch_gamma_approx, second_moment_bounds, MomentValue,
};
use backoff_tail::BackoffSpec;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Draws `Λ` directly: a geometric number of collisions, then one uniform
/// counter per stage on the integer window.
fn sample_lambda(spec: &BackoffSpec<f64>, pc: f64, rng: &mut impl Rng) -> u64 {
    let mut total = 0;
    let mut k = 0;
    loop {
        let w = (spec.window(k).unwrap().analytic - 1e-9).ceil() as u64;
        total += rng.random_range(0..w);
        if rng.random::<f64>() >= pc {
            return total;
        }
        k += 1;
    }
}

fn chi_square_pvalue(spec: &BackoffSpec<f64>, pc: f64, n_max: usize, draws: usize, seed: u64) -> f64 {
    let pmf = lambda_pmf(spec, pc, n_max).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut counts = vec![0u64; n_max + 1];
    let mut beyond = 0u64;
    for _ in 0..draws {
        match counts.get_mut(sample_lambda(spec, pc, &mut rng) as usize) {
            Some(c) => *c += 1,
            None => beyond += 1,
        }
    }
    let total = draws as f64;
    let (mut stat, mut bins) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (beyond as f64, 0.0);
    for (n, &p) in pmf.p.iter().enumerate() {
        let expected = p * total;
        if expected >= 20.0 {
            stat += (counts[n] as f64 - expected).powi(2) / expected;
            bins += 1;
        } else {
            pooled_obs += counts[n] as f64;
            pooled_exp += expected;
        }
    }
    pooled_exp += pmf.truncation_mass.max(0.0) * total;
    if pooled_exp >= 20.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        bins += 1;
    }
    let dist = ChiSquared::new((bins - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn monte_carlo_matches_pmf_chi_square() {
    let cases = [
        (BackoffSpec::polynomial(1.0, 16).unwrap(), 0.5, 4096),
        (BackoffSpec::exponential(2.0, 16).unwrap(), 0.3, 4096),
        (BackoffSpec::sub_exponential(4.0, 0.7, 16).unwrap(), 0.4, 4096),
    ];
    for (i, (spec, pc, n_max)) in cases.iter().enumerate() {
        let p = chi_square_pvalue(spec, *pc, *n_max, 1_000_000, 40 + i as u64);
        assert!(p > 0.01, "{} pc={pc}: p-value {p}", spec.family_tag());
    }
}

#[test]
fn pmf_mean_matches_countdown_mean() {
    let cases = [
        (BackoffSpec::polynomial(0.5, 16).unwrap(), 0.5f64),
        (BackoffSpec::polynomial(1.0, 16).unwrap(), 0.5),
        (BackoffSpec::polynomial(3.0, 16).unwrap(), 0.3),
        (BackoffSpec::exponential(2.0, 16).unwrap(), 0.2),
        (BackoffSpec::sub_exponential(4.0, 0.7, 32).unwrap(), 0.3),
    ];
    for (spec, pc) in cases {
        let mut n_max = 4096;
        let pmf = loop {
            let pmf = lambda_pmf(&spec, pc, n_max).unwrap();
            if pmf.truncation_mass < 1e-6 {
                break pmf;
            }
            n_max *= 4;
        };
        let analytic = countdown_moments(&spec, pc).unwrap().mean.finite().unwrap();
        let rel = (pmf.mean() - analytic).abs() / analytic;
        assert!(rel < 0.01, "{} pc={pc}: {} vs {analytic}", spec.family_tag(), pmf.mean());
    }
}

#[test]
fn second_moment_inside_sandwich() {
    let cases = [
        (BackoffSpec::exponential(2.0, 16).unwrap(), 0.2),
        (BackoffSpec::exponential(1.5, 8).unwrap(), 0.4),
        (BackoffSpec::polynomial(3.0, 16).unwrap(), 0.6),
        (BackoffSpec::polynomial(0.5, 16).unwrap(), 0.9),
        (BackoffSpec::sub_exponential(4.0, 0.7, 16).unwrap(), 0.5),
    ];
    for (spec, pc) in cases {
        let m2 = countdown_moments(&spec, pc).unwrap().second_moment.finite().unwrap();
        let MomentValue::Finite((lo, hi)) = second_moment_bounds(&spec, pc).unwrap() else {
            panic!("bounds diverged for {}", spec.family_tag());
        };
        assert!(lo <= m2 * (1.0 + 1e-12) && m2 <= hi * (1.0 + 1e-12), "{lo} <= {m2} <= {hi}");
    }
    let eb = BackoffSpec::exponential(2.0, 16).unwrap();
    assert!(second_moment_bounds(&eb, 0.3).unwrap().is_divergent());
}

#[test]
fn lerch_gamma_approximation_close() {
    let direct: f64 = lerch(0.25, -3.0, 0.0, 1e-15).unwrap();
    let approx = lerch_gamma_approx(0.25, -3.0, 0.0);
    assert!(((approx - direct) / direct).abs() < 0.15, "{direct} vs {approx}");
    // the approximation improves as z approaches one
    let d: f64 = lerch(0.99, -3.0, 0.0, 1e-15).unwrap();
    let a = lerch_gamma_approx(0.99, -3.0, 0.0);
    assert!(((a - d) / d).abs() < 0.01);
}

#[test]
fn f32_moments_track_f64() {
    let s64 = BackoffSpec::polynomial(2.0, 16).unwrap();
    let s32 = BackoffSpec::<f32>::polynomial(2.0, 16).unwrap();
    let m64 = countdown_moments(&s64, 0.4).unwrap().mean.finite().unwrap();
    let m32 = countdown_moments(&s32, 0.4).unwrap().mean.finite().unwrap();
    assert!(((m32 as f64 - m64) / m64).abs() < 1e-4);
}
