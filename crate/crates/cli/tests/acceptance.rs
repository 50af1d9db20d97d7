//! Reproduction criteria, one PASS/FAIL line each.
//!
//! Every criterion runs from a named preset. Lines go straight to the
//! process stdout so they show without `--nocapture`.

use std::io::Write;
use std::thread;

use backoff_tail::moments::{
    countdown_moments, lambda_pmf, lerch, lerch_gamma_approx, second_moment_bounds, MomentValue,
};
use backoff_tail::sim::run;
use backoff_tail::tailstats::{fairness, loglog_slope, variance_growth, DEFAULT_WINDOWS};
use backoff_tail::{solve, sweep, BackoffSpec};
use backoff_tail_cli::commands::{run_sims, STAGE_MIN_ATTEMPTS};
use backoff_tail_cli::presets;
use backoff_tail_cli::Scenario;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn preset(name: &str) -> Scenario {
    presets::get(name).expect("preset exists")
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn model_vs_simulation() -> Verdict {
    let mut worst = (0.0f64, String::new());
    for name in ["fig3-eb", "fig3-seb", "fig3-pb"] {
        for n in [5u64, 10, 20, 50] {
            let scn = Scenario { n, ..preset(name) };
            let sol = solve(&scn.spec, n, scn.retry_limit, &scn.phy).map_err(|e| e.to_string())?;
            let sim = run(&scn.sim_config().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let gap = (sol.pc - sim.pc_overall).abs();
            if gap >= worst.0 {
                worst = (gap, format!("{name} N={n}: model {:.4} sim {:.4}", sol.pc, sim.pc_overall));
            }
        }
    }
    check(worst.0 < 0.02, format!("max |pc gap| {:.4} < 0.02 ({})", worst.0, worst.1))
}

fn per_stage_decoupling() -> Verdict {
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for name in ["fig3-eb", "fig3-seb", "fig3-pb"] {
        for n in [10u64, 50] {
            let scn = Scenario { n, ..preset(name) };
            let sim = run(&scn.sim_config().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let var = sim
                .stage_pc_variance(STAGE_MIN_ATTEMPTS)
                .ok_or_else(|| format!("{name} N={n}: fewer than two stages with {STAGE_MIN_ATTEMPTS} attempts"))?;
            worst = worst.max(var);
            notes.push(format!("{name}/{n}={var:.2e}"));
        }
    }
    check(worst < 0.01, format!("max per-stage pc variance {worst:.2e} < 0.01 [{}]", notes.join(" ")))
}

fn eb_asymptote() -> Verdict {
    let scn = preset("asymptote-eb");
    let ns = [2u64, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, scn.n];
    let sols = sweep(&scn.spec, &ns, scn.retry_limit, &scn.phy)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let increasing = sols.windows(2).all(|w| w[1].pc > w[0].pc);
    let last = sols.last().unwrap();
    let gap = (last.pc - 0.5).abs();
    check(
        increasing && gap < 0.02 && last.converged,
        format!("pc(N={}) = {:.4}, |pc - 1/r| = {gap:.4} < 0.02, strictly increasing: {increasing}", last.n, last.pc),
    )
}

fn power_law_slope() -> Verdict {
    let scn = preset("fig5-eb");
    let sim = run(&scn.sim_config().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let delays = sim.delay_samples_us();
    let pc = sim.pc_overall;
    let fit = loglog_slope(&delays, 0.1).map_err(|e| e.to_string())?;
    let theory = -pc.ln() / 2f64.ln();
    let rel = (fit.alpha_hat - theory).abs() / theory;
    check(
        (0.3..=0.5).contains(&pc) && delays.len() >= 100_000 && rel < 0.15,
        format!(
            "pc {pc:.3}, {} samples, alpha_hat {:.3} vs {theory:.3} (rel err {:.1}% < 15%)",
            delays.len(),
            fit.alpha_hat,
            rel * 100.0
        ),
    )
}

fn moment_dichotomy() -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, expect_flag) in [("fig5-eb", true), ("fig5-seb", false), ("fig5-pb", false)] {
        let scn = preset(name);
        let runs = run_sims(&scn).map_err(|e| e.to_string())?;
        let mut flags = Vec::new();
        for r in &runs {
            let g = variance_growth(&r.delay_samples_us(), DEFAULT_WINDOWS).map_err(|e| e.to_string())?;
            flags.push(g.divergence_suspected);
            if expect_flag && r.pc_overall <= 0.25 {
                ok = false;
            }
        }
        let s = runs.iter().map(|r| r.throughput).sum::<f64>() / runs.len() as f64;
        ok &= runs.len() == 3 && flags.iter().all(|&f| f == expect_flag);
        lines.push(format!("{name} S={s:.3} flags={flags:?}"));
    }
    check(ok, lines.join("; "))
}

fn retry_limit_loss() -> Verdict {
    let loss = |name: &str| -> Result<f64, String> {
        let scn = preset(name);
        Ok(run(&scn.sim_config().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?.loss_rate)
    };
    let beb = loss("fig6")?;
    let pb = loss("fig6-pb")?;
    check(
        (beb - 0.10).abs() <= 0.03 && pb < beb,
        format!("loss BEB {beb:.4} in 0.10 +- 0.03, PB(3) {pb:.4} < BEB"),
    )
}

fn throughput_ordering() -> Verdict {
    let ns = [100u64, 300, 600, 900, 1200];
    let solve_all = |name: &str| -> Result<Vec<f64>, String> {
        let scn = preset(name);
        sweep(&scn.spec, &ns, scn.retry_limit, &scn.phy)
            .into_iter()
            .map(|r| match r {
                Ok(s) if s.converged => Ok(s.s),
                Ok(s) => Err(format!("{name} N={} did not converge", s.n)),
                Err(e) => Err(e.to_string()),
            })
            .collect()
    };
    let pb = solve_all("fig8-pb5")?;
    let beb = solve_all("fig8-beb")?;
    let above = pb.iter().zip(&beb).all(|(p, b)| p > b);
    let pb_falls = pb.windows(2).all(|w| w[1] < w[0]);
    // BEB levels off: the last three sizes agree to within 0.01 and stay positive
    let tail = &beb[2..];
    let spread = tail.iter().cloned().fold(f64::MIN, f64::max) - tail.iter().cloned().fold(f64::MAX, f64::min);
    let beb_flat = spread < 0.01 && beb.iter().all(|&s| s > 0.5);
    check(
        above && pb_falls && beb_flat,
        format!(
            "S(PB5) {:?} > S(BEB) {:?}; PB decreasing {pb_falls}; BEB spread over N>=600 {spread:.4}",
            pb.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>(),
            beb.iter().map(|s| format!("{s:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn light_tail_pmf() -> Verdict {
    let r2 = |name: &str| -> Result<f64, String> {
        let scn = preset(name);
        let pmf = lambda_pmf(&scn.spec, 0.5, 2048).map_err(|e| e.to_string())?;
        Ok(pmf.lighttail_fit().map_err(|e| e.to_string())?.r_squared)
    };
    let pb: Vec<f64> = ["fig10-pb05", "fig10-pb08", "fig10-pb10"]
        .iter()
        .map(|n| r2(n))
        .collect::<Result<_, _>>()?;
    let eb = r2("fig10-eb")?;
    check(
        pb.iter().all(|&r| r > 0.99) && eb < 0.99,
        format!("R2 PB(0.5,0.8,1.0) = {:.4}, {:.4}, {:.4} > 0.99; EB {eb:.4} < 0.99", pb[0], pb[1], pb[2]),
    )
}

fn fairness_ordering() -> Verdict {
    let mut means = Vec::new();
    let mut starved = Vec::new();
    for name in ["fig7-eb", "fig7-seb", "fig7-pb"] {
        let scn = preset(name);
        let runs = run_sims(&scn).map_err(|e| e.to_string())?;
        let (mut mean, mut frac) = (0.0, 0.0);
        for r in &runs {
            let f = fairness(&r.per_node_successes, 0.1).map_err(|e| e.to_string())?;
            mean += f.mean / runs.len() as f64;
            frac += f.starved_fraction / runs.len() as f64;
        }
        means.push(mean);
        starved.push(frac);
    }
    let hi = means.iter().cloned().fold(f64::MIN, f64::max);
    let lo = means.iter().cloned().fold(f64::MAX, f64::min);
    let spread = (hi - lo) / lo;
    check(
        spread < 0.05 && starved[0] > starved[1] && starved[1] > starved[2] && starved[2] == 0.0,
        format!(
            "mean successes EB/SEB/PB {:.1}/{:.1}/{:.1} (spread {:.2}% < 5%); starved {:.3} > {:.3} > {:.3} = 0",
            means[0],
            means[1],
            means[2],
            spread * 100.0,
            starved[0],
            starved[1],
            starved[2]
        ),
    )
}

/// Draws the countdown total directly from its definition.
fn sample_countdown(spec: &BackoffSpec<f64>, pc: f64, rng: &mut impl Rng) -> usize {
    let mut total = 0;
    let mut stage = 0;
    loop {
        let width = (spec.window(stage).unwrap().analytic - 1e-9).ceil() as usize;
        total += rng.random_range(0..width);
        if rng.random::<f64>() >= pc {
            return total;
        }
        stage += 1;
    }
}

fn oracle_identities() -> Verdict {
    let scn = preset("oracles");
    let pc = 0.5;
    let e = |e: backoff_tail::Error| e.to_string();

    let pmf = lambda_pmf(&scn.spec, pc, 16_384).map_err(e)?;
    let mean = countdown_moments(&scn.spec, pc).map_err(e)?.mean.finite().ok_or("mean diverged")?;
    let mean_rel = (pmf.mean() - mean).abs() / mean;

    let mut sandwich = true;
    let eb = BackoffSpec::exponential(2.0, 16).map_err(e)?;
    for (spec, p) in [(&scn.spec, pc), (&eb, 0.2)] {
        let m2 = countdown_moments(spec, p).map_err(e)?.second_moment.finite().ok_or("E[L^2] diverged")?;
        match second_moment_bounds(spec, p).map_err(e)? {
            MomentValue::Finite((lo, hi)) => sandwich &= lo <= m2 && m2 <= hi,
            MomentValue::Divergent => sandwich = false,
        }
    }

    let direct: f64 = lerch(0.25, -3.0, 0.0, 1e-15).map_err(e)?;
    let approx = lerch_gamma_approx(0.25, -3.0, 0.0);
    let lerch_rel = (approx - direct).abs() / direct;

    let draws = 1_000_000;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(scn.seed);
    let mut counts = vec![0u64; pmf.p.len()];
    let mut beyond = 0u64;
    for _ in 0..draws {
        match counts.get_mut(sample_countdown(&scn.spec, pc, &mut rng)) {
            Some(c) => *c += 1,
            None => beyond += 1,
        }
    }
    let (mut stat, mut bins) = (0.0, 0usize);
    let (mut rest_obs, mut rest_exp) = (beyond as f64, pmf.truncation_mass.max(0.0) * draws as f64);
    for (c, &p) in counts.iter().zip(&pmf.p) {
        let expected = p * draws as f64;
        if expected >= 20.0 {
            stat += (*c as f64 - expected).powi(2) / expected;
            bins += 1;
        } else {
            rest_obs += *c as f64;
            rest_exp += expected;
        }
    }
    if rest_exp >= 20.0 {
        stat += (rest_obs - rest_exp).powi(2) / rest_exp;
        bins += 1;
    }
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat);

    check(
        pmf.truncation_mass < 1e-6 && mean_rel < 0.01 && sandwich && lerch_rel < 0.15 && p_value > 0.01,
        format!(
            "pmf mean rel err {:.2e} (mass {:.1e}); sandwich {sandwich}; lerch rel err {:.3} < 0.15; chi-square p = {p_value:.3} over {bins} bins",
            mean_rel, pmf.truncation_mass, lerch_rel
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("fixed point vs simulation", model_vs_simulation),
        ("per-stage decoupling", per_stage_decoupling),
        ("EB asymptote", eb_asymptote),
        ("power-law slope", power_law_slope),
        ("moment dichotomy", moment_dichotomy),
        ("retry-limit loss", retry_limit_loss),
        ("throughput ordering", throughput_ordering),
        ("light-tail pmf", light_tail_pmf),
        ("fairness ordering", fairness_ordering),
        ("oracle identities", oracle_identities),
    ];
    let verdicts: Vec<Verdict> = thread::scope(|s| {
        let handles: Vec<_> = criteria.iter().map(|(_, f)| s.spawn(f)).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err("panicked".into())))
            .collect()
    });
    let mut out = std::io::stdout().lock();
    let mut failed = Vec::new();
    for (i, ((label, _), verdict)) in criteria.iter().zip(&verdicts).enumerate() {
        let (tag, detail) = match verdict {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed.push(i + 1);
                ("FAIL", d)
            }
        };
        writeln!(out, "{tag} {:>2} {label}: {detail}", i + 1).unwrap();
    }
    out.flush().unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
