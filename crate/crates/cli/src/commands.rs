//! Subcommand bodies. Each returns the rendered report; dispatch and exit
//! codes live in the binary.

use std::fs;
use std::path::Path;

use backoff_tail::moments::{classify_tail, lambda_pmf, moment_finite, TailClass};
use backoff_tail::sim::ticks_to_us;
use backoff_tail::tailstats::{
    default_hill_k, fairness, hill, loglog_slope, variance_growth, DEFAULT_STARVATION_THRESHOLD,
    DEFAULT_WINDOWS,
};
use backoff_tail::{replicate, solve, sweep, Error, FixedPointSolution, RetryLimit, SimResult};
use serde_json::{json, Value};

use crate::config::Scenario;
use crate::error::CliError;
use crate::report::{cell, csv, num, object, objects_to_csv, opt_num, pretty, Format};

/// Rendered output plus whether every numerical solve converged.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub text: String,
    pub converged: bool,
}

impl Output {
    fn ok(text: String) -> Self {
        Output { text, converged: true }
    }
}

const SOLVE_HEADER: [&str; 5] = ["n", "tau", "pc", "throughput", "converged"];

pub fn solution_json(s: &FixedPointSolution<f64>) -> Value {
    object(vec![
        ("n", json!(s.n)),
        ("tau", num(s.tau)),
        ("pc", num(s.pc)),
        ("throughput", num(s.s)),
        ("converged", json!(s.converged)),
    ])
}

pub fn solve_cmd(
    scn: &Scenario,
    n: Option<u64>,
    retry_limit: Option<RetryLimit>,
    format: Format,
) -> Result<Output, CliError> {
    let n = n.unwrap_or(scn.n);
    let k = retry_limit.unwrap_or(scn.retry_limit);
    let sol = solve(&scn.spec, n, k, &scn.phy)?;
    let v = solution_json(&sol);
    let text = match format {
        Format::Json => pretty(&v),
        Format::Csv => objects_to_csv(&[v], &SOLVE_HEADER),
    };
    Ok(Output { text, converged: sol.converged })
}

/// `start:stop:step`, inclusive of `stop` when it lies on the grid.
pub fn parse_range(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("n-range: expected start:stop:step, got `{text}`"));
    let parts: Vec<u64> = text
        .split(':')
        .map(|p| p.trim().parse::<u64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if start == 0 || step == 0 || stop < start {
        return Err(CliError::Config(format!(
            "n-range: need 1 <= start <= stop and step >= 1, got `{text}`"
        )));
    }
    Ok((start..=stop).step_by(step as usize).collect())
}

pub fn sweep_cmd(
    scn: &Scenario,
    ns: &[u64],
    retry_limit: Option<RetryLimit>,
    format: Format,
) -> Result<Output, CliError> {
    let k = retry_limit.unwrap_or(scn.retry_limit);
    let sols = sweep(&scn.spec, ns, k, &scn.phy)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let converged = sols.iter().all(|s| s.converged);
    let text = match format {
        Format::Csv => csv(
            &SOLVE_HEADER[..4],
            sols.iter()
                .map(|s| vec![s.n.to_string(), cell(s.tau), cell(s.pc), cell(s.s)]),
        ),
        Format::Json => pretty(&Value::Array(sols.iter().map(solution_json).collect())),
    };
    Ok(Output { text, converged })
}

const SIM_HEADER: [&str; 17] = [
    "run",
    "seed",
    "n",
    "slots",
    "throughput",
    "pc",
    "successes",
    "collisions",
    "idle_slots",
    "dropped_packets",
    "loss_rate",
    "delay_samples",
    "mean_delay_us",
    "stage_pc_variance",
    "jain_index",
    "starved_fraction",
    "stage_cap_hits",
];

/// Minimum attempts for a stage to enter the per-stage pc variance.
pub const STAGE_MIN_ATTEMPTS: u64 = 100;

pub fn sim_summary(run: usize, r: &SimResult) -> Value {
    let fair = fairness(&r.per_node_successes, DEFAULT_STARVATION_THRESHOLD).ok();
    object(vec![
        ("run", json!(run)),
        ("seed", json!(r.seed_used)),
        ("n", json!(r.per_node_successes.len())),
        ("slots", json!(r.total_slots())),
        ("throughput", num(r.throughput)),
        ("pc", num(r.pc_overall)),
        ("successes", json!(r.successes)),
        ("collisions", json!(r.collisions)),
        ("idle_slots", json!(r.idle_slots)),
        ("dropped_packets", json!(r.dropped_packets)),
        ("loss_rate", num(r.loss_rate)),
        ("delay_samples", json!(r.delay_ticks.len())),
        ("mean_delay_us", opt_num(r.mean_delay_us())),
        ("stage_pc_variance", opt_num(r.stage_pc_variance(STAGE_MIN_ATTEMPTS))),
        ("jain_index", opt_num(fair.as_ref().map(|f| f.jain_index))),
        ("starved_fraction", opt_num(fair.as_ref().map(|f| f.starved_fraction))),
        ("stage_cap_hits", json!(r.stage_cap_hits)),
        ("rng", json!(r.rng)),
    ])
}

#[derive(Debug, Clone, Default)]
pub struct Dumps<'a> {
    pub delays: Option<&'a Path>,
    pub stages: Option<&'a Path>,
    pub nodes: Option<&'a Path>,
}

fn write_file(path: &Path, body: String) -> Result<(), CliError> {
    fs::write(path, body).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn run_sims(scn: &Scenario) -> Result<Vec<SimResult>, CliError> {
    let cfg = scn.sim_config()?;
    Ok(replicate(&cfg, scn.runs, 1)?)
}

/// Runs the scenario; CSV dumps describe the first run.
pub fn simulate_cmd(scn: &Scenario, dumps: &Dumps<'_>, format: Format) -> Result<Output, CliError> {
    let results = run_sims(scn)?;
    let first = &results[0];
    if let Some(path) = dumps.delays {
        let body: String = first.delay_ticks.iter().map(|&t| format!("{}\n", ticks_to_us(t))).collect();
        write_file(path, body)?;
    }
    if let Some(path) = dumps.stages {
        let rows = first.stages.iter().map(|s| {
            vec![
                s.stage.to_string(),
                s.attempts.to_string(),
                s.collisions.to_string(),
                s.pc().map(cell).unwrap_or_default(),
            ]
        });
        write_file(path, csv(&["stage", "attempts", "collisions", "pc"], rows))?;
    }
    if let Some(path) = dumps.nodes {
        let rows = first
            .per_node_successes
            .iter()
            .enumerate()
            .map(|(i, s)| vec![i.to_string(), s.to_string()]);
        write_file(path, csv(&["node", "successes"], rows))?;
    }
    let summaries: Vec<Value> = results.iter().enumerate().map(|(i, r)| sim_summary(i, r)).collect();
    Ok(Output::ok(match format {
        Format::Json => pretty(&Value::Array(summaries)),
        Format::Csv => objects_to_csv(&summaries, &SIM_HEADER),
    }))
}

pub fn classify_cmd(scn: &Scenario, pc: f64, max_order: u32) -> Result<Output, CliError> {
    let gamma = match scn.spec.gamma_limit() {
        Ok(g) => Some(g),
        Err(Error::Oscillating { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let class = classify_tail(&scn.spec, pc)?;
    let mut table = Vec::new();
    if gamma.is_some() {
        for order in 1..=max_order {
            let m = moment_finite(&scn.spec, pc, order)?;
            table.push(object(vec![
                ("n", json!(order)),
                ("finite", json!(m.finite)),
                ("criterion", num(m.criterion)),
            ]));
        }
    }
    let mut fields = vec![("gamma", opt_num(gamma)), ("region", json!(class.region()))];
    if let TailClass::PowerLaw { alpha } = class {
        fields.push(("alpha", num(alpha)));
    }
    fields.push(("moment_table", Value::Array(table)));
    Ok(Output::ok(pretty(&object(fields))))
}

pub fn pmf_cmd(scn: &Scenario, pc: f64, n_max: usize, format: Format) -> Result<Output, CliError> {
    let pmf = lambda_pmf(&scn.spec, pc, n_max)?;
    let fit = pmf.lighttail_fit().ok();
    let footer = object(vec![
        ("lambda0", opt_num(fit.map(|f| f.lambda0))),
        ("r_squared", opt_num(fit.map(|f| f.r_squared))),
        ("truncation_mass", num(pmf.truncation_mass)),
        ("undercaptured", json!(pmf.undercaptured)),
    ]);
    let text = match format {
        Format::Csv => {
            let rows = pmf.p.iter().enumerate().map(|(n, &p)| vec![n.to_string(), cell(p)]);
            format!("{}# {footer}\n", csv(&["n", "p"], rows))
        }
        Format::Json => {
            let mut v = footer;
            v["p"] = Value::Array(pmf.p.iter().map(|&p| num(p)).collect());
            pretty(&v)
        }
    };
    Ok(Output::ok(text))
}

/// Delay samples in µs, one per line; blank lines and a non-numeric header
/// line are skipped.
pub fn read_samples(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(x) if x.is_finite() => out.push(x),
            _ if i == 0 => continue,
            _ => {
                return Err(CliError::Config(format!(
                    "delays: line {}: `{field}` is not a number",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

pub fn tail_cmd(samples: &[f64], tail_fraction: f64, hill_k: Option<usize>) -> Result<Output, CliError> {
    let loglog = match loglog_slope(samples, tail_fraction) {
        Ok(f) => object(vec![("alpha", num(f.alpha_hat)), ("r2", opt_num(f.r_squared))]),
        Err(e) => object(vec![("error", json!(e.to_string()))]),
    };
    let k = hill_k.unwrap_or_else(|| default_hill_k(samples.len()));
    let hill = match hill(samples, k) {
        Ok(f) => object(vec![("alpha", num(f.alpha_hat)), ("k", json!(k))]),
        Err(e) => object(vec![("error", json!(e.to_string()))]),
    };
    let (growth, diagnosis) = match variance_growth(samples, DEFAULT_WINDOWS) {
        Ok(g) => (
            g.points
                .iter()
                .map(|p| object(vec![("n_used", json!(p.n_used)), ("running_variance", num(p.running_variance))]))
                .collect(),
            if g.divergence_suspected { "divergence-suspected" } else { "no-divergence-evidence" },
        ),
        Err(_) => (Vec::new(), "insufficient-samples"),
    };
    let v = object(vec![
        ("samples", json!(samples.len())),
        ("loglog", loglog),
        ("hill", hill),
        ("variance_growth", Value::Array(growth)),
        ("diagnosis", json!(diagnosis)),
    ]);
    Ok(Output::ok(pretty(&v)))
}

pub fn preset_list(format: Format) -> Output {
    let items: Vec<Value> = crate::presets::list()
        .into_iter()
        .map(|(name, about)| object(vec![("name", json!(name)), ("description", json!(about))]))
        .collect();
    Output::ok(match format {
        Format::Json => pretty(&Value::Array(items)),
        Format::Csv => objects_to_csv(&items, &["name", "description"]),
    })
}

/// Model solution and simulation summaries for one scenario.
pub fn preset_run(scn: &Scenario) -> Result<Output, CliError> {
    let sol = solve(&scn.spec, scn.n, scn.retry_limit, &scn.phy)?;
    let sims: Vec<Value> = run_sims(scn)?
        .iter()
        .enumerate()
        .map(|(i, r)| sim_summary(i, r))
        .collect();
    let v = object(vec![
        ("scenario", json!(scn.name)),
        ("solve", solution_json(&sol)),
        ("simulate", Value::Array(sims)),
    ]);
    Ok(Output { text: pretty(&v), converged: sol.converged })
}
