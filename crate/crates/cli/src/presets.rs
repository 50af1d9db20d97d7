//! Named, read-only scenarios for the reproduction experiments.

use backoff_tail::sim::DEFAULT_SEED;
use backoff_tail::{BackoffSpec, PhyProfile, RetryLimit};

use crate::config::{Scenario, DEFAULT_SLOTS};
use crate::error::CliError;

struct Entry {
    name: &'static str,
    about: &'static str,
    family: (&'static str, f64, f64),
    w0: u32,
    n: u64,
    retry_limit: RetryLimit,
    seed: u64,
    runs: usize,
}

const INF: RetryLimit = RetryLimit::Infinite;

#[rustfmt::skip]
const ENTRIES: &[Entry] = &[
    Entry { name: "fig3-eb", about: "EB(2), W0=32, N=10: model vs simulated pc and per-stage pc", family: ("eb", 2.0, 0.0), w0: 32, n: 10, retry_limit: INF, seed: 1, runs: 1 },
    Entry { name: "fig3-seb", about: "SEB(4,0.7), W0=32, N=10: model vs simulated pc and per-stage pc", family: ("seb", 4.0, 0.7), w0: 32, n: 10, retry_limit: INF, seed: 1, runs: 1 },
    Entry { name: "fig3-pb", about: "PB(3), W0=32, N=10: model vs simulated pc and per-stage pc", family: ("pb", 3.0, 0.0), w0: 32, n: 10, retry_limit: INF, seed: 1, runs: 1 },
    Entry { name: "asymptote-eb", about: "EB(2), W0=16, N=10000: pc close to 1/r", family: ("eb", 2.0, 0.0), w0: 16, n: 10_000, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
    Entry { name: "fig5-eb", about: "EB(2), W0=16, N=20: power-law delay tail and growing variance", family: ("eb", 2.0, 0.0), w0: 16, n: 20, retry_limit: INF, seed: 1, runs: 3 },
    Entry { name: "fig5-seb", about: "SEB(4,0.7), W0=16, N=20: delay variance settles", family: ("seb", 4.0, 0.7), w0: 16, n: 20, retry_limit: INF, seed: 1, runs: 3 },
    Entry { name: "fig5-pb", about: "PB(3), W0=16, N=20: delay variance settles", family: ("pb", 3.0, 0.0), w0: 16, n: 20, retry_limit: INF, seed: 1, runs: 3 },
    Entry { name: "fig6", about: "BEB, W0=16, N=50, K=5: about 10% packet loss", family: ("eb", 2.0, 0.0), w0: 16, n: 50, retry_limit: RetryLimit::Finite(5), seed: 1, runs: 1 },
    Entry { name: "fig6-seb", about: "SEB(4,0.7), W0=16, N=50, K=5: loss below BEB", family: ("seb", 4.0, 0.7), w0: 16, n: 50, retry_limit: RetryLimit::Finite(5), seed: 1, runs: 1 },
    Entry { name: "fig6-pb", about: "PB(3), W0=16, N=50, K=5: loss below BEB", family: ("pb", 3.0, 0.0), w0: 16, n: 50, retry_limit: RetryLimit::Finite(5), seed: 1, runs: 1 },
    Entry { name: "fig7-eb", about: "EB(2), W0=16, N=100, 5 runs: starvation under EB", family: ("eb", 2.0, 0.0), w0: 16, n: 100, retry_limit: INF, seed: 11, runs: 5 },
    Entry { name: "fig7-seb", about: "SEB(4,0.7), W0=16, N=100, 5 runs: little starvation", family: ("seb", 4.0, 0.7), w0: 16, n: 100, retry_limit: INF, seed: 11, runs: 5 },
    Entry { name: "fig7-pb", about: "PB(3), W0=16, N=100, 5 runs: no starvation", family: ("pb", 3.0, 0.0), w0: 16, n: 100, retry_limit: INF, seed: 11, runs: 5 },
    Entry { name: "fig8-pb5", about: "PB(5), W0=16: throughput above BEB up to N=1200 (sweep over n)", family: ("pb", 5.0, 0.0), w0: 16, n: 100, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
    Entry { name: "fig8-beb", about: "BEB, W0=16: throughput tends to a positive constant (sweep over n)", family: ("eb", 2.0, 0.0), w0: 16, n: 100, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
    Entry { name: "fig10-pb05", about: "PB(0.5), W0=16: light-tail countdown pmf at pc=0.5", family: ("pb", 0.5, 0.0), w0: 16, n: 10, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
    Entry { name: "fig10-pb08", about: "PB(0.8), W0=16: light-tail countdown pmf at pc=0.5", family: ("pb", 0.8, 0.0), w0: 16, n: 10, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
    Entry { name: "fig10-pb10", about: "PB(1), W0=16: light-tail countdown pmf at pc=0.5", family: ("pb", 1.0, 0.0), w0: 16, n: 10, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
    Entry { name: "fig10-eb", about: "EB(2), W0=16: countdown pmf at pc=0.5 bends on a log scale", family: ("eb", 2.0, 0.0), w0: 16, n: 10, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
    Entry { name: "oracles", about: "PB(1), W0=16: pmf, moment and Monte Carlo cross-checks", family: ("pb", 1.0, 0.0), w0: 16, n: 10, retry_limit: INF, seed: DEFAULT_SEED, runs: 1 },
];

fn build(e: &Entry) -> Scenario {
    let (tag, p1, p2) = e.family;
    let spec = match tag {
        "eb" => BackoffSpec::exponential(p1, e.w0),
        "seb" => BackoffSpec::sub_exponential(p1, p2, e.w0),
        _ => BackoffSpec::polynomial(p1, e.w0),
    }
    .expect("preset parameters are valid");
    Scenario {
        name: e.name.to_string(),
        spec,
        n: e.n,
        retry_limit: e.retry_limit,
        phy: PhyProfile::ieee80211g(),
        slots: DEFAULT_SLOTS,
        seed: e.seed,
        runs: e.runs,
    }
}

pub fn names() -> impl Iterator<Item = &'static str> {
    ENTRIES.iter().map(|e| e.name)
}

/// `(name, description)` pairs in a stable order.
pub fn list() -> Vec<(&'static str, &'static str)> {
    ENTRIES.iter().map(|e| (e.name, e.about)).collect()
}

pub fn get(name: &str) -> Result<Scenario, CliError> {
    ENTRIES
        .iter()
        .find(|e| e.name == name)
        .map(build)
        .ok_or_else(|| CliError::Config(format!("preset: unknown preset `{name}` (see `preset list`)")))
}
