//! Slotted simulator of `N` saturated nodes sharing one backoff function.
//!
//! Slot semantics: every node holds a stage and a counter. Nodes whose
//! counter is zero transmit; none transmitting makes an idle slot, one makes
//! a success and two or more a collision. Every non-transmitting node
//! decrements once per generic slot regardless of its type; transmitters
//! redraw uniformly on `[0, W_stage - 1]`.
//!
//! Because all counters fall in lockstep, a node's counter is stored as the
//! absolute index of the slot in which it will transmit. Runs of idle slots
//! are then skipped in one step and the per-slot work is proportional to the
//! number of transmitters, not to `N`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;

use crate::backoff::BackoffSpec;
use crate::error::{invalid, Result};
use crate::fixedpoint::{PhyProfile, RetryLimit, TIME_RESOLUTION_US};

/// Stage cap applied when there is no retry limit.
pub const DEFAULT_STAGE_CAP: u32 = 64;

/// Name of the generator recorded in every result.
pub const RNG_NAME: &str = "xoshiro256++";

/// Fixed seed used unless a scenario overrides it.
pub const DEFAULT_SEED: u64 = 0x5eed_0b0f_f00d_2012;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub spec: BackoffSpec<f64>,
    pub retry_limit: RetryLimit,
    pub phy: PhyProfile<f64>,
    pub total_slots: u64,
    pub seed: u64,
    /// Highest stage reachable when `retry_limit` is infinite.
    pub max_stage_cap: u32,
    /// Record the per-packet delay decomposition alongside each sample.
    pub trace: bool,
}

impl SimConfig {
    pub fn new(
        n: usize,
        spec: BackoffSpec<f64>,
        retry_limit: RetryLimit,
        phy: PhyProfile<f64>,
        total_slots: u64,
        seed: u64,
    ) -> Self {
        SimConfig {
            n,
            spec,
            retry_limit,
            phy,
            total_slots,
            seed,
            max_stage_cap: DEFAULT_STAGE_CAP,
            trace: false,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "at least one node is required"));
        }
        if self.total_slots == 0 {
            return Err(invalid("total_slots", "must be at least 1"));
        }
        if let RetryLimit::Finite(k) = self.retry_limit {
            if self.max_stage_cap < k {
                return Err(invalid(
                    "max_stage_cap",
                    format!("{} is below the retry limit {k}", self.max_stage_cap),
                ));
            }
        }
        if let Some(len) = self.spec.table_len() {
            let needed = self.last_stage() as usize;
            if needed >= len {
                return Err(invalid(
                    "values",
                    format!("table has {len} stages, the simulator needs stage {needed}"),
                ));
            }
        }
        Ok(())
    }

    fn last_stage(&self) -> u32 {
        match self.retry_limit {
            RetryLimit::Finite(k) => k,
            RetryLimit::Infinite => self.max_stage_cap,
        }
    }
}

/// Converts microseconds to 0.1 µs ticks.
pub fn us_to_ticks(us: f64) -> u64 {
    (us / TIME_RESOLUTION_US).round() as u64
}

pub fn ticks_to_us(ticks: u64) -> f64 {
    ticks as f64 * TIME_RESOLUTION_US
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageStats {
    pub stage: u32,
    pub attempts: u64,
    pub collisions: u64,
}

impl StageStats {
    pub fn pc(&self) -> Option<f64> {
        (self.attempts > 0).then(|| self.collisions as f64 / self.attempts as f64)
    }
}

/// Independently accumulated pieces of one delivered packet's delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayTrace {
    pub node: usize,
    /// The recorded delay sample.
    pub total_ticks: u64,
    /// Summed lengths of the slots counted down by the packet.
    pub countdown_ticks: u64,
    pub countdown_slots: u64,
    /// Sum of all counters drawn for the packet.
    pub drawn_counters: u64,
    /// Collisions the packet was involved in.
    pub collisions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub sim_time_ticks: u64,
    pub successes: u64,
    pub collisions: u64,
    pub idle_slots: u64,
    pub throughput: f64,
    /// Collided transmissions over all transmissions.
    pub pc_overall: f64,
    pub attempts: u64,
    pub collided_attempts: u64,
    pub stages: Vec<StageStats>,
    /// Medium access delays in 0.1 µs ticks, in delivery order.
    pub delay_ticks: Vec<u64>,
    pub dropped_packets: u64,
    pub loss_rate: f64,
    pub per_node_successes: Vec<u64>,
    /// Collisions suffered while already at the stage cap.
    pub stage_cap_hits: u64,
    pub seed_used: u64,
    pub rng: &'static str,
    /// Present only when tracing was requested.
    pub traces: Vec<DelayTrace>,
}

impl SimResult {
    pub fn sim_time_us(&self) -> f64 {
        ticks_to_us(self.sim_time_ticks)
    }

    pub fn delay_samples_us(&self) -> Vec<f64> {
        self.delay_ticks.iter().map(|&t| ticks_to_us(t)).collect()
    }

    pub fn mean_delay_us(&self) -> Option<f64> {
        if self.delay_ticks.is_empty() {
            return None;
        }
        let sum: f64 = self.delay_ticks.iter().map(|&t| t as f64).sum();
        Some(ticks_to_us(1) * sum / self.delay_ticks.len() as f64)
    }

    pub fn total_slots(&self) -> u64 {
        self.successes + self.collisions + self.idle_slots
    }

    /// Population variance of the per-stage collision probability over the
    /// stages with at least `min_attempts` transmissions.
    pub fn stage_pc_variance(&self, min_attempts: u64) -> Option<f64> {
        let pcs: Vec<f64> = self
            .stages
            .iter()
            .filter(|s| s.attempts >= min_attempts.max(1))
            .filter_map(StageStats::pc)
            .collect();
        if pcs.len() < 2 {
            return None;
        }
        let m = pcs.iter().sum::<f64>() / pcs.len() as f64;
        Some(pcs.iter().map(|p| (p - m).powi(2)).sum::<f64>() / pcs.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Node {
    stage: u32,
    hol_start: u64,
    successes: u64,
    // trace accumulators for the head-of-line packet
    countdown_ticks: u64,
    countdown_slots: u64,
    drawn: u64,
    collisions: u64,
}

impl Node {
    fn start_packet(&mut self, now_ticks: u64) {
        self.stage = 0;
        self.hol_start = now_ticks;
        self.countdown_ticks = 0;
        self.countdown_slots = 0;
        self.drawn = 0;
        self.collisions = 0;
    }
}

/// Runs one simulation.
pub fn run(config: &SimConfig) -> Result<SimResult> {
    config.validate()?;
    let last_stage = config.last_stage();
    let windows = (0..=last_stage as usize)
        .map(|k| config.spec.window(k).map(|w| w.integer))
        .collect::<Result<Vec<u64>>>()?;
    let t_idle = us_to_ticks(config.phy.t_idle);
    let t_succ = us_to_ticks(config.phy.t_succ);
    let t_coll = us_to_ticks(config.phy.t_coll);

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
    let mut nodes = vec![Node::default(); config.n];
    let mut schedule: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::with_capacity(config.n);
    for (id, node) in nodes.iter_mut().enumerate() {
        let b = rng.random_range(0..windows[0]);
        node.drawn = b;
        schedule.push(Reverse((b, id)));
    }

    let mut stages: Vec<StageStats> = (0..=last_stage)
        .map(|stage| StageStats { stage, attempts: 0, collisions: 0 })
        .collect();
    let mut delay_ticks = Vec::new();
    let mut traces = Vec::new();
    let (mut successes, mut collisions, mut idle_slots) = (0u64, 0u64, 0u64);
    let (mut dropped, mut cap_hits, mut collided_attempts) = (0u64, 0u64, 0u64);
    let mut slot = 0u64;
    let mut now = 0u64;
    let mut transmitters: Vec<usize> = Vec::new();

    while slot < config.total_slots {
        let Reverse((next, _)) = *schedule.peek().expect("every node is scheduled");
        if next >= config.total_slots {
            let gap = config.total_slots - slot;
            idle_slots += gap;
            now += gap * t_idle;
            break;
        }
        let gap = next - slot;
        idle_slots += gap;
        now += gap * t_idle;
        slot = next;

        transmitters.clear();
        while let Some(&Reverse((t, id))) = schedule.peek() {
            if t != slot {
                break;
            }
            schedule.pop();
            transmitters.push(id);
        }

        let slot_len = if transmitters.len() == 1 { t_succ } else { t_coll };
        if config.trace {
            for node in nodes.iter_mut() {
                node.countdown_ticks += gap * t_idle;
                node.countdown_slots += gap;
            }
            // transmitters are removed from the heap, so the remaining
            // entries are exactly the nodes counting down through this slot
            for &Reverse((_, id)) in schedule.iter() {
                nodes[id].countdown_ticks += slot_len;
                nodes[id].countdown_slots += 1;
            }
        }
        now += slot_len;
        slot += 1;

        if let [id] = transmitters[..] {
            successes += 1;
            let node = &mut nodes[id];
            stages[node.stage as usize].attempts += 1;
            let delay = now - node.hol_start;
            delay_ticks.push(delay);
            if config.trace {
                traces.push(DelayTrace {
                    node: id,
                    total_ticks: delay,
                    countdown_ticks: node.countdown_ticks,
                    countdown_slots: node.countdown_slots,
                    drawn_counters: node.drawn,
                    collisions: node.collisions,
                });
            }
            node.successes += 1;
            node.start_packet(now);
        } else {
            collisions += 1;
            collided_attempts += transmitters.len() as u64;
            for &id in &transmitters {
                let node = &mut nodes[id];
                let st = &mut stages[node.stage as usize];
                st.attempts += 1;
                st.collisions += 1;
                node.collisions += 1;
                match config.retry_limit {
                    RetryLimit::Finite(k) if node.stage >= k => {
                        dropped += 1;
                        node.start_packet(now);
                    }
                    RetryLimit::Infinite if node.stage >= last_stage => cap_hits += 1,
                    _ => node.stage += 1,
                }
            }
        }

        for &id in &transmitters {
            let node = &mut nodes[id];
            let b = rng.random_range(0..windows[node.stage as usize]);
            node.drawn += b;
            schedule.push(Reverse((slot + b, id)));
        }
    }

    let attempts = successes + collided_attempts;
    let delivered = successes;
    Ok(SimResult {
        sim_time_ticks: now,
        successes,
        collisions,
        idle_slots,
        throughput: if now > 0 {
            (successes * t_succ) as f64 / now as f64
        } else {
            0.0
        },
        pc_overall: if attempts > 0 {
            collided_attempts as f64 / attempts as f64
        } else {
            0.0
        },
        attempts,
        collided_attempts,
        stages,
        delay_ticks,
        dropped_packets: dropped,
        loss_rate: if dropped + delivered > 0 {
            dropped as f64 / (dropped + delivered) as f64
        } else {
            0.0
        },
        per_node_successes: nodes.iter().map(|n| n.successes).collect(),
        stage_cap_hits: cap_hits,
        seed_used: config.seed,
        rng: RNG_NAME,
        traces,
    })
}

/// `runs` independent simulations with seeds `seed, seed + stride, ...`,
/// executed in parallel and returned in seed order.
pub fn replicate(config: &SimConfig, runs: usize, seed_stride: u64) -> Result<Vec<SimResult>> {
    if runs == 0 {
        return Err(invalid("runs", "must be at least 1"));
    }
    config.validate()?;
    (0..runs)
        .into_par_iter()
        .map(|i| run(&config.with_seed(config.seed.wrapping_add(seed_stride.wrapping_mul(i as u64)))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, spec: BackoffSpec<f64>, k: RetryLimit, slots: u64, seed: u64) -> SimConfig {
        SimConfig::new(n, spec, k, PhyProfile::ieee80211g(), slots, seed)
    }

    fn eb(w0: u32) -> BackoffSpec<f64> {
        BackoffSpec::exponential(2.0, w0).unwrap()
    }

    #[test]
    fn single_node_never_collides() {
        for seed in 0..3 {
            let r = run(&cfg(1, eb(16), RetryLimit::Infinite, 100_000, seed)).unwrap();
            assert_eq!(r.collisions, 0);
            assert_eq!(r.loss_rate, 0.0);
            assert_eq!(r.pc_overall, 0.0);
            assert_eq!(r.total_slots(), 100_000);
        }
    }

    #[test]
    fn single_node_throughput_renewal() {
        let phy = PhyProfile::<f64>::ieee80211g();
        let r = run(&cfg(1, eb(16), RetryLimit::Infinite, 1_000_000, 7)).unwrap();
        let expected = phy.t_succ / (phy.t_succ + 7.5 * phy.t_idle);
        assert!((r.throughput - expected).abs() / expected < 0.01);
    }

    #[test]
    fn slot_conservation_and_determinism() {
        let c = cfg(10, eb(16), RetryLimit::Finite(3), 50_000, 42);
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_slots(), 50_000);
        assert_eq!(a.seed_used, 42);
        assert_eq!(a.rng, RNG_NAME);
        let delivered: u64 = a.per_node_successes.iter().sum();
        assert_eq!(delivered, a.successes);
        assert_eq!(a.delay_ticks.len() as u64, a.successes);
        let by_stage: u64 = a.stages.iter().map(|s| s.attempts).sum();
        assert_eq!(by_stage, a.attempts);
    }

    #[test]
    fn delay_decomposition_holds() {
        let mut c = cfg(8, BackoffSpec::polynomial(3.0, 16).unwrap(), RetryLimit::Infinite, 200_000, 3);
        c.trace = true;
        let r = run(&c).unwrap();
        let (ts, tc) = (us_to_ticks(c.phy.t_succ), us_to_ticks(c.phy.t_coll));
        assert_eq!(r.traces.len(), r.delay_ticks.len());
        for (tr, &d) in r.traces.iter().zip(&r.delay_ticks) {
            assert_eq!(tr.total_ticks, d);
            assert_eq!(tr.countdown_ticks + tr.collisions * tc + ts, d);
            assert_eq!(tr.countdown_slots, tr.drawn_counters);
        }
    }

    #[test]
    fn finite_retry_drops_packets() {
        let r = run(&cfg(30, eb(16), RetryLimit::Finite(1), 200_000, 1)).unwrap();
        assert!(r.dropped_packets > 0);
        let expected = r.dropped_packets as f64 / (r.dropped_packets + r.successes) as f64;
        assert_eq!(r.loss_rate, expected);
        assert_eq!(r.stages.len(), 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(run(&cfg(0, eb(16), RetryLimit::Infinite, 10, 0)).is_err());
        assert!(run(&cfg(2, eb(16), RetryLimit::Infinite, 0, 0)).is_err());
        let mut c = cfg(2, eb(16), RetryLimit::Finite(10), 10, 0);
        c.max_stage_cap = 5;
        assert!(run(&c).is_err());
        let short = BackoffSpec::table(vec![1.0, 2.0], 16).unwrap();
        assert!(run(&cfg(2, short.clone(), RetryLimit::Infinite, 10, 0)).is_err());
        assert!(run(&cfg(2, short, RetryLimit::Finite(1), 10, 0)).is_ok());
    }

    #[test]
    fn replicate_uses_strided_seeds() {
        let c = cfg(5, eb(16), RetryLimit::Infinite, 10_000, 100);
        let rs = replicate(&c, 3, 10).unwrap();
        let seeds: Vec<u64> = rs.iter().map(|r| r.seed_used).collect();
        assert_eq!(seeds, vec![100, 110, 120]);
        let same = replicate(&c, 2, 0).unwrap();
        assert_eq!(same[0], same[1]);
        assert!(replicate(&c, 0, 1).is_err());
    }
}
