//! Inbound fairness: the order-matching unfairness ratio and the end-to-end
//! check that LOQ scheduling leaves the engine's trades unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use super::{run_inbound, GenOrder, InboundConfig, Workload};
use crate::clock::ClockErrorModel;
use crate::engine::{run_book, Trade};
use crate::netsim::NetConfig;
use crate::types::{MpId, Order, OrderKey, Side, TimestampNs};
use crate::Result;

/// Fraction of matched orders that were treated unfairly.
///
/// `sequenced` is the engine's input order. An arriving order is unfair when a
/// later-generated order on the same side at the same price was already matched.
pub fn unfairness_ratio(sequenced: &[Order], trades: &[Trade]) -> f64 {
    let step: FxHashMap<OrderKey, usize> = sequenced
        .iter()
        .enumerate()
        .map(|(i, o)| (o.key(), i))
        .collect();
    let mut matched_at: FxHashMap<OrderKey, usize> = FxHashMap::default();
    for t in trades {
        let (Some(&b), Some(&a)) = (step.get(&t.bid), step.get(&t.ask)) else {
            continue;
        };
        let at = b.max(a);
        for k in [t.bid, t.ask] {
            let e = matched_at.entry(k).or_insert(at);
            *e = (*e).min(at);
        }
    }
    if matched_at.is_empty() {
        return 0.0;
    }
    let mut groups: FxHashMap<(Side, i64), Vec<(OrderKey, usize)>> = FxHashMap::default();
    for (i, o) in sequenced.iter().enumerate() {
        groups
            .entry((o.side, o.price))
            .or_default()
            .push((o.key(), i));
    }
    let mut unfair = 0usize;
    for mut g in groups.into_values() {
        g.sort_unstable_by_key(|e| std::cmp::Reverse(e.0));
        let mut earliest_later_match = usize::MAX;
        for (key, arrival) in g {
            if earliest_later_match < arrival {
                unfair += 1;
            }
            if let Some(&m) = matched_at.get(&key) {
                earliest_later_match = earliest_later_match.min(m);
            }
        }
    }
    unfair as f64 / matched_at.len() as f64
}

/// Trades from feeding every order, sorted by `(gen_ts, mp)`, to a fresh book.
pub fn timestamp_order_trades(workload: &Workload) -> Result<Vec<Trade>> {
    let orders: Vec<Order> = workload.orders.iter().map(|g| g.to_order(g.at)).collect();
    Ok(run_book(&orders, workload.initial_mid)?.0)
}

/// A small workload with an external, piecewise-static mid-price.
#[derive(Clone, Debug)]
pub struct OracleCase {
    pub workload: Workload,
    /// Mid-price changes `(at, m)`; epoch `k + 1` starts at entry `k`.
    pub schedule: Vec<(TimestampNs, i64)>,
    pub w: i64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct OracleOutcome {
    pub passed: bool,
    /// First `exec_seq` at which the pipeline and the oracle disagree.
    pub first_divergence: Option<u64>,
    pub pipeline: Vec<Trade>,
    pub oracle: Vec<Trade>,
    pub unfairness_ratio: f64,
    /// Orders that never reached the engine.
    pub undelivered: usize,
}

const SPAN_NS: u64 = 2_000_000;

impl OracleCase {
    pub fn mid_at(&self, t: TimestampNs) -> i64 {
        let k = self.schedule.partition_point(|s| s.0 <= t);
        if k == 0 {
            self.workload.initial_mid
        } else {
            self.schedule[k - 1].1
        }
    }

    /// Draws a case with at most 5 MPs, 200 orders and 3 epochs.
    ///
    /// Critical orders are priced inside `[m - w, m + w]` of their epoch and
    /// non-critical ones outside it. Draws where a non-critical order trades
    /// under timestamp order are rejected.
    pub fn random(seed: u64) -> OracleCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            if let Some(case) = Self::draw(&mut rng, seed) {
                return case;
            }
        }
    }

    fn draw(rng: &mut ChaCha8Rng, seed: u64) -> Option<OracleCase> {
        let w = rng.random_range(0..=3i64);
        let n = rng.random_range(1..=5u32);
        let count = rng.random_range(1..=200usize);
        let epochs = rng.random_range(1..=3usize);
        let p_critical = rng.random_range(0.2..0.9);
        let mut switch: Vec<u64> = (1..epochs)
            .map(|_| rng.random_range(0..SPAN_NS / 2) * 2 + 1)
            .collect();
        switch.sort_unstable();
        switch.dedup();
        let initial_mid = 1_000i64;
        let mut m = initial_mid;
        let schedule: Vec<(TimestampNs, i64)> = switch
            .iter()
            .map(|&t| {
                let step = rng.random_range(1..=4i64);
                m += if rng.random_bool(0.5) { step } else { -step };
                (TimestampNs(t), m)
            })
            .collect();
        let mut case = OracleCase {
            workload: Workload {
                n_mps: n,
                initial_mid,
                orders: Vec::new(),
                bursts: Vec::new(),
                end: TimestampNs(SPAN_NS),
            },
            schedule,
            w,
            seed,
        };
        let mut orders = Vec::with_capacity(count);
        let mut used = std::collections::BTreeSet::new();
        while orders.len() < count {
            let at = TimestampNs(rng.random_range(0..SPAN_NS / 2) * 2);
            let mp = MpId(rng.random_range(0..n));
            if !used.insert((mp, at)) {
                continue;
            }
            let m = case.mid_at(at);
            let side = if rng.random_bool(0.5) {
                Side::Bid
            } else {
                Side::Ask
            };
            let critical = rng.random_bool(p_critical);
            let price = if critical {
                m + rng.random_range(-w..=w)
            } else {
                let off = w + rng.random_range(1..=6);
                match side {
                    Side::Bid => m - off,
                    Side::Ask => m + off,
                }
            };
            let qty = rng.random_range(1..=5);
            orders.push(GenOrder {
                at,
                mp,
                side,
                price,
                qty,
                critical,
            });
        }
        case.workload = Workload::from_orders(n, initial_mid, orders).ok()?;
        case.workload.end = TimestampNs(SPAN_NS);
        let critical: FxHashMap<OrderKey, bool> = case
            .workload
            .orders
            .iter()
            .map(|g| {
                (
                    OrderKey {
                        gen_ts: g.at,
                        mp: g.mp,
                    },
                    g.critical,
                )
            })
            .collect();
        let trades = timestamp_order_trades(&case.workload).ok()?;
        let noncritical_trades = trades
            .iter()
            .any(|t| !critical[&t.bid] || !critical[&t.ask]);
        (!noncritical_trades).then_some(case)
    }

    /// Pipeline configuration: tree of proxies, sequencers and LOQs at every
    /// node, exact clocks, epochs observed by every node at the same instant.
    pub fn config(&self) -> InboundConfig {
        InboundConfig {
            net: NetConfig {
                seed: self.seed,
                clock: ClockErrorModel::Exact,
                ..NetConfig::default()
            },
            tree: true,
            sequencer: true,
            loq: true,
            w: Some(self.w),
            heartbeat_us: 20.0,
            md_delay_us: 0.0,
            rate_window_ms: 1.0,
            drain_ms: 5.0,
            mid_schedule: Some(self.schedule.clone()),
            ..InboundConfig::default()
        }
    }
}

/// Runs the case through the pipeline and through timestamp order and
/// compares the trade sequences.
pub fn fairness_oracle(case: &OracleCase) -> Result<OracleOutcome> {
    oracle_with(case, &case.config())
}

pub fn oracle_with(case: &OracleCase, cfg: &InboundConfig) -> Result<OracleOutcome> {
    let report = run_inbound(cfg, &case.workload)?;
    let oracle = timestamp_order_trades(&case.workload)?;
    let pipeline = report.trades;
    let first_divergence = pipeline
        .iter()
        .zip(&oracle)
        .position(|(a, b)| a.signature() != b.signature())
        .or_else(|| (pipeline.len() != oracle.len()).then(|| pipeline.len().min(oracle.len())))
        .map(|i| i as u64);
    let undelivered = report
        .orders
        .iter()
        .filter(|r| r.engine_arrival.is_none())
        .count();
    Ok(OracleOutcome {
        passed: first_divergence.is_none() && undelivered == 0,
        first_divergence,
        unfairness_ratio: unfairness_ratio(&report.sequenced, &pipeline),
        pipeline,
        oracle,
        undelivered,
    })
}
