//! Order workload generator: per-MP Poisson arrivals with a square-wave burst
//! schedule, priced around a random-walk fundamental.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::{MpId, Order, Side, TimestampNs};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub n_mps: u32,
    pub duration_ms: f64,
    /// Base orders per second per MP.
    pub rate_per_mp: f64,
    /// Rate multiplier inside a burst.
    pub burst_factor: f64,
    /// Square-wave period; 0 disables bursts.
    pub burst_period_ms: f64,
    pub burst_len_ms: f64,
    /// Start of the first burst within each period.
    pub burst_phase_ms: f64,
    /// Probability that an order is priced inside `[m - band, m + band]`.
    pub critical_fraction: f64,
    pub band: i64,
    /// Non-critical prices sit `1..=depth` ticks outside the band.
    pub depth: i64,
    pub initial_mid: i64,
    /// Fundamental random-walk step interval.
    pub walk_step_ms: f64,
    /// Per-step probability that the fundamental moves one tick.
    pub walk_prob: f64,
    pub max_qty: u64,
    /// Critical bids price at `m+1..=m+band` and asks at `m-band..=m-1`, so they
    /// cross resting quotes instead of joining the touch.
    pub marketable: bool,
    /// If nonzero, MP 0 opens with a bid at `initial_mid - 1` and an ask at
    /// `initial_mid + 1` of this size.
    pub liquidity_qty: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            n_mps: 10,
            duration_ms: 1_000.0,
            rate_per_mp: 1_000.0,
            burst_factor: 20.0,
            burst_period_ms: 0.0,
            burst_len_ms: 0.0,
            burst_phase_ms: 0.0,
            critical_fraction: 0.5,
            band: 2,
            depth: 20,
            initial_mid: 10_000,
            walk_step_ms: 1.0,
            walk_prob: 0.1,
            max_qty: 5,
            marketable: false,
            liquidity_qty: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, why: &str| Err(Error::Config(format!("workload.{k} {why}")));
        if self.n_mps == 0 {
            return bad("n_mps", "must be >= 1");
        }
        if !(self.duration_ms > 0.0 && self.duration_ms.is_finite()) {
            return bad("duration_ms", "must be > 0");
        }
        if !(self.rate_per_mp > 0.0 && self.rate_per_mp.is_finite()) {
            return bad("rate_per_mp", "must be > 0");
        }
        if !(self.burst_factor >= 1.0) {
            return bad("burst_factor", "must be >= 1");
        }
        if self.burst_period_ms < 0.0 || self.burst_len_ms < 0.0 || self.burst_phase_ms < 0.0 {
            return bad("burst_period_ms", "and burst lengths must be >= 0");
        }
        if self.burst_period_ms > 0.0
            && self.burst_phase_ms + self.burst_len_ms > self.burst_period_ms
        {
            return bad(
                "burst_len_ms",
                "plus burst_phase_ms must fit in burst_period_ms",
            );
        }
        if !(0.0..=1.0).contains(&self.critical_fraction) {
            return bad("critical_fraction", "must be in [0, 1]");
        }
        if self.band < 0 || self.depth < 1 {
            return bad("band", "must be >= 0 and depth >= 1");
        }
        if self.initial_mid <= self.band + self.depth + 1_000 {
            return bad(
                "initial_mid",
                "is too close to zero for the configured band and depth",
            );
        }
        if !(self.walk_step_ms > 0.0) || !(0.0..=1.0).contains(&self.walk_prob) {
            return bad("walk_step_ms", "must be > 0 and walk_prob in [0, 1]");
        }
        if self.marketable && self.band < 1 {
            return bad("band", "must be >= 1 for marketable pricing");
        }
        if self.max_qty == 0 {
            return bad("max_qty", "must be >= 1");
        }
        Ok(())
    }

    /// Burst windows `[start, end)` inside the workload span.
    pub fn burst_windows(&self) -> Vec<(TimestampNs, TimestampNs)> {
        if self.burst_period_ms <= 0.0 || self.burst_len_ms <= 0.0 || self.burst_factor <= 1.0 {
            return Vec::new();
        }
        let period = TimestampNs::from_ms(self.burst_period_ms).0;
        let phase = TimestampNs::from_ms(self.burst_phase_ms).0;
        let len = TimestampNs::from_ms(self.burst_len_ms).0;
        let end = TimestampNs::from_ms(self.duration_ms).0;
        let mut out = Vec::new();
        let mut start = phase;
        while start < end {
            out.push((TimestampNs(start), TimestampNs((start + len).min(end))));
            start += period;
        }
        out
    }
}

/// One order as the trading algorithm produces it, before gateway stamping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GenOrder {
    /// True (simulation) time of generation.
    pub at: TimestampNs,
    pub mp: MpId,
    pub side: Side,
    pub price: i64,
    pub qty: u64,
    /// The generator placed it inside the critical band.
    pub critical: bool,
}

impl GenOrder {
    pub fn to_order(&self, gen_ts: TimestampNs) -> Order {
        Order::new(self.mp, gen_ts, self.side, self.price, self.qty)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub n_mps: u32,
    pub initial_mid: i64,
    /// Sorted by `(at, mp)`; per-MP times strictly increase.
    pub orders: Vec<GenOrder>,
    pub bursts: Vec<(TimestampNs, TimestampNs)>,
    pub end: TimestampNs,
}

impl Workload {
    /// Wraps an explicit order list. Per-MP generation times must be distinct.
    pub fn from_orders(
        n_mps: u32,
        initial_mid: i64,
        mut orders: Vec<GenOrder>,
    ) -> Result<Workload> {
        orders.sort_by_key(|o| (o.at, o.mp));
        if let Some(bad) = orders.iter().find(|o| o.mp.0 >= n_mps) {
            return Err(Error::Config(format!(
                "workload order from {} but only {n_mps} MPs",
                bad.mp
            )));
        }
        if orders
            .windows(2)
            .any(|w| w[0].at == w[1].at && w[0].mp == w[1].mp)
        {
            return Err(Error::Config(
                "workload has two orders from one MP at the same instant".into(),
            ));
        }
        for o in &orders {
            o.to_order(o.at).validate()?;
        }
        let end = orders.last().map_or(TimestampNs::ZERO, |o| o.at + 1);
        Ok(Workload {
            n_mps,
            initial_mid,
            orders,
            bursts: Vec::new(),
            end,
        })
    }

    pub fn in_burst(&self, t: TimestampNs) -> bool {
        let i = self.bursts.partition_point(|b| b.0 <= t);
        i > 0 && t < self.bursts[i - 1].1
    }

    pub fn burst_time_s(&self) -> f64 {
        self.bursts
            .iter()
            .map(|(s, e)| (e.0 - s.0) as f64)
            .sum::<f64>()
            / 1e9
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("at_ns,mp,side,price,qty,critical\n");
        for o in &self.orders {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                o.at.0,
                o.mp.0,
                o.side.as_str(),
                o.price,
                o.qty,
                o.critical as u8
            ));
        }
        s
    }

    /// SHA-256 of the CSV form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_csv().as_bytes()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::engine::write_file(path, &self.to_csv())
    }
}

const WALK_STREAM: u64 = 1 << 40;

/// Cumulative-intensity inversion over a piecewise-constant rate.
fn advance(cfg: &WorkloadConfig, bursts: &[(TimestampNs, TimestampNs)], t: f64, mut e: f64) -> f64 {
    let base = cfg.rate_per_mp / 1e9;
    let mut t = t;
    loop {
        let i = bursts.partition_point(|b| (b.0 .0 as f64) <= t);
        let (rate, seg_end) = match i.checked_sub(1).map(|j| bursts[j]) {
            Some((_, end)) if t < end.0 as f64 => (base * cfg.burst_factor, end.0 as f64),
            _ => (base, bursts.get(i).map_or(f64::INFINITY, |b| b.0 .0 as f64)),
        };
        let span = seg_end - t;
        if e <= rate * span {
            return t + e / rate;
        }
        e -= rate * span;
        t = seg_end;
    }
}

pub fn generate(cfg: &WorkloadConfig, seed: u64) -> Result<Workload> {
    cfg.validate()?;
    let bursts = cfg.burst_windows();
    let end = TimestampNs::from_ms(cfg.duration_ms);
    let step_ns = TimestampNs::from_ms(cfg.walk_step_ms).0.max(1);
    let steps = end.0 / step_ns + 1;
    let mut walk_rng = ChaCha8Rng::seed_from_u64(seed);
    walk_rng.set_stream(WALK_STREAM);
    let mut fundamental = Vec::with_capacity(steps as usize);
    let mut m = cfg.initial_mid;
    for _ in 0..steps {
        fundamental.push(m);
        if walk_rng.random_bool(cfg.walk_prob) {
            m += if walk_rng.random_bool(0.5) { 1 } else { -1 };
        }
    }
    let mut orders = Vec::new();
    if cfg.liquidity_qty > 0 {
        for (at, side, price) in [
            (0, Side::Bid, cfg.initial_mid - 1),
            (1, Side::Ask, cfg.initial_mid + 1),
        ] {
            orders.push(GenOrder {
                at: TimestampNs(at),
                mp: MpId(0),
                side,
                price,
                qty: cfg.liquidity_qty,
                critical: true,
            });
        }
    }
    for mp in 0..cfg.n_mps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(mp as u64);
        let mut t = 0.0f64;
        let mut last: Option<u64> = (mp == 0 && cfg.liquidity_qty > 0).then_some(1);
        loop {
            let e: f64 = Exp1.sample(&mut rng);
            t = advance(cfg, &bursts, t, e);
            let mut at = t.round() as u64;
            if at >= end.0 {
                break;
            }
            if let Some(l) = last {
                at = at.max(l + 1);
            }
            last = Some(at);
            let m = fundamental[(at / step_ns) as usize];
            let side = if rng.random_bool(0.5) {
                Side::Bid
            } else {
                Side::Ask
            };
            let critical = rng.random_bool(cfg.critical_fraction);
            let price = if critical && cfg.marketable {
                let off = rng.random_range(1..=cfg.band);
                match side {
                    Side::Bid => m + off,
                    Side::Ask => m - off,
                }
            } else if critical {
                m + rng.random_range(-cfg.band..=cfg.band)
            } else {
                let off = cfg.band + rng.random_range(1..=cfg.depth);
                match side {
                    Side::Bid => m - off,
                    Side::Ask => m + off,
                }
            };
            let qty = rng.random_range(1..=cfg.max_qty);
            orders.push(GenOrder {
                at: TimestampNs(at),
                mp: MpId(mp),
                side,
                price,
                qty,
                critical,
            });
        }
    }
    orders.sort_by_key(|o| (o.at, o.mp));
    Ok(Workload {
        n_mps: cfg.n_mps,
        initial_mid: cfg.initial_mid,
        orders,
        bursts,
        end,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bursty() -> WorkloadConfig {
        WorkloadConfig {
            n_mps: 20,
            duration_ms: 400.0,
            rate_per_mp: 2_000.0,
            burst_period_ms: 100.0,
            burst_len_ms: 10.0,
            burst_phase_ms: 50.0,
            ..WorkloadConfig::default()
        }
    }

    #[test]
    fn rates_follow_the_square_wave() {
        let cfg = bursty();
        let w = generate(&cfg, 3).unwrap();
        let in_burst = w.orders.iter().filter(|o| w.in_burst(o.at)).count() as f64;
        let outside = w.orders.len() as f64 - in_burst;
        let burst_s = w.burst_time_s();
        let base_rate = outside / (0.4 - burst_s) / 20.0;
        let burst_rate = in_burst / burst_s / 20.0;
        assert!((base_rate / 2_000.0 - 1.0).abs() < 0.05, "{base_rate}");
        assert!((burst_rate / 40_000.0 - 1.0).abs() < 0.05, "{burst_rate}");
    }

    #[test]
    fn burst_windows_layout() {
        let b = bursty().burst_windows();
        assert_eq!(b.len(), 4);
        assert_eq!(
            b[0],
            (TimestampNs::from_ms(50.0), TimestampNs::from_ms(60.0))
        );
        assert_eq!(b[3].0, TimestampNs::from_ms(350.0));
    }

    #[test]
    fn critical_share_and_prices() {
        let cfg = WorkloadConfig {
            critical_fraction: 0.25,
            ..bursty()
        };
        let w = generate(&cfg, 9).unwrap();
        let crit = w.orders.iter().filter(|o| o.critical).count() as f64 / w.orders.len() as f64;
        assert!((crit - 0.25).abs() < 0.02, "{crit}");
        for o in &w.orders {
            assert!((1..=cfg.max_qty).contains(&o.qty));
            let off = (o.price - cfg.initial_mid).abs();
            assert!(off < 200 + cfg.band + cfg.depth);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&bursty(), 5).unwrap();
        let b = generate(&bursty(), 5).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), generate(&bursty(), 6).unwrap().hash());
    }

    #[test]
    fn per_mp_times_strictly_increase() {
        let w = generate(&bursty(), 1).unwrap();
        let mut last = vec![None; 20];
        for o in &w.orders {
            assert!(last[o.mp.0 as usize].is_none_or(|l| l < o.at));
            last[o.mp.0 as usize] = Some(o.at);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let c = WorkloadConfig {
            burst_len_ms: 200.0,
            burst_period_ms: 100.0,
            ..WorkloadConfig::default()
        };
        assert!(generate(&c, 0).is_err());
        assert!(Workload::from_orders(
            1,
            100,
            vec![GenOrder {
                at: TimestampNs(1),
                mp: MpId(3),
                side: Side::Bid,
                price: 1,
                qty: 1,
                critical: true
            }]
        )
        .is_err());
    }

    #[test]
    fn marketable_quotes_keep_the_touch() {
        let c = WorkloadConfig {
            band: 1,
            walk_prob: 0.0,
            marketable: true,
            liquidity_qty: 1_000_000_000,
            ..bursty()
        };
        let w = generate(&c, 2).unwrap();
        assert_eq!((w.orders[0].price, w.orders[1].price), (9_999, 10_001));
        for o in &w.orders[2..] {
            let crosses = match o.side {
                Side::Bid => o.price == 10_001,
                Side::Ask => o.price == 9_999,
            };
            assert_eq!(crosses, o.critical);
        }
        let (trades, book) = crate::engine::run_book(
            &w.orders
                .iter()
                .map(|g| g.to_order(g.at))
                .collect::<Vec<_>>(),
            10_000,
        )
        .unwrap();
        assert!(!trades.is_empty());
        assert_eq!(book.mid_price().m, 10_000);
        assert_eq!(book.mid_price().epoch, 0);
    }
}
