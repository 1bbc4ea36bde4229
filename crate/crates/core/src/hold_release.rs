//! Hold-and-release: receivers track one-way delays, the tree aggregates
//! their estimates into a global OWD, the sender stamps deadlines from it,
//! and receivers hold each message until its deadline.
//!
//! Also computes the outbound fairness metrics: OML, DWS and P(F).

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::mcast::TreePlan;
use crate::stats::{ecdf, nearest_rank};
use crate::types::{MulticastMessage, NodeAddr, TimestampNs};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoldReleaseConfig {
    pub enabled: bool,
    /// Fraction used by each receiver's estimator.
    pub percentile: f64,
    /// Samples kept per receiver.
    pub window: usize,
    pub report_period_ms: f64,
    pub aggregate_period_ms: f64,
    pub margin_us: f64,
    /// Headroom before the first aggregate arrives; `None` means 5x base latency.
    pub initial_headroom_us: Option<f64>,
    /// Fixed headroom with no aggregation (the flat baseline).
    pub static_headroom_us: Option<f64>,
}

impl Default for HoldReleaseConfig {
    fn default() -> Self {
        HoldReleaseConfig {
            enabled: true,
            percentile: 0.95,
            window: 1000,
            report_period_ms: 100.0,
            aggregate_period_ms: 100.0,
            margin_us: 0.0,
            initial_headroom_us: None,
            static_headroom_us: None,
        }
    }
}

impl HoldReleaseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 1.0) {
            return Err(Error::Config(
                "hold_release.percentile must be in (0, 1]".into(),
            ));
        }
        if self.window == 0 {
            return Err(Error::Config("hold_release.window must be >= 1".into()));
        }
        if !(self.report_period_ms > 0.0 && self.aggregate_period_ms > 0.0) {
            return Err(Error::Config(
                "hold_release report/aggregate periods must be > 0".into(),
            ));
        }
        if self.margin_us < 0.0 {
            return Err(Error::Config("hold_release.margin_us must be >= 0".into()));
        }
        Ok(())
    }
}

/// Bounded window of recent OWD samples at one receiver.
#[derive(Clone, Debug)]
pub struct OwdEstimator {
    samples: VecDeque<u64>,
    capacity: usize,
    percentile: f64,
    clamped: u64,
}

impl OwdEstimator {
    pub fn new(capacity: usize, percentile: f64) -> Self {
        OwdEstimator {
            samples: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
            percentile,
            clamped: 0,
        }
    }

    /// Adds a raw sample; negative values (clock error larger than the delay) are clamped to 0.
    pub fn push(&mut self, sample_ns: i64) {
        let v = if sample_ns < 0 {
            self.clamped += 1;
            0
        } else {
            sample_ns as u64
        };
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(v);
    }

    /// Nearest-rank percentile of the window.
    pub fn estimate(&self) -> Option<u64> {
        let mut v: Vec<u64> = self.samples.iter().copied().collect();
        v.sort_unstable();
        nearest_rank(&v, self.percentile)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clamped(&self) -> u64 {
        self.clamped
    }
}

/// Records `local_arrival - send_ts` for `msg` at one receiver.
pub fn record_owd(est: &mut OwdEstimator, msg: &MulticastMessage, local_arrival: TimestampNs) {
    est.push(local_arrival - msg.send_ts);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlobalOwd {
    pub owd_g_ns: u64,
    pub computed_at: TimestampNs,
}

/// Latest value reported by each child; the aggregate ignores silent children.
#[derive(Clone, Debug, Default)]
pub struct OwdAggregator {
    latest: BTreeMap<u32, u64>,
}

impl OwdAggregator {
    pub fn report(&mut self, child: u32, owd_ns: u64) {
        self.latest.insert(child, owd_ns);
    }

    pub fn max(&self) -> Option<u64> {
        self.latest.values().copied().max()
    }

    pub fn reporters(&self) -> usize {
        self.latest.len()
    }
}

/// One synchronous round of the tree all-reduce over static parents.
///
/// `estimates[i]` is receiver `i`'s estimate, `None` if it has not reported.
/// Falls back to `headroom_ns` when nobody reported.
pub fn allreduce_owd(
    plan: &TreePlan,
    estimates: &[Option<u64>],
    headroom_ns: u64,
    at: TimestampNs,
) -> GlobalOwd {
    let leaf_layer = plan.leaf_layer();
    let mut level: Vec<Option<u64>> = estimates.to_vec();
    for layer in (0..leaf_layer).rev() {
        let mut up: Vec<Option<u64>> = vec![None; plan.layer_sizes[layer] as usize];
        for (i, v) in level.iter().enumerate() {
            let p = plan
                .static_parent(NodeAddr::new(layer as i32 + 1, i as u32))
                .index as usize;
            if let Some(v) = *v {
                up[p] = Some(up[p].map_or(v, |u: u64| u.max(v)));
            }
        }
        level = up;
    }
    let g = level.iter().flatten().copied().max().unwrap_or(headroom_ns);
    GlobalOwd {
        owd_g_ns: g,
        computed_at: at,
    }
}

/// Sets `deadline = root_clock + owd_g + margin`.
pub fn stamp_deadline(
    mut msg: MulticastMessage,
    root_clock: TimestampNs,
    g: &GlobalOwd,
    margin_ns: u64,
) -> MulticastMessage {
    msg.deadline = root_clock + g.owd_g_ns + margin_ns;
    msg
}

/// Outcome of holding one message at one receiver, in that receiver's clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Release {
    pub release_local: TimestampNs,
    pub held_ns: u64,
    pub missed: bool,
}

pub fn release(local_arrival: TimestampNs, deadline: TimestampNs) -> Release {
    if local_arrival > deadline {
        Release {
            release_local: local_arrival,
            held_ns: 0,
            missed: true,
        }
    } else {
        Release {
            release_local: deadline,
            held_ns: deadline.0 - local_arrival.0,
            missed: false,
        }
    }
}

/// What one receiver did with one message, in true time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceiverOutcome {
    pub arrival_ns: u64,
    pub release_ns: u64,
    pub missed: bool,
}

/// All receiver outcomes of one message; `None` marks a loss.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageTrace {
    pub msg_id: u64,
    pub send_ns: u64,
    pub receivers: Vec<Option<ReceiverOutcome>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageMetrics {
    pub msg_id: u64,
    pub send_ns: u64,
    /// Last-receiver release latency; `None` when some receiver lost the message.
    pub oml_ns: Option<u64>,
    pub dws_ns: Option<u64>,
    /// Same two quantities computed from first-copy arrivals.
    pub raw_oml_ns: Option<u64>,
    pub raw_dws_ns: Option<u64>,
    pub misses: u32,
    pub losses: u32,
    pub mean_hold_ns: f64,
}

pub fn message_metrics(t: &MessageTrace) -> MessageMetrics {
    let got: Vec<&ReceiverOutcome> = t.receivers.iter().flatten().collect();
    let losses = (t.receivers.len() - got.len()) as u32;
    let misses = got.iter().filter(|r| r.missed).count() as u32;
    let mean_hold_ns = if got.is_empty() {
        0.0
    } else {
        got.iter()
            .map(|r| (r.release_ns - r.arrival_ns) as f64)
            .sum::<f64>()
            / got.len() as f64
    };
    let complete = losses == 0 && !got.is_empty();
    let span = |f: fn(&ReceiverOutcome) -> u64| -> (Option<u64>, Option<u64>) {
        if !complete {
            return (None, None);
        }
        let max = got.iter().map(|r| f(r)).max().expect("non-empty");
        let min = got.iter().map(|r| f(r)).min().expect("non-empty");
        (Some(max.saturating_sub(t.send_ns)), Some(max - min))
    };
    let (oml_ns, dws_ns) = span(|r| r.release_ns);
    let (raw_oml_ns, raw_dws_ns) = span(|r| r.arrival_ns);
    MessageMetrics {
        msg_id: t.msg_id,
        send_ns: t.send_ns,
        oml_ns,
        dws_ns,
        raw_oml_ns,
        raw_dws_ns,
        misses,
        losses,
        mean_hold_ns,
    }
}

/// Highest integer percentile `p` whose nearest-rank quantile of `dws` is `<= threshold_ns`.
/// Returns 0 when even the smallest value exceeds the threshold or `dws` is empty.
pub fn p_fair(dws: &[u64], threshold_ns: u64) -> u32 {
    let mut v = dws.to_vec();
    v.sort_unstable();
    (1..=100u32)
        .rev()
        .find(|&p| nearest_rank(&v, p as f64 / 100.0).is_some_and(|q| q <= threshold_ns))
        .unwrap_or(0)
}

/// DWS threshold at which a message counts as fairly delivered.
pub const FAIR_DWS_NS: u64 = 1_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub per_message: Vec<MessageMetrics>,
    pub oml_cdf: Vec<(u64, f64)>,
    pub dws_cdf: Vec<(u64, f64)>,
    pub p_fair: u32,
}

pub fn metrics(traces: &[MessageTrace]) -> Metrics {
    let per_message: Vec<MessageMetrics> = traces.iter().map(message_metrics).collect();
    let mut oml: Vec<u64> = per_message.iter().filter_map(|m| m.oml_ns).collect();
    let mut dws: Vec<u64> = per_message.iter().filter_map(|m| m.dws_ns).collect();
    oml.sort_unstable();
    dws.sort_unstable();
    Metrics {
        oml_cdf: ecdf(&oml),
        dws_cdf: ecdf(&dws),
        p_fair: p_fair(&dws, FAIR_DWS_NS),
        per_message,
    }
}

/// Summary row over a set of per-message metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub messages: u64,
    pub complete: u64,
    pub oml_p50_ns: u64,
    pub oml_p90_ns: u64,
    pub oml_p99_ns: u64,
    pub dws_p50_ns: u64,
    pub dws_p99_ns: u64,
    pub raw_dws_p99_ns: u64,
    pub p_fair: u32,
    pub misses: u64,
    pub losses: u64,
    pub mean_hold_ns: f64,
}

pub fn summarize(ms: &[MessageMetrics]) -> Summary {
    let mut oml: Vec<u64> = ms.iter().filter_map(|m| m.oml_ns).collect();
    let mut dws: Vec<u64> = ms.iter().filter_map(|m| m.dws_ns).collect();
    let mut raw: Vec<u64> = ms.iter().filter_map(|m| m.raw_dws_ns).collect();
    oml.sort_unstable();
    dws.sort_unstable();
    raw.sort_unstable();
    let q = |v: &[u64], p: f64| nearest_rank(v, p).unwrap_or(0);
    let hold = if ms.is_empty() {
        0.0
    } else {
        ms.iter().map(|m| m.mean_hold_ns).sum::<f64>() / ms.len() as f64
    };
    Summary {
        messages: ms.len() as u64,
        complete: dws.len() as u64,
        oml_p50_ns: q(&oml, 0.50),
        oml_p90_ns: q(&oml, 0.90),
        oml_p99_ns: q(&oml, 0.99),
        dws_p50_ns: q(&dws, 0.50),
        dws_p99_ns: q(&dws, 0.99),
        raw_dws_p99_ns: q(&raw, 0.99),
        p_fair: p_fair(&dws, FAIR_DWS_NS),
        misses: ms.iter().map(|m| m.misses as u64).sum(),
        losses: ms.iter().map(|m| m.losses as u64).sum(),
        mean_hold_ns: hold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcast::plan_tree;
    use proptest::prelude::*;

    fn msg_at(send: u64) -> MulticastMessage {
        MulticastMessage::new(0, TimestampNs(send))
    }

    #[test]
    fn owd_sample_is_clock_minus_send() {
        let mut e = OwdEstimator::new(10, 0.95);
        record_owd(&mut e, &msg_at(0), TimestampNs::from_us(50.0));
        assert_eq!(e.estimate(), Some(50_000));
        let mut e = OwdEstimator::new(10, 0.95);
        record_owd(&mut e, &msg_at(0), TimestampNs::from_us(51.0));
        assert_eq!(e.estimate(), Some(51_000));
    }

    #[test]
    fn negative_samples_clamp() {
        let mut e = OwdEstimator::new(10, 0.95);
        record_owd(&mut e, &msg_at(1_000), TimestampNs(900));
        assert_eq!((e.estimate(), e.clamped()), (Some(0), 1));
    }

    #[test]
    fn estimate_of_ten_samples_is_nearest_rank() {
        let mut e = OwdEstimator::new(100, 0.95);
        let samples: Vec<u64> = (1..=10).map(|i| i * 10_000).collect();
        for &s in &samples {
            e.push(s as i64);
        }
        // Oracle: sort, take rank ceil(0.95 * n).
        let mut sorted = samples.clone();
        sorted.sort();
        let rank = (0.95f64 * sorted.len() as f64).ceil() as usize;
        assert_eq!(e.estimate(), Some(sorted[rank - 1]));
        assert_eq!(e.estimate(), Some(100_000));
    }

    #[test]
    fn window_is_bounded() {
        let mut e = OwdEstimator::new(3, 1.0);
        for s in [500, 1, 2, 3] {
            e.push(s);
        }
        assert_eq!((e.len(), e.estimate()), (3, Some(3)));
    }

    #[test]
    fn allreduce_takes_max() {
        let p = plan_tree(100).unwrap();
        let all = vec![Some(100_000); 100];
        assert_eq!(allreduce_owd(&p, &all, 1, TimestampNs(0)).owd_g_ns, 100_000);
        let mut one = all.clone();
        one[57] = Some(300_000);
        assert_eq!(allreduce_owd(&p, &one, 1, TimestampNs(0)).owd_g_ns, 300_000);
    }

    #[test]
    fn allreduce_ignores_silent_and_falls_back() {
        let p = plan_tree(100).unwrap();
        let mut est: Vec<Option<u64>> = (0..100).map(|i| Some(1_000 + i as u64)).collect();
        est[99] = None;
        let direct = est.iter().flatten().max().copied().unwrap();
        assert_eq!(allreduce_owd(&p, &est, 7, TimestampNs(0)).owd_g_ns, direct);
        assert_eq!(
            allreduce_owd(&p, &[None; 100], 7, TimestampNs(0)).owd_g_ns,
            7
        );
    }

    #[test]
    fn aggregator_ignores_silent_children() {
        let mut a = OwdAggregator::default();
        assert_eq!(a.max(), None);
        a.report(0, 5);
        a.report(2, 9);
        a.report(0, 3);
        assert_eq!((a.max(), a.reporters()), (Some(9), 2));
    }

    #[test]
    fn deadline_stamping() {
        let g = GlobalOwd {
            owd_g_ns: 200_000,
            computed_at: TimestampNs(0),
        };
        assert_eq!(
            stamp_deadline(msg_at(0), TimestampNs(0), &g, 0).deadline,
            TimestampNs::from_us(200.0)
        );
        assert_eq!(
            stamp_deadline(msg_at(0), TimestampNs(0), &g, 10_000).deadline,
            TimestampNs::from_us(210.0)
        );
    }

    #[test]
    fn release_holds_or_misses() {
        let r = release(TimestampNs::from_us(150.0), TimestampNs::from_us(200.0));
        assert_eq!(
            (r.release_local, r.held_ns, r.missed),
            (TimestampNs::from_us(200.0), 50_000, false)
        );
        let r = release(TimestampNs::from_us(250.0), TimestampNs::from_us(200.0));
        assert_eq!(
            (r.release_local, r.held_ns, r.missed),
            (TimestampNs::from_us(250.0), 0, true)
        );
    }

    #[test]
    fn two_receiver_metrics() {
        let t = MessageTrace {
            msg_id: 0,
            send_ns: 0,
            receivers: vec![
                Some(ReceiverOutcome {
                    arrival_ns: 100_000,
                    release_ns: 100_000,
                    missed: false,
                }),
                Some(ReceiverOutcome {
                    arrival_ns: 101_000,
                    release_ns: 101_000,
                    missed: false,
                }),
            ],
        };
        let m = message_metrics(&t);
        assert_eq!((m.oml_ns, m.dws_ns), (Some(101_000), Some(1_000)));
    }

    #[test]
    fn loss_excludes_message() {
        let t = MessageTrace {
            msg_id: 0,
            send_ns: 0,
            receivers: vec![
                Some(ReceiverOutcome {
                    arrival_ns: 5,
                    release_ns: 5,
                    missed: false,
                }),
                None,
            ],
        };
        let m = message_metrics(&t);
        assert_eq!((m.dws_ns, m.losses), (None, 1));
    }

    #[test]
    fn p_fair_all_zero_is_100() {
        assert_eq!(p_fair(&[0; 50], FAIR_DWS_NS), 100);
        assert_eq!(p_fair(&[5_000; 3], FAIR_DWS_NS), 0);
    }

    fn p_fair_oracle(dws: &[u64], thr: u64) -> u32 {
        let mut v = dws.to_vec();
        v.sort();
        let mut best = 0;
        for p in 1..=100u32 {
            let rank = ((p as f64 / 100.0) * v.len() as f64).ceil() as usize;
            let rank = rank.max(1);
            if v[rank - 1] <= thr {
                best = p;
            }
        }
        best
    }

    #[test]
    fn p_fair_known_mixture() {
        // 90 fair messages, 10 unfair.
        let mut d = vec![500u64; 90];
        d.extend(vec![3_000u64; 10]);
        assert_eq!(p_fair(&d, FAIR_DWS_NS), p_fair_oracle(&d, FAIR_DWS_NS));
        assert_eq!(p_fair(&d, FAIR_DWS_NS), 90);
    }

    proptest! {
        #[test]
        fn p_fair_matches_scan(d in proptest::collection::vec(0u64..3_000, 1..300)) {
            prop_assert_eq!(p_fair(&d, FAIR_DWS_NS), p_fair_oracle(&d, FAIR_DWS_NS));
        }

        #[test]
        fn exact_clocks_no_miss_gives_zero_dws(arrivals in proptest::collection::vec(0u64..1_000_000, 1..50), slack in 0u64..1_000) {
            let deadline = arrivals.iter().max().unwrap() + slack;
            let receivers = arrivals.iter().map(|&a| {
                let r = release(TimestampNs(a), TimestampNs(deadline));
                Some(ReceiverOutcome { arrival_ns: a, release_ns: r.release_local.0, missed: r.missed })
            }).collect();
            let m = message_metrics(&MessageTrace { msg_id: 0, send_ns: 0, receivers });
            prop_assert_eq!(m.dws_ns, Some(0));
            prop_assert!(m.dws_ns <= m.raw_dws_ns);
        }

        #[test]
        fn bounded_clock_error_gives_dws_within_two_eps(
            arrivals in proptest::collection::vec((0u64..1_000_000, -100i64..=100), 1..50),
        ) {
            let eps = 100u64;
            let deadline = arrivals.iter().map(|(a, _)| a + eps).max().unwrap() + 1;
            let receivers = arrivals.iter().map(|&(a, off)| {
                let local = TimestampNs(a).offset(off);
                let r = release(local, TimestampNs(deadline));
                let true_release = if r.missed { a } else { r.release_local.offset(-off).0 };
                Some(ReceiverOutcome { arrival_ns: a, release_ns: true_release, missed: r.missed })
            }).collect();
            let m = message_metrics(&MessageTrace { msg_id: 0, send_ns: 0, receivers });
            prop_assert_eq!(m.misses, 0);
            prop_assert!(m.dws_ns.unwrap() <= 2 * eps);
        }
    }
}
