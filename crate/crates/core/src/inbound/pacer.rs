//! Delay-based pacing of a node's uplink.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::stats::nearest_rank;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacingConfig {
    pub enabled: bool,
    /// Target one-way delay `T`.
    pub threshold_us: f64,
    pub band_us: f64,
    pub up_step_us: f64,
    pub down_step_us: f64,
    /// Packets sent within this trailing window feed the estimate.
    pub window_ms: f64,
    pub adjust_period_ms: f64,
    pub initial_quantum_us: f64,
}

impl Default for PacingConfig {
    fn default() -> Self {
        PacingConfig {
            enabled: false,
            threshold_us: 100.0,
            band_us: 10.0,
            up_step_us: 20.0,
            down_step_us: 10.0,
            window_ms: 50.0,
            adjust_period_ms: 5.0,
            initial_quantum_us: 0.0,
        }
    }
}

impl PacingConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("threshold_us", self.threshold_us),
            ("band_us", self.band_us),
            ("up_step_us", self.up_step_us),
            ("down_step_us", self.down_step_us),
            ("initial_quantum_us", self.initial_quantum_us),
        ];
        for (k, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("pacing.{k} must be >= 0")));
            }
        }
        if !(self.window_ms > 0.0) || !(self.adjust_period_ms > 0.0) {
            return Err(Error::Config(
                "pacing.window_ms and pacing.adjust_period_ms must be > 0".into(),
            ));
        }
        Ok(())
    }
}

fn ns(us: f64) -> u64 {
    (us * 1e3).round() as u64
}

#[derive(Clone, Debug)]
pub struct PacerState {
    pub quantum_ns: u64,
    pub threshold_ns: u64,
    pub estimate_ns: Option<u64>,
    band_ns: u64,
    up_ns: u64,
    down_ns: u64,
    window_ns: u64,
    samples: VecDeque<(u64, u64)>,
}

impl PacerState {
    pub fn new(cfg: &PacingConfig) -> Self {
        PacerState {
            quantum_ns: ns(cfg.initial_quantum_us),
            threshold_ns: ns(cfg.threshold_us),
            estimate_ns: None,
            band_ns: ns(cfg.band_us),
            up_ns: ns(cfg.up_step_us),
            down_ns: ns(cfg.down_step_us),
            window_ns: (cfg.window_ms * 1e6).round() as u64,
            samples: VecDeque::new(),
        }
    }

    /// Records the one-way delay of a packet this node sent at `sent_ns`.
    pub fn observe(&mut self, sent_ns: u64, owd_ns: u64) {
        self.samples.push_back((sent_ns, owd_ns));
    }

    /// Median delay of packets sent in the trailing window ending at `now_ns`.
    pub fn estimate(&mut self, now_ns: u64) -> Option<u64> {
        let cutoff = now_ns.saturating_sub(self.window_ns);
        while self.samples.front().is_some_and(|s| s.0 < cutoff) {
            self.samples.pop_front();
        }
        let mut v: Vec<u64> = self.samples.iter().map(|s| s.1).collect();
        v.sort_unstable();
        nearest_rank(&v, 0.5)
    }

    /// Re-estimates and applies one pacing step; no samples leaves the quantum alone.
    pub fn adjust(&mut self, now_ns: u64) -> u64 {
        if let Some(e) = self.estimate(now_ns) {
            pace_step(self, e);
        }
        self.quantum_ns
    }
}

/// One step of the pacing rule for a fresh estimate `e`.
pub fn pace_step(p: &mut PacerState, e_ns: u64) -> u64 {
    p.estimate_ns = Some(e_ns);
    if e_ns >= p.threshold_ns + p.band_ns {
        p.quantum_ns += p.up_ns;
    } else if e_ns + p.band_ns <= p.threshold_ns {
        p.quantum_ns = p.quantum_ns.saturating_sub(p.down_ns);
    }
    p.quantum_ns
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pacer(q_us: f64) -> PacerState {
        PacerState::new(&PacingConfig {
            initial_quantum_us: q_us,
            ..PacingConfig::default()
        })
    }

    #[test]
    fn dead_zone() {
        let mut p = pacer(30.0);
        assert_eq!(pace_step(&mut p, 100_000), 30_000);
        assert_eq!(pace_step(&mut p, 109_999), 30_000);
        assert_eq!(pace_step(&mut p, 90_001), 30_000);
    }

    #[test]
    fn step_up_at_band_edge() {
        let mut p = pacer(0.0);
        assert_eq!(pace_step(&mut p, 110_000), 20_000);
    }

    #[test]
    fn step_down_clamps_at_zero() {
        let mut p = pacer(5.0);
        assert_eq!(pace_step(&mut p, 90_000), 0);
    }

    #[test]
    fn estimate_is_windowed_median() {
        let mut p = pacer(0.0);
        for (t, owd) in [(0, 500), (10_000_000, 100), (60_000_000, 30)] {
            p.observe(t, owd);
        }
        p.observe(61_000_000, 40);
        p.observe(62_000_000, 50);
        assert_eq!(p.estimate(62_000_000), Some(40));
        assert_eq!(p.estimate(200_000_000), None);
    }

    proptest! {
        #[test]
        fn sustained_high_delay_grows_without_bound(steps in 1usize..200, excess in 10_000u64..1_000_000) {
            let mut p = pacer(0.0);
            let mut last = 0;
            for _ in 0..steps {
                let e = p.threshold_ns + excess;
                let q = pace_step(&mut p, e);
                prop_assert!(q > last);
                last = q;
            }
            prop_assert_eq!(last, 20_000 * steps as u64);
        }

        #[test]
        fn sustained_low_delay_drives_to_zero(start_us in 0u32..10_000, deficit in 10_000u64..100_000) {
            let mut p = pacer(start_us as f64);
            let e = p.threshold_ns.saturating_sub(deficit);
            for _ in 0..=(start_us / 10 + 1) {
                pace_step(&mut p, e);
            }
            prop_assert_eq!(p.quantum_ns, 0);
        }
    }
}
