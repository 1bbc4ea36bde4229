//! Monte Carlo analysis of hedged tree latency, independent of the event simulator.
//!
//! Layer 0 holds the root's `F` children and layer `n` holds `F^(n+1)` nodes, so a
//! leaf sits `D + 1` hops below the root. A node reaches the root through the
//! cheapest of its `H + 1` candidate parents `floor(i / F) - j`, wrapped modulo the
//! parent layer size.

use std::fmt::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::stats::{mean, nearest_rank_f64, std_dev};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HopDelay {
    Uniform { lo_us: f64, hi_us: f64 },
    Constant { us: f64 },
}

impl Default for HopDelay {
    fn default() -> Self {
        HopDelay::Uniform {
            lo_us: 20.0,
            hi_us: 80.0,
        }
    }
}

impl HopDelay {
    fn at(&self, u: f64) -> f64 {
        match *self {
            HopDelay::Uniform { lo_us, hi_us } => lo_us + (hi_us - lo_us) * u,
            HopDelay::Constant { us } => us,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HedgeModel {
    pub depth: u32,
    pub fanout: u32,
    pub hedge: u32,
    pub hop: HopDelay,
    pub iterations: u64,
    pub seed: u64,
    pub leaf: u64,
}

impl Default for HedgeModel {
    fn default() -> Self {
        HedgeModel {
            depth: 3,
            fanout: 10,
            hedge: 0,
            hop: HopDelay::default(),
            iterations: 100_000,
            seed: 1,
            leaf: 0,
        }
    }
}

impl HedgeModel {
    fn layer_size(&self, n: u32) -> u64 {
        (self.fanout as u64).pow(n + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.fanout < 1 {
            return bad("fanout must be >= 1");
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1");
        }
        if (self.fanout as f64).powi(self.depth as i32 + 1) > 1e15 {
            return bad("fanout^(depth+1) is too large");
        }
        if self.depth > 0 && self.hedge as u64 >= self.layer_size(self.depth - 1) {
            return bad("hedge must be smaller than the leaf's parent layer");
        }
        if self.leaf >= self.layer_size(self.depth) {
            return bad("leaf index is outside the leaf layer");
        }
        match self.hop {
            HopDelay::Uniform { lo_us, hi_us }
                if !(lo_us >= 0.0 && hi_us >= lo_us && hi_us.is_finite()) =>
            {
                bad("uniform hop delay needs 0 <= lo_us <= hi_us")
            }
            HopDelay::Constant { us } if !(us >= 0.0 && us.is_finite()) => {
                bad("constant hop delay must be >= 0")
            }
            _ => Ok(()),
        }
    }
}

/// One realization of every link delay, addressed by link so that draws do not
/// depend on evaluation order.
struct Draw<'a> {
    model: &'a HedgeModel,
    rng: ChaCha8Rng,
    offsets: Vec<u128>,
    memo: FxHashMap<(u32, u64), f64>,
}

impl<'a> Draw<'a> {
    fn new(model: &'a HedgeModel, iteration: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        rng.set_stream(iteration);
        let mut offsets = vec![model.layer_size(0) as u128];
        for n in 1..=model.depth {
            let prev = *offsets.last().unwrap();
            offsets.push(prev + model.layer_size(n) as u128 * model.layer_size(n - 1) as u128);
        }
        Draw {
            model,
            rng,
            offsets,
            memo: FxHashMap::default(),
        }
    }

    fn link(&mut self, id: u128) -> f64 {
        self.rng.set_word_pos(id * 2);
        let u: f64 = self.rng.random();
        self.model.hop.at(u)
    }

    fn latency(&mut self, n: u32, i: u64) -> f64 {
        if n == 0 {
            return self.link(i as u128);
        }
        if let Some(&v) = self.memo.get(&(n, i)) {
            return v;
        }
        let f = self.model.fanout as u64;
        let parents = self.model.layer_size(n - 1);
        let h = (self.model.hedge as u64).min(parents - 1);
        let mut best = f64::INFINITY;
        for j in 0..=h {
            let p = (i / f + parents - j) % parents;
            let id = self.offsets[n as usize - 1] + i as u128 * parents as u128 + p as u128;
            let v = self.latency(n - 1, p) + self.link(id);
            best = best.min(v);
        }
        self.memo.insert((n, i), best);
        best
    }
}

/// Latency from the root to `model.leaf` in draw number `iteration`.
pub fn sample_latency(model: &HedgeModel, iteration: u64) -> f64 {
    Draw::new(model, iteration).latency(model.depth, model.leaf)
}

/// All iterations in parallel; identical for any thread count.
pub fn run(model: &HedgeModel) -> Result<Vec<f64>> {
    model.validate()?;
    Ok((0..model.iterations)
        .into_par_iter()
        .map(|k| sample_latency(model, k))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean_us: f64,
    pub std_us: f64,
    /// `(latency_us, cum_prob)` at each requested quantile.
    pub cdf: Vec<(f64, f64)>,
}

pub const DEFAULT_QUANTILES: usize = 100;

/// Mean, sample standard deviation and the nearest-rank CDF at `points` evenly spaced quantiles.
pub fn summarize(samples: &[f64], points: usize) -> Result<Summary> {
    if samples.len() < 2 {
        return Err(Error::Config("summarize needs at least two samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cdf = (1..=points.max(1))
        .map(|k| {
            let q = k as f64 / points.max(1) as f64;
            (nearest_rank_f64(&sorted, q).unwrap(), q)
        })
        .collect();
    Ok(Summary {
        mean_us: mean(samples),
        std_us: std_dev(samples),
        cdf,
    })
}

pub fn write_cdf_csv(path: &Path, summary: &Summary) -> Result<()> {
    let mut out = String::from("latency_us,cum_prob\n");
    for (v, p) in &summary.cdf {
        writeln!(out, "{v:.3},{p:.4}").expect("string write");
    }
    crate::engine::write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(depth: u32, fanout: u32, hedge: u32) -> HedgeModel {
        HedgeModel {
            depth,
            fanout,
            hedge,
            iterations: 20_000,
            ..HedgeModel::default()
        }
    }

    #[test]
    fn constant_hops_no_hedge() {
        let m = HedgeModel {
            depth: 1,
            fanout: 4,
            hop: HopDelay::Constant { us: 7.5 },
            ..model(1, 4, 0)
        };
        assert_eq!(sample_latency(&m, 0), 15.0);
        let deep = HedgeModel { depth: 3, ..m };
        assert_eq!(sample_latency(&deep, 9), 30.0);
    }

    #[test]
    fn summarize_basics() {
        let s = summarize(&[0.0, 2.0], 2).unwrap();
        assert_eq!(s.mean_us, 1.0);
        assert_eq!(s.cdf, vec![(0.0, 0.5), (2.0, 1.0)]);
        assert_eq!(summarize(&[3.0; 10], 4).unwrap().std_us, 0.0);
        assert!(summarize(&[1.0], 4).is_err());
    }

    #[test]
    fn depth_raises_mean_and_spread() {
        let mut last = (0.0, 0.0);
        for d in 1..=4 {
            let s = summarize(&run(&model(d, 4, 0)).unwrap(), 10).unwrap();
            assert!(s.mean_us > last.0 && s.std_us > last.1, "{d} {s:?}");
            last = (s.mean_us, s.std_us);
        }
    }

    #[test]
    fn hedging_gains_diminish() {
        let st: Vec<Summary> = (0..3)
            .map(|h| summarize(&run(&model(3, 4, h)).unwrap(), 10).unwrap())
            .collect();
        assert!(st[1].mean_us < st[0].mean_us && st[1].std_us < st[0].std_us);
        assert!(st[2].mean_us < st[1].mean_us && st[2].std_us < st[1].std_us);
        assert!(st[0].mean_us - st[1].mean_us > st[1].mean_us - st[2].mean_us);
        assert!(st[0].std_us - st[1].std_us > st[1].std_us - st[2].std_us);
    }

    #[test]
    fn parallel_run_matches_sequential() {
        let m = HedgeModel {
            iterations: 500,
            ..model(2, 3, 1)
        };
        let seq: Vec<f64> = (0..500).map(|k| sample_latency(&m, k)).collect();
        assert_eq!(run(&m).unwrap(), seq);
    }

    #[test]
    fn stable_across_seeds() {
        let st: Vec<Summary> = (1..=3)
            .map(|seed| {
                summarize(
                    &run(&HedgeModel {
                        seed,
                        hedge: 1,
                        ..HedgeModel::default()
                    })
                    .unwrap(),
                    10,
                )
                .unwrap()
            })
            .collect();
        for s in &st[1..] {
            assert!((s.mean_us / st[0].mean_us - 1.0).abs() < 0.02);
            assert!((s.std_us / st[0].std_us - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn validation() {
        assert!(model(2, 3, 3).validate().is_ok());
        assert!(model(2, 3, 9).validate().is_err());
        assert!(HedgeModel {
            iterations: 0,
            ..model(2, 3, 0)
        }
        .validate()
        .is_err());
        assert!(HedgeModel {
            leaf: 27,
            ..model(2, 3, 0)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn csv_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cdf.csv");
        write_cdf_csv(&p, &summarize(&[1.0, 2.0, 3.0, 4.0], 4).unwrap()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next(), Some("latency_us,cum_prob"));
        assert_eq!(text.lines().last(), Some("4.000,1.0000"));
    }

    proptest! {
        #[test]
        fn extra_hedge_never_hurts(depth in 1u32..4, fanout in 2u32..5, h in 0u32..3, leaf in 0u64..64, k in 0u64..1_000) {
            let base = HedgeModel { depth, fanout, hedge: h, ..HedgeModel::default() };
            let leaf = leaf % base.layer_size(depth);
            let a = HedgeModel { leaf, ..base.clone() };
            let b = HedgeModel { leaf, hedge: h + 1, ..base };
            prop_assert!(sample_latency(&b, k) <= sample_latency(&a, k));
        }

        #[test]
        fn hedge_beyond_the_layer_changes_nothing(k in 0u64..1_000, extra in 0u32..5) {
            let full = HedgeModel { depth: 1, fanout: 3, hedge: 2, ..HedgeModel::default() };
            let more = HedgeModel { hedge: 2 + extra, ..full.clone() };
            prop_assert_eq!(sample_latency(&full, k), sample_latency(&more, k));
        }
    }
}
