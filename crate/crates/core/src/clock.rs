//! Synchronized-clock model.
//!
//! Every VM reads `true_time + offset_error`. The offset is drawn once per VM
//! per run from a configurable distribution; there is no drift.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::types::TimestampNs;
use crate::{Error, Result};

/// Offset-error distribution for the per-VM clocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClockErrorModel {
    /// Perfect synchronization.
    Exact,
    /// Zero-mean normal; sigma 50 ns keeps the 90th percentile of |offset| near 82 ns.
    Normal { sigma_ns: f64 },
    /// Uniform in `[-bound_ns, bound_ns]`; gives a hard bound on the error.
    Uniform { bound_ns: f64 },
}

impl Default for ClockErrorModel {
    fn default() -> Self {
        ClockErrorModel::Normal { sigma_ns: 50.0 }
    }
}

impl ClockErrorModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClockErrorModel::Exact => Ok(()),
            ClockErrorModel::Normal { sigma_ns } if sigma_ns >= 0.0 && sigma_ns.is_finite() => {
                Ok(())
            }
            ClockErrorModel::Uniform { bound_ns } if bound_ns >= 0.0 && bound_ns.is_finite() => {
                Ok(())
            }
            _ => Err(Error::Config(format!("clock: invalid parameters {self:?}"))),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> i64 {
        match *self {
            ClockErrorModel::Exact => 0,
            ClockErrorModel::Normal { sigma_ns } => {
                if sigma_ns == 0.0 {
                    return 0;
                }
                Normal::new(0.0, sigma_ns)
                    .expect("validated sigma")
                    .sample(rng)
                    .round() as i64
            }
            ClockErrorModel::Uniform { bound_ns } => {
                if bound_ns == 0.0 {
                    return 0;
                }
                Uniform::new_inclusive(-bound_ns, bound_ns)
                    .expect("validated bound")
                    .sample(rng)
                    .round() as i64
            }
        }
    }
}

/// One VM's clock.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VmClock {
    pub offset_error_ns: i64,
}

impl VmClock {
    pub fn read(&self, true_time: TimestampNs) -> TimestampNs {
        true_time.offset(self.offset_error_ns)
    }

    /// Inverse of [`VmClock::read`]: the true time at which this clock shows `local`.
    pub fn true_time_of(&self, local: TimestampNs) -> TimestampNs {
        local.offset(-self.offset_error_ns)
    }
}

/// Clocks of all registered VMs, drawn from per-VM RNG streams so that adding
/// a VM never changes the offsets of the others.
#[derive(Clone, Debug)]
pub struct ClockSet {
    model: ClockErrorModel,
    seed: u64,
    clocks: Vec<VmClock>,
}

const CLOCK_STREAM_SALT: u64 = 0xC10C_0FF5_E700_0001;

impl ClockSet {
    pub fn new(model: ClockErrorModel, seed: u64) -> Self {
        ClockSet {
            model,
            seed,
            clocks: Vec::new(),
        }
    }

    /// Registers the next VM and returns its clock.
    pub fn register(&mut self) -> VmClock {
        let vm = self.clocks.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ CLOCK_STREAM_SALT);
        rng.set_stream(vm);
        let clock = VmClock {
            offset_error_ns: self.model.sample(&mut rng),
        };
        self.clocks.push(clock);
        clock
    }

    /// Overrides the offset of an already registered VM.
    pub fn set_offset(&mut self, vm: u32, offset_error_ns: i64) -> Result<()> {
        let c = self
            .clocks
            .get_mut(vm as usize)
            .ok_or(Error::UnknownVm(vm))?;
        c.offset_error_ns = offset_error_ns;
        Ok(())
    }

    pub fn get(&self, vm: u32) -> Result<VmClock> {
        self.clocks
            .get(vm as usize)
            .copied()
            .ok_or(Error::UnknownVm(vm))
    }

    pub fn clock_read(&self, vm: u32, true_time: TimestampNs) -> Result<TimestampNs> {
        Ok(self.get(vm)?.read(true_time))
    }

    pub fn len(&self) -> usize {
        self.clocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clocks.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_offset_is_identity() {
        let c = VmClock { offset_error_ns: 0 };
        assert_eq!(c.read(TimestampNs(1000)), TimestampNs(1000));
    }

    #[test]
    fn offset_is_additive() {
        let c = VmClock {
            offset_error_ns: 80,
        };
        assert_eq!(c.read(TimestampNs(1000)), TimestampNs(1080));
        assert_eq!(c.true_time_of(TimestampNs(1080)), TimestampNs(1000));
    }

    #[test]
    fn unknown_vm_is_config_error() {
        let clocks = ClockSet::new(ClockErrorModel::Exact, 1);
        assert!(matches!(
            clocks.clock_read(3, TimestampNs(0)),
            Err(Error::UnknownVm(3))
        ));
    }

    #[test]
    fn default_offsets_have_90p_within_100ns() {
        let mut clocks = ClockSet::new(ClockErrorModel::default(), 7);
        let mut errs: Vec<u64> = (0..100_000)
            .map(|_| clocks.register().offset_error_ns.unsigned_abs())
            .collect();
        errs.sort_unstable();
        let p90 = errs[(0.9 * errs.len() as f64).ceil() as usize - 1];
        assert!(p90 <= 100, "90th percentile |offset| = {p90} ns");
    }

    #[test]
    fn adding_vms_does_not_perturb_existing_offsets() {
        let mut a = ClockSet::new(ClockErrorModel::default(), 11);
        let first: Vec<_> = (0..10).map(|_| a.register()).collect();
        let mut b = ClockSet::new(ClockErrorModel::default(), 11);
        let second: Vec<_> = (0..20).map(|_| b.register()).collect();
        assert_eq!(first[..], second[..10]);
    }

    #[test]
    fn reading_is_monotone_in_true_time() {
        let mut clocks = ClockSet::new(ClockErrorModel::Uniform { bound_ns: 100.0 }, 3);
        let c = clocks.register();
        let mut last = TimestampNs::ZERO;
        for t in (0..10_000u64).step_by(37) {
            let r = c.read(TimestampNs(t));
            assert!(r >= last);
            last = r;
        }
    }
}
