//! Deterministic discrete-event simulator of VM-to-VM virtual links.
//!
//! The topology is a clique: every registered VM can send to every other VM.
//! A packet pays egress serialization at the sender (FIFO per VM), a sampled
//! link delay (base + jitter + active spikes, scaled by straggler factors),
//! then waits in the receiver's bounded ingress queue for its processing
//! slot. Packets that find the ingress queue full are dropped. Links
//! themselves never lose or reorder packets.
//!
//! Reliable channels model an in-order transport: go-back-N retransmission
//! after a timeout of twice the channel's one-way-delay estimate, cumulative
//! acknowledgements, and a fixed send window exposed as credit.
//!
//! Events with equal firing times run in insertion order, and every random
//! draw comes from a stream keyed by the master seed and the link or VM it
//! belongs to, so identical inputs give bit-identical runs.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::clock::{ClockErrorModel, ClockSet, VmClock};
use crate::types::TimestampNs;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VmId(pub u32);

/// Additive jitter on top of the base latency, in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum JitterModel {
    Constant,
    Uniform {
        lo_us: f64,
        hi_us: f64,
    },
    /// Log-normal with the given median and log-space sigma.
    LogNormal {
        median_us: f64,
        sigma: f64,
    },
    /// Draws uniformly from recorded jitter samples.
    Empirical {
        samples_us: Vec<f64>,
    },
}

impl JitterModel {
    fn validate(&self) -> Result<()> {
        let ok = match self {
            JitterModel::Constant => true,
            JitterModel::Uniform { lo_us, hi_us } => *lo_us >= 0.0 && hi_us >= lo_us,
            JitterModel::LogNormal { median_us, sigma } => *median_us > 0.0 && *sigma >= 0.0,
            JitterModel::Empirical { samples_us } => {
                !samples_us.is_empty() && samples_us.iter().all(|s| *s >= 0.0 && s.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "latency.jitter: invalid parameters {self:?}"
            )))
        }
    }

    fn sample_us(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            JitterModel::Constant => 0.0,
            JitterModel::Uniform { lo_us, hi_us } => {
                if hi_us > lo_us {
                    rng.random_range(*lo_us..*hi_us)
                } else {
                    *lo_us
                }
            }
            JitterModel::LogNormal { median_us, sigma } => LogNormal::new(median_us.ln(), *sigma)
                .expect("validated")
                .sample(rng),
            JitterModel::Empirical { samples_us } => {
                samples_us[rng.random_range(0..samples_us.len())]
            }
        }
    }
}

/// Per-link Poisson spike arrivals with exponentially distributed magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeProcess {
    /// Spike arrivals per second on each link; 0 disables the process.
    pub rate_per_s: f64,
    pub magnitude_us: f64,
    pub duration_ms: f64,
}

impl Default for SpikeProcess {
    fn default() -> Self {
        SpikeProcess {
            rate_per_s: 0.0,
            magnitude_us: 50.0,
            duration_ms: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub base_us: f64,
    pub jitter: JitterModel,
    #[serde(default)]
    pub spike: SpikeProcess,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            base_us: 50.0,
            jitter: JitterModel::LogNormal {
                median_us: 0.3,
                sigma: 0.4,
            },
            spike: SpikeProcess {
                rate_per_s: 0.5,
                magnitude_us: 50.0,
                duration_ms: 1.0,
            },
        }
    }
}

impl LatencyModel {
    /// Fixed latency with no jitter and no spikes.
    pub fn constant(base_us: f64) -> Self {
        LatencyModel {
            base_us,
            jitter: JitterModel::Constant,
            spike: SpikeProcess::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_us >= 0.0 && self.base_us.is_finite()) {
            return Err(Error::Config("latency.base_us must be >= 0".into()));
        }
        let s = &self.spike;
        if s.rate_per_s < 0.0 || s.magnitude_us < 0.0 || s.duration_ms < 0.0 {
            return Err(Error::Config(
                "latency.spike parameters must be >= 0".into(),
            ));
        }
        self.jitter.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmProfile {
    pub egress_gbps: f64,
    pub ingress_queue_pkts: u32,
    /// Multiplier (>= 1) applied to every link delay through this VM.
    pub straggler_factor: f64,
    /// Processing cost per received packet.
    pub proc_delay_us: f64,
    /// Transmit-ring limit; `None` leaves the egress backlog unbounded.
    #[serde(default)]
    pub egress_queue_pkts: Option<u32>,
}

impl Default for VmProfile {
    fn default() -> Self {
        VmProfile {
            egress_gbps: 16.0,
            ingress_queue_pkts: 4096,
            straggler_factor: 1.0,
            proc_delay_us: 0.2,
            egress_queue_pkts: None,
        }
    }
}

impl VmProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.egress_gbps > 0.0) {
            return Err(Error::Config("vm.egress_gbps must be > 0".into()));
        }
        if self.ingress_queue_pkts == 0 {
            return Err(Error::Config("vm.ingress_queue_pkts must be > 0".into()));
        }
        if !(self.straggler_factor >= 1.0) {
            return Err(Error::Config("vm.straggler_factor must be >= 1".into()));
        }
        if !(self.proc_delay_us >= 0.0) {
            return Err(Error::Config("vm.proc_delay_us must be >= 0".into()));
        }
        if self.egress_queue_pkts == Some(0) {
            return Err(Error::Config(
                "vm.egress_queue_pkts must be > 0 when set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReliableConfig {
    /// Maximum unacknowledged packets per channel.
    pub window: u32,
    /// Lower bound on the retransmission timeout.
    pub min_rto_us: f64,
}

impl Default for ReliableConfig {
    fn default() -> Self {
        ReliableConfig {
            window: 32,
            min_rto_us: 20.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetConfig {
    pub seed: u64,
    pub latency: LatencyModel,
    pub clock: ClockErrorModel,
    pub reliable: ReliableConfig,
    pub trace: bool,
}

/// Anything carried over the simulated network.
pub trait Payload: Clone {
    /// Identifier written into packet traces.
    fn trace_id(&self) -> u64 {
        0
    }
}

/// Protocol logic driven by the event loop.
pub trait Handler<M: Payload> {
    fn on_message(&mut self, net: &mut Network<M>, dst: VmId, src: VmId, msg: M);

    fn on_timer(&mut self, _net: &mut Network<M>, _vm: VmId, _token: u64) {}

    /// A reliable channel from `src` to `dst` regained send credit.
    fn on_credit(&mut self, _net: &mut Network<M>, _src: VmId, _dst: VmId) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    Scheduled {
        departure: TimestampNs,
        arrival: TimestampNs,
    },
    DroppedAtEgress,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VmCounters {
    pub tx_packets: u64,
    pub rx_packets: u64,
    pub ingress_drops: u64,
    pub egress_drops: u64,
    pub out_of_order_discards: u64,
    pub retransmissions: u64,
    /// Largest egress backlog seen at send time.
    pub max_egress_backlog_ns: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub id: u64,
    pub src: u32,
    pub dst: u32,
    pub sent_ns: u64,
    pub delivered_ns: Option<u64>,
}

/// Compact record of one executed event, for determinism checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub fire_at: u64,
    pub seq: u64,
    pub kind: u8,
    pub a: u32,
    pub b: u32,
}

struct Packet<M> {
    src: u32,
    dst: u32,
    payload: M,
    depart_ns: u64,
    rel_seq: Option<u64>,
    trace_idx: Option<usize>,
}

enum EventKind {
    Arrive(u32),
    Process(u32),
    Ack {
        src: u32,
        dst: u32,
        seq: u64,
        owd_ns: u64,
    },
    Timeout {
        src: u32,
        dst: u32,
        gen: u64,
    },
    Timer {
        vm: u32,
        token: u64,
    },
}

impl EventKind {
    fn record<M>(&self, slab: &[Option<Packet<M>>]) -> (u8, u32, u32) {
        let ends = |i: &u32| {
            slab[*i as usize]
                .as_ref()
                .map_or((0, 0), |p| (p.src, p.dst))
        };
        match self {
            EventKind::Arrive(i) => (0, ends(i).0, ends(i).1),
            EventKind::Process(i) => (1, ends(i).0, ends(i).1),
            EventKind::Ack { src, dst, .. } => (2, *src, *dst),
            EventKind::Timeout { src, dst, .. } => (3, *src, *dst),
            EventKind::Timer { vm, token } => (4, *vm, *token as u32),
        }
    }
}

struct Event {
    fire_at: u64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Reversed so the std max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_at
            .cmp(&self.fire_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct VmState {
    profile: VmProfile,
    egress_free_at_ps: u64,
    ingress_busy_until: u64,
    ingress_finish: VecDeque<u64>,
    counters: VmCounters,
}

struct Spike {
    start: u64,
    end: u64,
    magnitude_ns: u64,
}

struct LinkState {
    jitter_rng: ChaCha8Rng,
    spike_rng: ChaCha8Rng,
    next_spike_at: Option<u64>,
    spikes: Vec<Spike>,
    last_arrival: u64,
    counters: LinkCounters,
}

struct Channel<M> {
    next_seq: u64,
    acked: u64,
    unacked: VecDeque<(u64, M, u32)>,
    owd_est_ns: f64,
    timeout_pending: bool,
    gen: u64,
    rx_expected: u64,
}

const LINK_STREAM_SALT: u64 = 0x11AC_5EED_0000_0002;

pub struct Network<M: Payload> {
    cfg: NetConfig,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Event>,
    vms: Vec<VmState>,
    clocks: ClockSet,
    links: FxHashMap<(u32, u32), LinkState>,
    channels: FxHashMap<(u32, u32), Channel<M>>,
    packets: Vec<Option<Packet<M>>>,
    free_slots: Vec<u32>,
    trace: Option<Vec<TraceRow>>,
    events: Option<Vec<EventRecord>>,
}

impl<M: Payload> Network<M> {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.latency.validate()?;
        cfg.clock.validate()?;
        if cfg.reliable.window == 0 {
            return Err(Error::Config("reliable.window must be > 0".into()));
        }
        let trace = cfg.trace.then(Vec::new);
        Ok(Network {
            clocks: ClockSet::new(cfg.clock, cfg.seed),
            cfg,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            vms: Vec::new(),
            links: FxHashMap::default(),
            channels: FxHashMap::default(),
            packets: Vec::new(),
            free_slots: Vec::new(),
            trace,
            events: None,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn add_vm(&mut self, profile: VmProfile) -> Result<VmId> {
        profile.validate()?;
        let id = self.vms.len() as u32;
        self.vms.push(VmState {
            profile,
            egress_free_at_ps: 0,
            ingress_busy_until: 0,
            ingress_finish: VecDeque::new(),
            counters: VmCounters::default(),
        });
        self.clocks.register();
        Ok(VmId(id))
    }

    pub fn vm_count(&self) -> usize {
        self.vms.len()
    }

    pub fn now(&self) -> TimestampNs {
        TimestampNs(self.now)
    }

    pub fn profile(&self, vm: VmId) -> Result<&VmProfile> {
        self.vms
            .get(vm.0 as usize)
            .map(|v| &v.profile)
            .ok_or(Error::UnknownVm(vm.0))
    }

    pub fn set_profile(&mut self, vm: VmId, profile: VmProfile) -> Result<()> {
        profile.validate()?;
        self.vm_mut(vm.0)?.profile = profile;
        Ok(())
    }

    pub fn clock(&self, vm: VmId) -> Result<VmClock> {
        self.clocks.get(vm.0)
    }

    pub fn set_clock_offset(&mut self, vm: VmId, offset_ns: i64) -> Result<()> {
        self.clocks.set_offset(vm.0, offset_ns)
    }

    /// The VM's local clock reading at the current simulated time.
    pub fn clock_read(&self, vm: VmId) -> Result<TimestampNs> {
        self.clocks.clock_read(vm.0, self.now())
    }

    /// Starts recording every executed event.
    pub fn record_events(&mut self) {
        self.events = Some(Vec::new());
    }

    pub fn event_log(&self) -> &[EventRecord] {
        self.events.as_deref().unwrap_or(&[])
    }

    pub fn trace_rows(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("msg_id,src,dst,sent_ns,delivered_ns\n");
        for r in self.trace_rows() {
            let delivered = r
                .delivered_ns
                .map_or_else(|| "DROP".to_string(), |d| d.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.id, r.src, r.dst, r.sent_ns, delivered
            ));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn link_counters(&self, src: VmId, dst: VmId) -> LinkCounters {
        self.links
            .get(&(src.0, dst.0))
            .map(|l| l.counters)
            .unwrap_or_default()
    }

    /// Counters of every link that carried traffic, sorted by (src, dst).
    pub fn all_link_counters(&self) -> Vec<((u32, u32), LinkCounters)> {
        let mut v: Vec<_> = self.links.iter().map(|(k, l)| (*k, l.counters)).collect();
        v.sort_unstable_by_key(|(k, _)| *k);
        v
    }

    pub fn vm_counters(&self, vm: VmId) -> Result<VmCounters> {
        self.vms
            .get(vm.0 as usize)
            .map(|v| v.counters)
            .ok_or(Error::UnknownVm(vm.0))
    }

    pub fn total_drops(&self) -> u64 {
        self.vms
            .iter()
            .map(|v| v.counters.ingress_drops + v.counters.egress_drops)
            .sum()
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn vm_mut(&mut self, id: u32) -> Result<&mut VmState> {
        self.vms.get_mut(id as usize).ok_or(Error::UnknownVm(id))
    }

    fn check_vm(&self, id: VmId) -> Result<()> {
        if (id.0 as usize) < self.vms.len() {
            Ok(())
        } else {
            Err(Error::UnknownVm(id.0))
        }
    }

    fn push(&mut self, fire_at: u64, kind: EventKind) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Event { fire_at, seq, kind });
    }

    pub fn schedule_timer(&mut self, vm: VmId, at: TimestampNs, token: u64) -> Result<()> {
        self.check_vm(vm)?;
        self.push(at.0.max(self.now), EventKind::Timer { vm: vm.0, token });
        Ok(())
    }

    fn link(&mut self, src: u32, dst: u32) -> &mut LinkState {
        link_entry(
            &mut self.links,
            self.cfg.seed,
            &self.cfg.latency.spike,
            src,
            dst,
        )
    }

    /// Adds `magnitude_us` to every delay sampled on `src -> dst` in `[at, at + duration]`.
    pub fn inject_spike(
        &mut self,
        src: VmId,
        dst: VmId,
        at: TimestampNs,
        magnitude_us: f64,
        duration_ms: f64,
    ) -> Result<()> {
        self.check_vm(src)?;
        self.check_vm(dst)?;
        if magnitude_us < 0.0 || duration_ms < 0.0 {
            return Err(Error::Config(
                "spike magnitude and duration must be >= 0".into(),
            ));
        }
        let start = at.0;
        let end = start + (duration_ms * 1e6) as u64;
        let magnitude_ns = (magnitude_us * 1e3).round() as u64;
        self.link(src.0, dst.0).spikes.push(Spike {
            start,
            end,
            magnitude_ns,
        });
        Ok(())
    }

    /// Samples the one-way delay of a packet entering `src -> dst` at `t` and
    /// returns its arrival time, keeping the link FIFO.
    fn link_arrival(&mut self, src: u32, dst: u32, t: u64) -> u64 {
        let latency = &self.cfg.latency;
        let spike_cfg = latency.spike;
        let straggle = self.vms[src as usize].profile.straggler_factor
            * self.vms[dst as usize].profile.straggler_factor;
        let link = link_entry(&mut self.links, self.cfg.seed, &spike_cfg, src, dst);
        let jitter_us = latency.jitter.sample_us(&mut link.jitter_rng);
        if spike_cfg.rate_per_s > 0.0 {
            let exp_gap = Exp::new(spike_cfg.rate_per_s).expect("rate > 0");
            let exp_mag = (spike_cfg.magnitude_us > 0.0)
                .then(|| Exp::new(1.0 / spike_cfg.magnitude_us).expect("mag > 0"));
            while let Some(start) = link.next_spike_at.filter(|s| *s <= t) {
                let mag_us = exp_mag
                    .as_ref()
                    .map_or(0.0, |d| d.sample(&mut link.spike_rng));
                link.spikes.push(Spike {
                    start,
                    end: start + (spike_cfg.duration_ms * 1e6) as u64,
                    magnitude_ns: (mag_us * 1e3).round() as u64,
                });
                let gap_s: f64 = exp_gap.sample(&mut link.spike_rng);
                link.next_spike_at = Some(start + ((gap_s * 1e9) as u64).max(1));
            }
        }
        let mut spike_ns = 0u64;
        if !link.spikes.is_empty() {
            link.spikes.retain(|s| s.end >= t);
            spike_ns = link
                .spikes
                .iter()
                .filter(|s| s.start <= t)
                .map(|s| s.magnitude_ns)
                .sum();
        }
        let delay_ns = ((latency.base_us + jitter_us) * 1e3 * straggle + spike_ns as f64 * straggle)
            .round() as u64;
        let arrival = (t + delay_ns).max(link.last_arrival);
        link.last_arrival = arrival;
        link.counters.sent += 1;
        arrival
    }

    /// Sends one datagram. Fails only on unknown endpoints.
    pub fn send(
        &mut self,
        src: VmId,
        dst: VmId,
        payload: M,
        size_bytes: u32,
    ) -> Result<SendOutcome> {
        self.check_vm(src)?;
        self.check_vm(dst)?;
        Ok(self.transmit(src.0, dst.0, payload, size_bytes, None))
    }

    fn transmit(
        &mut self,
        src: u32,
        dst: u32,
        payload: M,
        size: u32,
        rel_seq: Option<u64>,
    ) -> SendOutcome {
        let now = self.now;
        let now_ps = now * 1000;
        let vm = &mut self.vms[src as usize];
        let ser_ps = ((size as f64 * 8.0 / vm.profile.egress_gbps) * 1000.0).round() as u64;
        let start_ps = vm.egress_free_at_ps.max(now_ps);
        let backlog_ps = start_ps - now_ps;
        if let Some(limit) = vm.profile.egress_queue_pkts {
            if ser_ps > 0 && backlog_ps >= limit as u64 * ser_ps {
                vm.counters.egress_drops += 1;
                let link = self.link(src, dst);
                link.counters.sent += 1;
                link.counters.dropped += 1;
                return SendOutcome::DroppedAtEgress;
            }
        }
        vm.counters.max_egress_backlog_ns =
            vm.counters.max_egress_backlog_ns.max(backlog_ps / 1000);
        vm.counters.tx_packets += 1;
        vm.egress_free_at_ps = start_ps + ser_ps;
        let depart_ns = start_ps / 1000;
        let on_wire_ns = vm.egress_free_at_ps / 1000;
        let arrival = self.link_arrival(src, dst, on_wire_ns);
        let trace_idx = self.trace.as_mut().map(|t| {
            t.push(TraceRow {
                id: payload.trace_id(),
                src,
                dst,
                sent_ns: depart_ns,
                delivered_ns: None,
            });
            t.len() - 1
        });
        let pkt = Packet {
            src,
            dst,
            payload,
            depart_ns,
            rel_seq,
            trace_idx,
        };
        let slot = self.store(pkt);
        self.push(arrival, EventKind::Arrive(slot));
        SendOutcome::Scheduled {
            departure: TimestampNs(depart_ns),
            arrival: TimestampNs(arrival),
        }
    }

    fn channel(&mut self, src: u32, dst: u32) -> &mut Channel<M> {
        let init = self.cfg.latency.base_us * 1e3;
        self.channels.entry((src, dst)).or_insert_with(|| Channel {
            next_seq: 0,
            acked: 0,
            unacked: VecDeque::new(),
            owd_est_ns: init,
            timeout_pending: false,
            gen: 0,
            rx_expected: 0,
        })
    }

    /// Whether the reliable channel `src -> dst` has window space.
    pub fn has_credit(&self, src: VmId, dst: VmId) -> bool {
        self.channels
            .get(&(src.0, dst.0))
            .is_none_or(|c| c.next_seq - c.acked < self.cfg.reliable.window as u64)
    }

    pub fn in_flight(&self, src: VmId, dst: VmId) -> u64 {
        self.channels
            .get(&(src.0, dst.0))
            .map_or(0, |c| c.next_seq - c.acked)
    }

    /// Current one-way-delay estimate of a reliable channel.
    pub fn channel_owd_estimate(&self, src: VmId, dst: VmId) -> Option<TimestampNs> {
        self.channels
            .get(&(src.0, dst.0))
            .map(|c| TimestampNs(c.owd_est_ns.round() as u64))
    }

    /// Sends over the in-order reliable channel `src -> dst`. The window is
    /// advisory: callers should check [`Network::has_credit`] first.
    pub fn send_reliable(
        &mut self,
        src: VmId,
        dst: VmId,
        payload: M,
        size_bytes: u32,
    ) -> Result<()> {
        self.check_vm(src)?;
        self.check_vm(dst)?;
        let ch = self.channel(src.0, dst.0);
        let seq = ch.next_seq;
        ch.next_seq += 1;
        ch.unacked.push_back((seq, payload.clone(), size_bytes));
        self.transmit(src.0, dst.0, payload, size_bytes, Some(seq));
        Ok(())
    }

    /// Runs every event with `fire_at <= t` and leaves the clock at `t`.
    pub fn run_until<H: Handler<M>>(&mut self, handler: &mut H, t: TimestampNs) -> usize {
        let mut processed = 0;
        while self.queue.peek().is_some_and(|e| e.fire_at <= t.0) {
            let ev = self.queue.pop().expect("peeked");
            self.dispatch(handler, ev);
            processed += 1;
        }
        self.now = self.now.max(t.0);
        processed
    }

    /// Runs until the event queue drains.
    pub fn run<H: Handler<M>>(&mut self, handler: &mut H) -> usize {
        let mut processed = 0;
        while let Some(ev) = self.queue.pop() {
            self.dispatch(handler, ev);
            processed += 1;
        }
        processed
    }

    fn dispatch<H: Handler<M>>(&mut self, handler: &mut H, ev: Event) {
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        if let Some(log) = self.events.as_mut() {
            let (kind, a, b) = ev.kind.record(&self.packets);
            log.push(EventRecord {
                fire_at: ev.fire_at,
                seq: ev.seq,
                kind,
                a,
                b,
            });
        }
        match ev.kind {
            EventKind::Arrive(slot) => self.on_arrive(slot),
            EventKind::Process(slot) => {
                let pkt = self.take(slot);
                self.on_process(handler, pkt)
            }
            EventKind::Ack {
                src,
                dst,
                seq,
                owd_ns,
            } => {
                let ch = self.channel(src, dst);
                if seq + 1 > ch.acked {
                    ch.acked = seq + 1;
                }
                while ch.unacked.front().is_some_and(|(s, _, _)| *s < ch.acked) {
                    ch.unacked.pop_front();
                }
                ch.owd_est_ns = 0.875 * ch.owd_est_ns + 0.125 * owd_ns as f64;
                handler.on_credit(self, VmId(src), VmId(dst));
            }
            EventKind::Timeout { src, dst, gen } => self.on_timeout(src, dst, gen),
            EventKind::Timer { vm, token } => handler.on_timer(self, VmId(vm), token),
        }
    }

    fn store(&mut self, pkt: Packet<M>) -> u32 {
        match self.free_slots.pop() {
            Some(i) => {
                self.packets[i as usize] = Some(pkt);
                i
            }
            None => {
                self.packets.push(Some(pkt));
                (self.packets.len() - 1) as u32
            }
        }
    }

    fn take(&mut self, slot: u32) -> Packet<M> {
        self.free_slots.push(slot);
        self.packets[slot as usize]
            .take()
            .expect("live packet slot")
    }

    fn on_arrive(&mut self, slot: u32) {
        let now = self.now;
        let (src, dst) = {
            let p = self.packets[slot as usize]
                .as_ref()
                .expect("live packet slot");
            (p.src, p.dst)
        };
        let vm = &mut self.vms[dst as usize];
        while vm.ingress_finish.front().is_some_and(|f| *f <= now) {
            vm.ingress_finish.pop_front();
        }
        if vm.ingress_finish.len() >= vm.profile.ingress_queue_pkts as usize {
            vm.counters.ingress_drops += 1;
            let pkt = self.take(slot);
            self.link(src, dst).counters.dropped += 1;
            if pkt.rel_seq.is_some() {
                self.arm_timeout(src, dst, pkt.depart_ns);
            }
            return;
        }
        let proc_ns = (vm.profile.proc_delay_us * 1e3).round() as u64;
        let finish = vm.ingress_busy_until.max(now) + proc_ns;
        vm.ingress_busy_until = finish;
        vm.ingress_finish.push_back(finish);
        self.push(finish, EventKind::Process(slot));
    }

    fn on_process<H: Handler<M>>(&mut self, handler: &mut H, pkt: Packet<M>) {
        let now = self.now;
        self.vms[pkt.dst as usize].counters.rx_packets += 1;
        self.link(pkt.src, pkt.dst).counters.delivered += 1;
        if let (Some(idx), Some(trace)) = (pkt.trace_idx, self.trace.as_mut()) {
            trace[idx].delivered_ns = Some(now);
        }
        if let Some(seq) = pkt.rel_seq {
            let expected = self.channel(pkt.src, pkt.dst).rx_expected;
            if seq != expected {
                self.vms[pkt.dst as usize].counters.out_of_order_discards += 1;
                if seq > expected {
                    self.arm_timeout(pkt.src, pkt.dst, pkt.depart_ns);
                }
                return;
            }
            self.channel(pkt.src, pkt.dst).rx_expected += 1;
            let ack_at = now + (self.cfg.latency.base_us * 1e3).round() as u64;
            let owd_ns = now.saturating_sub(pkt.depart_ns);
            self.push(
                ack_at,
                EventKind::Ack {
                    src: pkt.src,
                    dst: pkt.dst,
                    seq,
                    owd_ns,
                },
            );
        }
        handler.on_message(self, VmId(pkt.dst), VmId(pkt.src), pkt.payload);
    }

    fn arm_timeout(&mut self, src: u32, dst: u32, depart_ns: u64) {
        let min_rto = (self.cfg.reliable.min_rto_us * 1e3) as u64;
        let now = self.now;
        let ch = self.channel(src, dst);
        if ch.timeout_pending {
            return;
        }
        ch.timeout_pending = true;
        let rto = ((2.0 * ch.owd_est_ns) as u64).max(min_rto);
        let gen = ch.gen;
        self.push(
            (depart_ns + rto).max(now),
            EventKind::Timeout { src, dst, gen },
        );
    }

    fn on_timeout(&mut self, src: u32, dst: u32, gen: u64) {
        let ch = self.channel(src, dst);
        if ch.gen != gen {
            return;
        }
        ch.gen += 1;
        ch.timeout_pending = false;
        let resend: Vec<(u64, M, u32)> = ch.unacked.iter().cloned().collect();
        self.vms[src as usize].counters.retransmissions += resend.len() as u64;
        for (seq, payload, size) in resend {
            self.transmit(src, dst, payload, size, Some(seq));
        }
    }
}

fn link_entry<'a>(
    links: &'a mut FxHashMap<(u32, u32), LinkState>,
    seed: u64,
    spike: &SpikeProcess,
    src: u32,
    dst: u32,
) -> &'a mut LinkState {
    links.entry((src, dst)).or_insert_with(|| {
        let stream = ((src as u64) << 32 | dst as u64) << 1;
        let mut jitter_rng = ChaCha8Rng::seed_from_u64(seed ^ LINK_STREAM_SALT);
        jitter_rng.set_stream(stream);
        let mut spike_rng = ChaCha8Rng::seed_from_u64(seed ^ LINK_STREAM_SALT);
        spike_rng.set_stream(stream | 1);
        let next_spike_at = (spike.rate_per_s > 0.0).then(|| {
            let gap_s: f64 = Exp::new(spike.rate_per_s)
                .expect("rate > 0")
                .sample(&mut spike_rng);
            (gap_s * 1e9) as u64
        });
        LinkState {
            jitter_rng,
            spike_rng,
            next_spike_at,
            spikes: Vec::new(),
            last_arrival: 0,
            counters: LinkCounters::default(),
        }
    })
}
