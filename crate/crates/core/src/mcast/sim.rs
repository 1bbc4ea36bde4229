//! Event-driven outbound multicast over the tree, with proxy hedging,
//! receiver hedging, deadline all-reduce and hold-and-release.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{DedupBuffer, DedupOutcome, Topology, TreePlan};
use crate::hold_release::{
    message_metrics, record_owd, release, stamp_deadline, summarize, GlobalOwd, HoldReleaseConfig,
    MessageMetrics, MessageTrace, OwdAggregator, OwdEstimator, ReceiverOutcome, Summary,
};
use crate::netsim::{Handler, NetConfig, Network, Payload, TraceRow, VmId, VmProfile};
use crate::types::{MulticastMessage, NodeAddr, TimestampNs, DEFAULT_MESSAGE_BYTES};
use crate::{Error, Result};

/// A latency spike pinned to one tree link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeInjection {
    pub from: NodeAddr,
    pub to: NodeAddr,
    pub at_ms: f64,
    pub magnitude_us: f64,
    pub duration_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MulticastConfig {
    pub net: NetConfig,
    /// Plan over leaf VMs; with receiver hedging it has two leaves per receiver.
    pub plan: TreePlan,
    pub receiver_hedging: bool,
    pub rate_per_s: f64,
    pub duration_s: f64,
    /// Messages sent before this offset are simulated but not measured.
    pub warmup_ms: f64,
    pub size_bytes: u32,
    pub hold_release: HoldReleaseConfig,
    pub vm: VmProfile,
    pub vm_overrides: Vec<(NodeAddr, VmProfile)>,
    pub clock_offsets: Vec<(NodeAddr, i64)>,
    pub spikes: Vec<SpikeInjection>,
    pub record_deliveries: bool,
}

impl MulticastConfig {
    pub fn new(plan: TreePlan) -> Self {
        MulticastConfig {
            net: NetConfig::default(),
            plan,
            receiver_hedging: false,
            rate_per_s: 5_000.0,
            duration_s: 1.0,
            warmup_ms: 0.0,
            size_bytes: DEFAULT_MESSAGE_BYTES,
            hold_release: HoldReleaseConfig::default(),
            vm: VmProfile::default(),
            vm_overrides: Vec::new(),
            clock_offsets: Vec::new(),
            spikes: Vec::new(),
            record_deliveries: false,
        }
    }

    /// Number of market participants served.
    pub fn receivers(&self) -> u32 {
        if self.receiver_hedging {
            self.plan.n_receivers / 2
        } else {
            self.plan.n_receivers
        }
    }

    pub fn message_count(&self) -> u64 {
        (self.rate_per_s * self.duration_s).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_per_s > 0.0 && self.rate_per_s.is_finite()) {
            return Err(Error::Config("workload.rate_per_s must be > 0".into()));
        }
        if !(self.duration_s > 0.0) {
            return Err(Error::Config("workload.duration_s must be > 0".into()));
        }
        if self.receiver_hedging
            && (self.plan.n_receivers < 2 || !self.plan.n_receivers.is_multiple_of(2))
        {
            return Err(Error::Config(
                "receiver hedging needs an even leaf count".into(),
            ));
        }
        if self.size_bytes == 0 {
            return Err(Error::Config("workload.size_bytes must be > 0".into()));
        }
        self.hold_release.validate()?;
        self.vm.validate()
    }
}

/// One `(message, leaf VM)` delivery record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeliveryRow {
    pub msg_id: u64,
    pub leaf: u32,
    pub copies_received: u32,
    pub first_arrival_ns: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct MulticastReport {
    pub plan: TreePlan,
    pub messages: Vec<MessageMetrics>,
    pub summary: Summary,
    /// Copies received per (non-root node, message) -> occurrences.
    pub copy_histogram: BTreeMap<u32, u64>,
    /// Data packets transmitted by each VM, indexed by VM id.
    pub data_tx: Vec<u64>,
    pub messages_sent: u64,
    pub ingress_drops: u64,
    pub egress_drops: u64,
    pub dedup_violations: u64,
    pub clamped_samples: u64,
    /// `(time_ns, owd_g_ns)` each time the root's global OWD changed.
    pub owd_g_history: Vec<(u64, u64)>,
    pub deliveries: Vec<DeliveryRow>,
    pub trace: Vec<TraceRow>,
    pub topology: Topology,
}

impl MulticastReport {
    /// Mean data packets per message sent by the proxies of `layer`.
    pub fn proxy_packets_per_message(&self, layer: usize) -> Vec<f64> {
        self.topology
            .layer_vms(layer)
            .map(|vm| self.data_tx[vm as usize] as f64 / self.messages_sent.max(1) as f64)
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
enum Pkt {
    Data(MulticastMessage),
    Report(u64),
}

impl Payload for Pkt {
    fn trace_id(&self) -> u64 {
        match self {
            Pkt::Data(m) => m.msg_id,
            Pkt::Report(_) => u64::MAX,
        }
    }
}

const TOKEN_SEND: u64 = 0;
const TOKEN_REPORT: u64 = 1;
const TOKEN_AGGREGATE: u64 = 2;
const REPORT_BYTES: u32 = 64;
/// Messages stay open for late copies this long before their metrics are frozen.
const FINALIZE_HORIZON_NS: u64 = 100_000_000;

struct Active {
    msg_id: u64,
    send_ns: u64,
    copies: Vec<u16>,
    outcomes: Vec<Option<ReceiverOutcome>>,
    leaf_first: Option<Vec<u64>>,
}

struct Sim<'a> {
    cfg: &'a MulticastConfig,
    topo: Topology,
    leaf_layer: usize,
    n_mps: u32,
    dedup: Vec<DedupBuffer>,
    estimators: Vec<OwdEstimator>,
    aggs: Vec<OwdAggregator>,
    owd_g: Option<GlobalOwd>,
    owd_g_history: Vec<(u64, u64)>,
    headroom_ns: u64,
    margin_ns: u64,
    active: VecDeque<Active>,
    done: Vec<MessageMetrics>,
    copy_hist: BTreeMap<u32, u64>,
    deliveries: Vec<DeliveryRow>,
    data_tx: Vec<u64>,
    next_id: u64,
    n_msgs: u64,
    end_ns: u64,
    warmup_ns: u64,
}

impl Sim<'_> {
    fn send_period_at(&self, k: u64) -> u64 {
        (k as f64 * 1e9 / self.cfg.rate_per_s).round() as u64
    }

    fn find_active(&mut self, msg_id: u64) -> Option<&mut Active> {
        let first = self.active.front()?.msg_id;
        if msg_id < first {
            return None;
        }
        self.active.get_mut((msg_id - first) as usize)
    }

    fn finalize_front(&mut self) {
        let a = self.active.pop_front().expect("non-empty");
        for &c in &a.copies[1..] {
            *self.copy_hist.entry(c as u32).or_default() += 1;
        }
        if let Some(first) = &a.leaf_first {
            let leaves = self.topo.layer_vms(self.leaf_layer);
            for (i, vm) in leaves.enumerate() {
                self.deliveries.push(DeliveryRow {
                    msg_id: a.msg_id,
                    leaf: i as u32,
                    copies_received: a.copies[vm as usize] as u32,
                    first_arrival_ns: (first[i] != u64::MAX).then_some(first[i]),
                });
            }
        }
        if a.send_ns >= self.warmup_ns {
            let trace = MessageTrace {
                msg_id: a.msg_id,
                send_ns: a.send_ns,
                receivers: a.outcomes,
            };
            self.done.push(message_metrics(&trace));
        }
    }

    fn root_send(&mut self, net: &mut Network<Pkt>) {
        let now = net.now().0;
        let root = VmId(0);
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = MulticastMessage::new(id, net.clock_read(root).expect("root"));
        msg.size_bytes = self.cfg.size_bytes;
        let hr = &self.cfg.hold_release;
        if hr.enabled {
            let g = match (hr.static_headroom_us, self.owd_g) {
                (Some(s), _) => GlobalOwd {
                    owd_g_ns: (s * 1e3).round() as u64,
                    computed_at: TimestampNs(now),
                },
                (None, Some(g)) => g,
                (None, None) => GlobalOwd {
                    owd_g_ns: self.headroom_ns,
                    computed_at: TimestampNs(now),
                },
            };
            msg = stamp_deadline(msg, msg.send_ts, &g, self.margin_ns);
        }
        while self
            .active
            .front()
            .is_some_and(|a| a.send_ns + FINALIZE_HORIZON_NS < now)
        {
            self.finalize_front();
        }
        let n_leaves = self.topo.layer_vms(self.leaf_layer).len();
        self.active.push_back(Active {
            msg_id: id,
            send_ns: now,
            copies: vec![0; self.topo.vm_count() as usize],
            outcomes: vec![None; self.n_mps as usize],
            leaf_first: self.cfg.record_deliveries.then(|| vec![u64::MAX; n_leaves]),
        });
        let plan = &self.cfg.plan;
        let rounds = if plan.root_hedge { plan.hedge + 1 } else { 1 };
        for _ in 0..rounds {
            for vm in self.topo.layer_vms(0) {
                self.data_tx[0] += 1;
                net.send(root, VmId(vm), Pkt::Data(msg), msg.size_bytes)
                    .expect("registered");
            }
        }
        if self.next_id < self.n_msgs {
            let at = self.send_period_at(self.next_id);
            net.schedule_timer(root, TimestampNs(at), TOKEN_SEND)
                .expect("root");
        }
    }

    fn forward(&mut self, net: &mut Network<Pkt>, vm: VmId, addr: NodeAddr, msg: MulticastMessage) {
        let plan = &self.cfg.plan;
        let layer = addr.layer as usize;
        let parents = plan.layer_sizes[layer];
        let child_base = self.topo.vm(NodeAddr::new(addr.layer + 1, 0)).0;
        for j in 0..=plan.hedge {
            let sibling = (addr.index + parents - j % parents) % parents;
            for c in plan.children_range(layer, sibling, msg.msg_id) {
                self.data_tx[vm.0 as usize] += 1;
                net.send(vm, VmId(child_base + c), Pkt::Data(msg), msg.size_bytes)
                    .expect("registered");
            }
        }
    }

    fn leaf_receive(&mut self, net: &mut Network<Pkt>, vm: VmId, leaf: u32, msg: MulticastMessage) {
        let now = net.now();
        let clock = net.clock(vm).expect("registered");
        let local = clock.read(now);
        record_owd(&mut self.estimators[leaf as usize], &msg, local);
        let (release_ns, missed) = if self.cfg.hold_release.enabled && msg.has_deadline() {
            let r = release(local, msg.deadline);
            if r.missed {
                (now.0, true)
            } else {
                (clock.true_time_of(r.release_local).0.max(now.0), false)
            }
        } else {
            (now.0, false)
        };
        let mp = (leaf % self.n_mps) as usize;
        if let Some(a) = self.find_active(msg.msg_id) {
            if let Some(first) = a.leaf_first.as_mut() {
                first[leaf as usize] = now.0;
            }
            let slot = &mut a.outcomes[mp];
            match slot {
                None => {
                    *slot = Some(ReceiverOutcome {
                        arrival_ns: now.0,
                        release_ns,
                        missed,
                    })
                }
                Some(o) => {
                    o.arrival_ns = o.arrival_ns.min(now.0);
                    if release_ns < o.release_ns {
                        o.release_ns = release_ns;
                        o.missed = missed;
                    }
                }
            }
        }
    }

    fn on_report_timer(&mut self, net: &mut Network<Pkt>, vm: VmId, token: u64) {
        let addr = self.topo.addr(vm);
        let value = if token == TOKEN_REPORT {
            self.estimators[addr.index as usize].estimate()
        } else {
            self.aggs[vm.0 as usize].max()
        };
        if let Some(v) = value {
            let parent = self.topo.vm(self.cfg.plan.static_parent(addr));
            net.send(vm, parent, Pkt::Report(v), REPORT_BYTES)
                .expect("registered");
        }
        let hr = &self.cfg.hold_release;
        let period_ms = if token == TOKEN_REPORT {
            hr.report_period_ms
        } else {
            hr.aggregate_period_ms
        };
        let next = net.now().0 + (period_ms * 1e6).round() as u64;
        if next <= self.end_ns {
            net.schedule_timer(vm, TimestampNs(next), token)
                .expect("registered");
        }
    }
}

impl Handler<Pkt> for Sim<'_> {
    fn on_message(&mut self, net: &mut Network<Pkt>, dst: VmId, src: VmId, pkt: Pkt) {
        match pkt {
            Pkt::Data(msg) => {
                if let Some(a) = self.find_active(msg.msg_id) {
                    a.copies[dst.0 as usize] = a.copies[dst.0 as usize].saturating_add(1);
                }
                if self.dedup[dst.0 as usize].accept(msg.msg_id) != DedupOutcome::Accept {
                    return;
                }
                let addr = self.topo.addr(dst);
                if addr.layer as usize == self.leaf_layer {
                    self.leaf_receive(net, dst, addr.index, msg);
                } else {
                    self.forward(net, dst, addr, msg);
                }
            }
            Pkt::Report(v) => {
                let child = self.topo.addr(src).index;
                self.aggs[dst.0 as usize].report(child, v);
                if dst.0 == 0 {
                    let g = self.aggs[0].max().expect("just reported");
                    if self.owd_g.is_none_or(|o| o.owd_g_ns != g) {
                        self.owd_g_history.push((net.now().0, g));
                    }
                    self.owd_g = Some(GlobalOwd {
                        owd_g_ns: g,
                        computed_at: net.now(),
                    });
                }
            }
        }
    }

    fn on_timer(&mut self, net: &mut Network<Pkt>, vm: VmId, token: u64) {
        match token {
            TOKEN_SEND => self.root_send(net),
            _ => self.on_report_timer(net, vm, token),
        }
    }
}

/// Runs one multicast experiment to completion.
pub fn run_multicast(cfg: &MulticastConfig) -> Result<MulticastReport> {
    cfg.validate()?;
    let plan = &cfg.plan;
    let topo = Topology::new(plan);
    let mut net: Network<Pkt> = Network::new(cfg.net.clone())?;
    for _ in 0..topo.vm_count() {
        net.add_vm(cfg.vm)?;
    }
    for (addr, profile) in &cfg.vm_overrides {
        net.set_profile(topo.try_vm(*addr)?, *profile)?;
    }
    for (addr, off) in &cfg.clock_offsets {
        net.set_clock_offset(topo.try_vm(*addr)?, *off)?;
    }
    for s in &cfg.spikes {
        let (a, b) = (topo.try_vm(s.from)?, topo.try_vm(s.to)?);
        net.inject_spike(
            a,
            b,
            TimestampNs::from_ms(s.at_ms),
            s.magnitude_us,
            s.duration_ms,
        )?;
    }

    let n_msgs = cfg.message_count();
    let leaf_layer = plan.leaf_layer();
    let n_leaves = plan.layer_sizes[leaf_layer];
    let hr = &cfg.hold_release;
    let last_send = ((n_msgs.max(1) - 1) as f64 * 1e9 / cfg.rate_per_s).round() as u64;
    let rate_buf = cfg.rate_per_s.ceil() as u64;
    let mut sim = Sim {
        cfg,
        leaf_layer,
        n_mps: cfg.receivers(),
        dedup: (0..topo.vm_count())
            .map(|_| DedupBuffer::new(rate_buf))
            .collect(),
        estimators: (0..n_leaves)
            .map(|_| OwdEstimator::new(hr.window, hr.percentile))
            .collect(),
        aggs: vec![OwdAggregator::default(); topo.vm_count() as usize],
        owd_g: None,
        owd_g_history: Vec::new(),
        headroom_ns: (hr
            .initial_headroom_us
            .unwrap_or(5.0 * cfg.net.latency.base_us)
            * 1e3)
            .round() as u64,
        margin_ns: (hr.margin_us * 1e3).round() as u64,
        active: VecDeque::new(),
        done: Vec::with_capacity(n_msgs as usize),
        copy_hist: BTreeMap::new(),
        deliveries: Vec::new(),
        data_tx: vec![0; topo.vm_count() as usize],
        next_id: 0,
        n_msgs,
        end_ns: last_send,
        warmup_ns: (cfg.warmup_ms * 1e6).round() as u64,
        topo: topo.clone(),
    };

    if n_msgs > 0 {
        net.schedule_timer(VmId(0), TimestampNs::ZERO, TOKEN_SEND)?;
    }
    if hr.enabled && hr.static_headroom_us.is_none() {
        let report = TimestampNs::from_ms(hr.report_period_ms);
        let aggregate = TimestampNs::from_ms(hr.aggregate_period_ms);
        if report.0 <= last_send {
            for vm in topo.layer_vms(leaf_layer) {
                net.schedule_timer(VmId(vm), report, TOKEN_REPORT)?;
            }
        }
        if aggregate.0 <= last_send {
            for layer in plan.proxy_layers() {
                for vm in topo.layer_vms(layer) {
                    net.schedule_timer(VmId(vm), aggregate, TOKEN_AGGREGATE)?;
                }
            }
        }
    }
    net.run(&mut sim);
    while !sim.active.is_empty() {
        sim.finalize_front();
    }

    let (mut ingress, mut egress) = (0, 0);
    for vm in 0..topo.vm_count() {
        let c = net.vm_counters(VmId(vm))?;
        ingress += c.ingress_drops;
        egress += c.egress_drops;
    }
    Ok(MulticastReport {
        plan: plan.clone(),
        summary: summarize(&sim.done),
        messages: sim.done,
        copy_histogram: sim.copy_hist,
        data_tx: sim.data_tx,
        messages_sent: sim.next_id,
        ingress_drops: ingress,
        egress_drops: egress,
        dedup_violations: sim.dedup.iter().map(|d| d.violations()).sum(),
        clamped_samples: sim.estimators.iter().map(|e| e.clamped()).sum(),
        owd_g_history: sim.owd_g_history,
        deliveries: sim.deliveries,
        trace: net.trace_rows().to_vec(),
        topology: topo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ClockErrorModel;
    use crate::mcast::plan_tree;
    use crate::netsim::LatencyModel;

    fn quiet(plan: TreePlan) -> MulticastConfig {
        let mut c = MulticastConfig::new(plan);
        c.net.latency = LatencyModel::constant(50.0);
        c.net.clock = ClockErrorModel::Exact;
        c.rate_per_s = 1_000.0;
        c.duration_s = 0.05;
        c
    }

    #[test]
    fn single_unicast_owd_is_link_delay() {
        let mut c = quiet(TreePlan::new(1, 1, 1, 0).unwrap());
        c.hold_release.enabled = false;
        c.duration_s = 0.001;
        let r = run_multicast(&c).unwrap();
        let m = r.messages[0];
        // base + serialization + processing
        let ser = (466.0 * 8.0 / 16.0f64).round() as u64;
        assert_eq!(m.raw_oml_ns, Some(50_000 + ser + 200));
    }

    #[test]
    fn lossless_copy_audit() {
        for h in 0..3 {
            let c = quiet(plan_tree(100).unwrap().with_hedge(h).unwrap());
            let r = run_multicast(&c).unwrap();
            assert_eq!(
                r.copy_histogram.keys().copied().collect::<Vec<_>>(),
                vec![h + 1],
                "H={h}"
            );
            assert!(r.messages.iter().all(|m| m.losses == 0));
        }
    }

    #[test]
    fn proxies_send_h_plus_one_times_f() {
        let c = quiet(plan_tree(100).unwrap().with_hedge(1).unwrap());
        let r = run_multicast(&c).unwrap();
        assert!(r.proxy_packets_per_message(0).iter().all(|&p| p == 20.0));
    }

    #[test]
    fn exact_clocks_give_zero_dws() {
        let mut c = quiet(plan_tree(100).unwrap());
        c.net.latency = LatencyModel::default();
        let r = run_multicast(&c).unwrap();
        assert_eq!(r.summary.misses, 0);
        assert!(r.messages.iter().all(|m| m.dws_ns == Some(0)));
        assert!(r.messages.iter().all(|m| m.dws_ns <= m.raw_dws_ns));
    }

    #[test]
    fn receiver_hedging_takes_min_of_pair() {
        let mut c = quiet(plan_tree(200).unwrap());
        c.receiver_hedging = true;
        c.hold_release.enabled = false;
        let r = run_multicast(&c).unwrap();
        assert_eq!(c.receivers(), 100);
        assert!(r.messages.iter().all(|m| m.losses == 0));
    }

    #[test]
    fn deadlines_follow_reports() {
        let mut c = quiet(plan_tree(100).unwrap());
        c.duration_s = 0.35;
        let r = run_multicast(&c).unwrap();
        assert!(!r.owd_g_history.is_empty());
        let (t, g) = r.owd_g_history[0];
        assert!(t > 100_000_000 && g > 100_000 && g < 250_000, "{t} {g}");
    }

    #[test]
    fn deterministic_runs() {
        let mut c = quiet(plan_tree(100).unwrap().with_hedge(1).unwrap());
        c.net.latency = LatencyModel::default();
        c.net.clock = ClockErrorModel::default();
        let a = run_multicast(&c).unwrap();
        let b = run_multicast(&c).unwrap();
        assert_eq!(a.messages, b.messages);
    }

    #[test]
    fn spike_on_single_path_inflates_owd() {
        let mut c = quiet(TreePlan::new(1, 1, 1, 0).unwrap());
        c.hold_release.enabled = false;
        c.duration_s = 0.01;
        let base = run_multicast(&c).unwrap();
        c.spikes.push(SpikeInjection {
            from: NodeAddr::ROOT,
            to: NodeAddr::new(0, 0),
            at_ms: 4.5,
            magnitude_us: 30.0,
            duration_ms: 1.0,
        });
        let spiked = run_multicast(&c).unwrap();
        for (a, b) in base.messages.iter().zip(&spiked.messages) {
            let inside = (4_500_000..=5_500_000).contains(&(a.send_ns + 233));
            let extra = b.raw_oml_ns.unwrap() - a.raw_oml_ns.unwrap();
            assert_eq!(extra, if inside { 30_000 } else { 0 }, "msg {}", a.msg_id);
        }
    }
}
