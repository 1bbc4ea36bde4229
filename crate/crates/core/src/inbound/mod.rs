//! Order submission: gateways feed a reverse tree of proxies, each running a
//! sequencer over its children and an egress queue (LOQ or FIFO), into a root
//! sequencer in front of the matching engine.

pub mod fairness;
pub mod pacer;
pub mod workload;

use std::collections::BTreeSet;
use std::path::Path;

use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::engine::{write_file, LimitOrderBook, MidPrice, Trade};
use crate::loq::{EpochSource, LoqState, OrderQueue};
use crate::mcast::{plan_tree, Topology, TreePlan};
use crate::netsim::{Handler, NetConfig, Network, Payload, VmId, VmProfile};
use crate::sequencer::{Dequeued, Heartbeat, SeqVariant, SequencerState};
use crate::stats::nearest_rank;
use crate::types::{MpId, NodeAddr, Order, OrderKey, Side, TimestampNs, DEFAULT_MESSAGE_BYTES};
use crate::{Error, Result};

pub use fairness::{fairness_oracle, unfairness_ratio, OracleCase, OracleOutcome};
pub use pacer::{pace_step, PacerState, PacingConfig};
pub use workload::{generate, GenOrder, Workload, WorkloadConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct InboundConfig {
    pub net: NetConfig,
    /// Route orders through proxies; otherwise gateways send straight to the root.
    pub tree: bool,
    pub fanout: Option<u32>,
    pub depth: Option<u32>,
    pub sequencer: bool,
    pub seq_variant: SeqVariant,
    /// LOQ egress queues; FIFO otherwise.
    pub loq: bool,
    /// LOQ action-window half-width; `None` treats every order as critical.
    pub w: Option<i64>,
    pub heartbeat_us: f64,
    /// Delay from a mid-price change at the engine to every node observing it.
    pub md_delay_us: f64,
    pub pacing: PacingConfig,
    pub gateway_vm: VmProfile,
    pub proxy_vm: VmProfile,
    pub root_vm: VmProfile,
    pub order_bytes: u32,
    pub rate_window_ms: f64,
    /// Simulated time after the last generated order.
    pub drain_ms: f64,
    /// External mid-price changes `(at, m)`; replaces the engine as the source
    /// of epochs when set.
    pub mid_schedule: Option<Vec<(TimestampNs, i64)>>,
}

impl Default for InboundConfig {
    fn default() -> Self {
        InboundConfig {
            net: NetConfig::default(),
            tree: true,
            fanout: None,
            depth: None,
            sequencer: true,
            seq_variant: SeqVariant::Heap,
            loq: true,
            w: Some(2),
            heartbeat_us: 200.0,
            md_delay_us: 60.0,
            pacing: PacingConfig::default(),
            gateway_vm: VmProfile::default(),
            proxy_vm: VmProfile::default(),
            root_vm: VmProfile::default(),
            order_bytes: DEFAULT_MESSAGE_BYTES,
            rate_window_ms: 10.0,
            drain_ms: 200.0,
            mid_schedule: None,
        }
    }
}

impl InboundConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.heartbeat_us > 0.0) {
            return Err(Error::Config("inbound.heartbeat_us must be > 0".into()));
        }
        if !(self.md_delay_us >= 0.0) {
            return Err(Error::Config("inbound.md_delay_us must be >= 0".into()));
        }
        if !(self.rate_window_ms > 0.0) || !(self.drain_ms >= 0.0) {
            return Err(Error::Config(
                "inbound.rate_window_ms must be > 0 and drain_ms >= 0".into(),
            ));
        }
        if self.order_bytes == 0 {
            return Err(Error::Config("inbound.order_bytes must be > 0".into()));
        }
        if self.w.is_some_and(|w| w < 0) {
            return Err(Error::Config("inbound.w must be >= 0".into()));
        }
        if let Some(s) = &self.mid_schedule {
            if s.windows(2).any(|p| p[0].0 >= p[1].0) {
                return Err(Error::Config(
                    "inbound.mid_schedule times must increase".into(),
                ));
            }
        }
        self.pacing.validate()?;
        for p in [&self.gateway_vm, &self.proxy_vm, &self.root_vm] {
            p.validate()?;
        }
        Ok(())
    }

    /// Shape of the reverse tree over `n` gateways.
    pub fn plan(&self, n: u32) -> Result<TreePlan> {
        if !self.tree {
            return TreePlan::new(n, n, 1, 0);
        }
        let smallest_depth = |f: u32| {
            let mut d = 2;
            while (f as u64).saturating_pow(d) < n as u64 {
                d += 1;
            }
            d
        };
        let smallest_fanout = |d: u32| {
            let mut f = 1u32;
            while (f as u64).pow(d) < n as u64 {
                f += 1;
            }
            f
        };
        if self.depth.is_some_and(|d| d < 2) {
            return Err(Error::Config(
                "inbound.depth must be >= 2 with the tree enabled".into(),
            ));
        }
        match (self.fanout, self.depth) {
            (Some(f), Some(d)) => TreePlan::new(n, f, d, 0),
            (Some(f), None) if f >= 2 => TreePlan::new(n, f, smallest_depth(f), 0),
            (Some(_), None) => Err(Error::Config(
                "inbound.fanout must be >= 2 without an explicit depth".into(),
            )),
            (None, Some(d)) => TreePlan::new(n, smallest_fanout(d), d, 0),
            (None, None) => {
                let p = plan_tree(n)?;
                if p.depth >= 2 {
                    Ok(p)
                } else {
                    TreePlan::new(n, smallest_fanout(2), 2, 0)
                }
            }
        }
    }
}

/// What is carried on an uplink: the order and the sender's transmit time.
#[derive(Clone, Debug)]
pub struct Wire {
    pub order: Order,
    pub sent_ns: u64,
}

impl Payload for Wire {
    fn trace_id(&self) -> u64 {
        self.order.gen_ts.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Gateway(MpId),
    Proxy,
    Root,
}

struct Node {
    role: Role,
    parent: Option<VmId>,
    /// Position among the parent's inputs.
    pos: usize,
    seq: Option<SequencerState>,
    last_seen: Vec<Option<TimestampNs>>,
    queue: OrderQueue,
    hb: Heartbeat,
    pacer: Option<PacerState>,
    next_send_ns: u64,
    wake_at: Option<u64>,
    last_stamp: Option<TimestampNs>,
}

/// Lifecycle of one workload order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OrderRecord {
    pub mp: MpId,
    pub gen_true: TimestampNs,
    /// Gateway clock reading stamped on the order.
    pub gen_ts: TimestampNs,
    pub side: Side,
    pub price: i64,
    pub qty: u64,
    /// Epoch the gateway filed it under.
    pub epoch: u64,
    pub root_arrival: Option<TimestampNs>,
    pub engine_arrival: Option<TimestampNs>,
    pub matched: Option<TimestampNs>,
}

impl OrderRecord {
    pub fn key(&self) -> OrderKey {
        OrderKey {
            gen_ts: self.gen_ts,
            mp: self.mp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RateRow {
    pub window_start_ns: u64,
    pub orders_received: u64,
    pub orders_matched: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InboundSummary {
    pub orders: u64,
    pub received: u64,
    pub engine_arrivals: u64,
    pub matched: u64,
    pub trades: u64,
    pub matched_latency_p50_us: f64,
    pub matched_latency_p99_us: f64,
    pub burst_matched_latency_p50_us: f64,
    /// Orders per second reaching the root during burst windows.
    pub burst_received_rate: f64,
    pub burst_matched_rate: f64,
    pub received_rate: f64,
    pub matched_rate: f64,
    pub drops: u64,
    pub retransmissions: u64,
    pub out_of_order_discards: u64,
    pub dummies_discarded: u64,
    pub epoch_skew: u64,
    pub root_peers: u64,
    pub unfairness_ratio: f64,
    pub max_quantum_us: f64,
}

#[derive(Clone, Debug)]
pub struct InboundReport {
    pub plan: TreePlan,
    /// Indexed like the workload's orders.
    pub orders: Vec<OrderRecord>,
    /// Orders in the sequence the engine received them.
    pub sequenced: Vec<Order>,
    pub trades: Vec<Trade>,
    pub book: LimitOrderBook,
    pub rates: Vec<RateRow>,
    pub root_peers: BTreeSet<u32>,
    pub summary: InboundSummary,
}

impl InboundReport {
    pub fn write_orders_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("mp,gen_ts,engine_arrival_ns,matched_ns,root_arrival_ns,epoch\n");
        let opt = |t: Option<TimestampNs>| t.map_or(String::new(), |t| t.0.to_string());
        for r in &self.orders {
            let matched = r
                .matched
                .map_or("UNMATCHED".to_string(), |t| t.0.to_string());
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.mp.0,
                r.gen_ts.0,
                opt(r.engine_arrival),
                matched,
                opt(r.root_arrival),
                r.epoch
            ));
        }
        write_file(path, &s)
    }

    pub fn write_rate_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("window_start_ns,orders_received,orders_matched\n");
        for r in &self.rates {
            s.push_str(&format!(
                "{},{},{}\n",
                r.window_start_ns, r.orders_received, r.orders_matched
            ));
        }
        write_file(path, &s)
    }

    pub fn write_sequenced_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("seq,mp,gen_ts,side,price,qty,epoch\n");
        for (i, o) in self.sequenced.iter().enumerate() {
            s.push_str(&format!(
                "{i},{},{},{},{},{},{}\n",
                o.mp.0,
                o.gen_ts.0,
                o.side.as_str(),
                o.price,
                o.qty,
                o.epoch
            ));
        }
        write_file(path, &s)
    }
}

const GEN: u64 = 1;
const HEARTBEAT: u64 = 2;
const WAKE: u64 = 3;
const PACE: u64 = 4;
const MID: u64 = 5;
const SCHEDULE: u64 = 6;

fn token(kind: u64, payload: u64) -> u64 {
    kind << 56 | payload
}

struct Sim<'a> {
    cfg: &'a InboundConfig,
    workload: &'a Workload,
    nodes: Vec<Option<Node>>,
    order_bytes: u32,
    hb_ns: u64,
    pace_ns: u64,
    md_delay_ns: u64,
    cursor: usize,
    gateway_vm: Vec<VmId>,
    records: Vec<OrderRecord>,
    index: FxHashMap<OrderKey, u32>,
    book: LimitOrderBook,
    sequenced: Vec<Order>,
    trades: Vec<Trade>,
    mids: Vec<MidPrice>,
    reference_epoch: u64,
    epoch_skew: u64,
    dummies_discarded: u64,
    root_peers: BTreeSet<u32>,
    max_quantum_ns: u64,
    error: Option<Error>,
}

impl Sim<'_> {
    fn fail(&mut self, e: Error) {
        self.error.get_or_insert(e);
    }

    fn node(&mut self, vm: VmId) -> &mut Node {
        self.nodes[vm.0 as usize].as_mut().expect("active node")
    }

    fn on_generate(&mut self, net: &mut Network<Wire>) {
        let now = net.now();
        while let Some(g) = self
            .workload
            .orders
            .get(self.cursor)
            .filter(|g| g.at <= now)
            .copied()
        {
            let idx = self.cursor;
            self.cursor += 1;
            let vm = self.gateway_vm[g.mp.0 as usize];
            let clock = match net.clock_read(vm) {
                Ok(t) => t,
                Err(e) => return self.fail(e),
            };
            let reference = self.reference_epoch;
            let node = self.node(vm);
            // Clocks saturate at zero, so keep stamps strictly increasing per MP.
            let gen_ts = node.last_stamp.map_or(clock, |l| clock.max(l + 1));
            node.last_stamp = Some(gen_ts);
            let order = g.to_order(gen_ts);
            let epoch = node.queue.current_epoch();
            node.queue.push(order, true);
            if epoch < reference {
                self.epoch_skew += 1;
            }
            let rec = &mut self.records[idx];
            rec.gen_ts = gen_ts;
            rec.epoch = epoch;
            if self.index.insert(order.key(), idx as u32).is_some() {
                return self.fail(Error::InvalidOrder(format!(
                    "duplicate order key {} at {gen_ts}",
                    g.mp
                )));
            }
            self.try_send(net, vm);
        }
        if let Some(next) = self.workload.orders.get(self.cursor) {
            let vm = self.gateway_vm[next.mp.0 as usize];
            let _ = net.schedule_timer(vm, next.at, token(GEN, 0));
        }
    }

    fn try_send(&mut self, net: &mut Network<Wire>, vm: VmId) {
        let now = net.now().0;
        let bytes = self.order_bytes;
        let node = self.nodes[vm.0 as usize].as_mut().expect("active node");
        let Some(parent) = node.parent else { return };
        while !node.queue.is_empty() && net.has_credit(vm, parent) {
            if node.pacer.is_some() && now < node.next_send_ns {
                if node.wake_at != Some(node.next_send_ns) {
                    node.wake_at = Some(node.next_send_ns);
                    let _ = net.schedule_timer(vm, TimestampNs(node.next_send_ns), token(WAKE, 0));
                }
                return;
            }
            let order = node.queue.pop().expect("non-empty");
            if let Err(e) = net.send_reliable(
                vm,
                parent,
                Wire {
                    order,
                    sent_ns: now,
                },
                bytes,
            ) {
                self.error.get_or_insert(e);
                return;
            }
            node.hb.sent(TimestampNs(now));
            if let Some(p) = &node.pacer {
                node.next_send_ns = now + p.quantum_ns;
            }
        }
    }

    fn on_heartbeat(&mut self, net: &mut Network<Wire>, vm: VmId) {
        let now = net.now();
        let clock = net.clock_read(vm).unwrap_or(now);
        let node = self.node(vm);
        if node.queue.is_empty() {
            let dummy = match node.role {
                Role::Gateway(mp) => {
                    let stamp = node.last_stamp.map_or(clock, |l| clock.max(l));
                    node.hb.heartbeat(mp, now, stamp)
                }
                Role::Proxy => match node.last_seen.iter().copied().collect::<Option<Vec<_>>>() {
                    Some(seen) => {
                        let watermark = seen.into_iter().min().unwrap_or(now);
                        node.hb.heartbeat(MpId(0), now, watermark)
                    }
                    None => None,
                },
                Role::Root => None,
            };
            if let Some(mut d) = dummy {
                d.epoch = node.queue.current_epoch();
                let stamp = matches!(node.role, Role::Gateway(_));
                node.queue.push(d, stamp);
                self.try_send(net, vm);
            }
        }
        let _ = net.schedule_timer(vm, now + self.hb_ns, token(HEARTBEAT, 0));
    }

    fn submit(&mut self, net: &mut Network<Wire>, order: Order) {
        let now = net.now();
        let Some(&idx) = self.index.get(&order.key()) else {
            return self.fail(Error::InvalidOrder(format!(
                "unknown order {} at {}",
                order.mp, order.gen_ts
            )));
        };
        self.records[idx as usize].engine_arrival = Some(now);
        self.sequenced.push(order);
        let res = match self.book.submit(&order, now) {
            Ok(r) => r,
            Err(e) => return self.fail(e),
        };
        for t in &res.trades {
            for k in [t.bid, t.ask] {
                if let Some(&i) = self.index.get(&k) {
                    self.records[i as usize].matched.get_or_insert(now);
                }
            }
        }
        self.trades.extend(res.trades);
        if res.mid_changed && self.cfg.mid_schedule.is_none() {
            let mid = self.book.mid_price();
            self.reference_epoch = mid.epoch;
            self.mids.push(mid);
            let t = now + self.md_delay_ns;
            let _ = net.schedule_timer(VmId(0), t, token(MID, (self.mids.len() - 1) as u64));
        }
    }

    fn broadcast_mid(&mut self, m: i64, epoch: u64) {
        for n in self.nodes.iter_mut().flatten() {
            n.queue.observe_mid(m, epoch);
        }
    }
}

impl Handler<Wire> for Sim<'_> {
    fn on_message(&mut self, net: &mut Network<Wire>, dst: VmId, src: VmId, msg: Wire) {
        let now = net.now();
        let Wire { order, sent_ns } = msg;
        let (pos, role) = {
            let sender = self.node(src);
            if let Some(p) = sender.pacer.as_mut() {
                p.observe(sent_ns, now.0.saturating_sub(sent_ns));
            }
            let pos = sender.pos;
            (pos, self.node(dst).role)
        };
        match role {
            Role::Root => {
                self.root_peers.insert(src.0);
                if !order.is_dummy {
                    if let Some(&i) = self.index.get(&order.key()) {
                        self.records[i as usize].root_arrival = Some(now);
                    }
                }
                let node = self.nodes[dst.0 as usize].as_mut().expect("root");
                match node.seq.as_mut() {
                    Some(seq) => {
                        if let Err(e) = seq.seq_enqueue(order, pos) {
                            return self.fail(e);
                        }
                        loop {
                            let step = self.nodes[dst.0 as usize]
                                .as_mut()
                                .and_then(|n| n.seq.as_mut())
                                .map(|s| s.seq_dequeue_step());
                            match step {
                                Some(Dequeued::Order(o)) => self.submit(net, o),
                                Some(Dequeued::Dummy(_)) => self.dummies_discarded += 1,
                                _ => break,
                            }
                        }
                    }
                    None if order.is_dummy => self.dummies_discarded += 1,
                    None => self.submit(net, order),
                }
            }
            Role::Proxy => {
                let node = self.node(dst);
                let mut discarded = 0;
                match node.seq.as_mut() {
                    Some(seq) => {
                        node.last_seen[pos] = Some(order.gen_ts);
                        if let Err(e) = seq.seq_enqueue(order, pos) {
                            return self.fail(e);
                        }
                        loop {
                            match seq.seq_dequeue_step() {
                                Dequeued::Order(o) => node.queue.push(o, false),
                                Dequeued::Dummy(_) => discarded += 1,
                                Dequeued::Blocked => break,
                            }
                        }
                    }
                    None if order.is_dummy => discarded += 1,
                    None => node.queue.push(order, false),
                }
                self.dummies_discarded += discarded;
                self.try_send(net, dst);
            }
            Role::Gateway(_) => {
                self.fail(Error::Config(format!("gateway {dst:?} received an order")))
            }
        }
    }

    fn on_timer(&mut self, net: &mut Network<Wire>, vm: VmId, tok: u64) {
        let payload = tok & ((1 << 56) - 1);
        match tok >> 56 {
            GEN => self.on_generate(net),
            HEARTBEAT => self.on_heartbeat(net, vm),
            WAKE => {
                let now = net.now().0;
                let node = self.node(vm);
                if node.wake_at == Some(now) {
                    node.wake_at = None;
                    self.try_send(net, vm);
                }
            }
            PACE => {
                let now = net.now();
                let node = self.node(vm);
                if let Some(p) = node.pacer.as_mut() {
                    let q = p.adjust(now.0);
                    self.max_quantum_ns = self.max_quantum_ns.max(q);
                }
                let _ = net.schedule_timer(vm, now + self.pace_ns, token(PACE, 0));
            }
            MID => {
                let mid = self.mids[payload as usize];
                self.broadcast_mid(mid.m, mid.epoch);
            }
            SCHEDULE => {
                let (_, m) = self.cfg.mid_schedule.as_ref().expect("schedule")[payload as usize];
                self.reference_epoch = payload + 1;
                self.broadcast_mid(m, payload + 1);
            }
            _ => {}
        }
    }

    fn on_credit(&mut self, net: &mut Network<Wire>, src: VmId, _dst: VmId) {
        if self.nodes[src.0 as usize].is_some() {
            self.try_send(net, src);
        }
    }
}

/// Nodes with at least one gateway below them, bottom-up.
fn active_nodes(plan: &TreePlan) -> Vec<Vec<bool>> {
    let leaf = plan.leaf_layer();
    let mut active: Vec<Vec<bool>> = plan
        .layer_sizes
        .iter()
        .map(|&s| vec![false; s as usize])
        .collect();
    active[leaf].iter_mut().for_each(|a| *a = true);
    for layer in (0..leaf).rev() {
        for i in 0..plan.layer_sizes[layer] {
            let addr = NodeAddr::new(layer as i32, i);
            active[layer][i as usize] = plan
                .static_children(addr)
                .iter()
                .any(|c| active[layer + 1][c.index as usize]);
        }
    }
    active
}

pub fn run_inbound(cfg: &InboundConfig, workload: &Workload) -> Result<InboundReport> {
    cfg.validate()?;
    let n = workload.n_mps;
    let plan = cfg.plan(n)?;
    let topo = Topology::new(&plan);
    let mut net: Network<Wire> = Network::new(cfg.net.clone())?;
    let active = active_nodes(&plan);
    let leaf = plan.leaf_layer();
    let initial_mid = workload.initial_mid;
    let new_queue = |gateway: bool| {
        if cfg.loq {
            let src = if gateway {
                EpochSource::Current
            } else {
                EpochSource::Carried
            };
            OrderQueue::Loq(LoqState::new(initial_mid, cfg.w, src))
        } else {
            OrderQueue::fifo(initial_mid)
        }
    };
    let hb_ns = TimestampNs::from_us(cfg.heartbeat_us).0.max(1);
    let mut nodes: Vec<Option<Node>> = Vec::with_capacity(topo.vm_count() as usize);
    for v in 0..topo.vm_count() {
        let addr = topo.addr(VmId(v));
        let profile = if addr.is_root() {
            cfg.root_vm
        } else if addr.layer as usize == leaf {
            cfg.gateway_vm
        } else {
            cfg.proxy_vm
        };
        net.add_vm(profile)?;
        if !addr.is_root() && !active[addr.layer as usize][addr.index as usize] {
            nodes.push(None);
            continue;
        }
        let children: Vec<NodeAddr> = if addr.is_root() || (addr.layer as usize) < leaf {
            plan.static_children(addr)
                .into_iter()
                .filter(|c| active[c.layer as usize][c.index as usize])
                .collect()
        } else {
            Vec::new()
        };
        let role = if addr.is_root() {
            Role::Root
        } else if addr.layer as usize == leaf {
            Role::Gateway(MpId(addr.index))
        } else {
            Role::Proxy
        };
        let parent_addr = (!addr.is_root()).then(|| plan.static_parent(addr));
        let pos = match parent_addr {
            Some(p) => plan
                .static_children(p)
                .into_iter()
                .filter(|c| active[c.layer as usize][c.index as usize])
                .position(|c| c == addr)
                .expect("child of its parent"),
            None => 0,
        };
        let paced = cfg.pacing.enabled
            && (role == Role::Proxy || (!cfg.tree && matches!(role, Role::Gateway(_))));
        nodes.push(Some(Node {
            role,
            parent: parent_addr.map(|p| topo.vm(p)),
            pos,
            seq: (cfg.sequencer && !matches!(role, Role::Gateway(_)))
                .then(|| SequencerState::new(children.len(), cfg.seq_variant)),
            last_seen: vec![None; children.len()],
            queue: new_queue(matches!(role, Role::Gateway(_))),
            hb: Heartbeat::new(hb_ns),
            pacer: paced.then(|| PacerState::new(&cfg.pacing)),
            next_send_ns: 0,
            wake_at: None,
            last_stamp: None,
        }));
    }
    let gateway_vm: Vec<VmId> = (0..n)
        .map(|i| topo.vm(NodeAddr::new(leaf as i32, i)))
        .collect();
    let records = workload
        .orders
        .iter()
        .map(|g| OrderRecord {
            mp: g.mp,
            gen_true: g.at,
            gen_ts: g.at,
            side: g.side,
            price: g.price,
            qty: g.qty,
            epoch: 0,
            root_arrival: None,
            engine_arrival: None,
            matched: None,
        })
        .collect();
    let pace_ns = ((cfg.pacing.adjust_period_ms * 1e6).round() as u64).max(1);
    let mut sim = Sim {
        cfg,
        workload,
        nodes,
        order_bytes: cfg.order_bytes,
        hb_ns,
        pace_ns,
        md_delay_ns: TimestampNs::from_us(cfg.md_delay_us).0,
        cursor: 0,
        gateway_vm,
        records,
        index: FxHashMap::default(),
        book: LimitOrderBook::new(workload.initial_mid),
        sequenced: Vec::new(),
        trades: Vec::new(),
        mids: Vec::new(),
        reference_epoch: 0,
        epoch_skew: 0,
        dummies_discarded: 0,
        root_peers: BTreeSet::new(),
        max_quantum_ns: 0,
        error: None,
    };
    if let Some(first) = workload.orders.first() {
        net.schedule_timer(sim.gateway_vm[first.mp.0 as usize], first.at, token(GEN, 0))?;
    }
    let count = topo.vm_count() as u64;
    for (v, node) in sim.nodes.iter().enumerate() {
        let Some(node) = node else { continue };
        let vm = VmId(v as u32);
        if cfg.sequencer && node.role != Role::Root {
            net.schedule_timer(
                vm,
                TimestampNs(hb_ns * v as u64 / count),
                token(HEARTBEAT, 0),
            )?;
        }
        if node.pacer.is_some() {
            net.schedule_timer(vm, TimestampNs(pace_ns), token(PACE, 0))?;
        }
    }
    if let Some(s) = &cfg.mid_schedule {
        for (k, (at, _)) in s.iter().enumerate() {
            net.schedule_timer(VmId(0), *at, token(SCHEDULE, k as u64))?;
        }
    }
    let horizon = workload.end + TimestampNs::from_ms(cfg.drain_ms).0;
    net.run_until(&mut sim, horizon);
    if let Some(e) = sim.error.take() {
        return Err(e);
    }
    let mut drops = 0;
    let mut retransmissions = 0;
    let mut ooo = 0;
    for v in 0..topo.vm_count() {
        let c = net.vm_counters(VmId(v))?;
        drops += c.ingress_drops + c.egress_drops;
        retransmissions += c.retransmissions;
        ooo += c.out_of_order_discards;
    }
    let rates = rate_series(
        &sim.records,
        horizon,
        TimestampNs::from_ms(cfg.rate_window_ms).0.max(1),
    );
    let summary = summarize(
        workload,
        &sim.records,
        &sim.sequenced,
        &sim.trades,
        horizon,
        Counters {
            drops,
            retransmissions,
            out_of_order_discards: ooo,
            dummies_discarded: sim.dummies_discarded,
            epoch_skew: sim.epoch_skew,
            root_peers: sim.root_peers.len() as u64,
            max_quantum_ns: sim.max_quantum_ns,
        },
    );
    Ok(InboundReport {
        plan,
        orders: sim.records,
        sequenced: sim.sequenced,
        trades: sim.trades,
        book: sim.book,
        rates,
        root_peers: sim.root_peers,
        summary,
    })
}

fn rate_series(records: &[OrderRecord], horizon: TimestampNs, window: u64) -> Vec<RateRow> {
    let buckets = horizon.0.div_ceil(window).max(1) as usize;
    let mut rows: Vec<RateRow> = (0..buckets)
        .map(|i| RateRow {
            window_start_ns: i as u64 * window,
            orders_received: 0,
            orders_matched: 0,
        })
        .collect();
    for r in records {
        if let Some(t) = r.root_arrival {
            rows[((t.0 / window) as usize).min(buckets - 1)].orders_received += 1;
        }
        if let Some(t) = r.matched {
            rows[((t.0 / window) as usize).min(buckets - 1)].orders_matched += 1;
        }
    }
    rows
}

struct Counters {
    drops: u64,
    retransmissions: u64,
    out_of_order_discards: u64,
    dummies_discarded: u64,
    epoch_skew: u64,
    root_peers: u64,
    max_quantum_ns: u64,
}

fn percentile_us(mut v: Vec<u64>, q: f64) -> f64 {
    v.sort_unstable();
    nearest_rank(&v, q).map_or(0.0, |x| x as f64 / 1e3)
}

fn summarize(
    w: &Workload,
    records: &[OrderRecord],
    sequenced: &[Order],
    trades: &[Trade],
    horizon: TimestampNs,
    c: Counters,
) -> InboundSummary {
    let latency = |r: &OrderRecord| r.matched.map(|m| m.0.saturating_sub(r.gen_true.0));
    let lat: Vec<u64> = records.iter().filter_map(latency).collect();
    let burst_lat: Vec<u64> = records
        .iter()
        .filter(|r| w.in_burst(r.gen_true))
        .filter_map(latency)
        .collect();
    let burst_s = w.burst_time_s();
    let per_burst_s = |n: usize| {
        if burst_s > 0.0 {
            n as f64 / burst_s
        } else {
            0.0
        }
    };
    let in_burst = |t: Option<TimestampNs>| t.is_some_and(|t| w.in_burst(t));
    let span_s = horizon.0 as f64 / 1e9;
    let received = records.iter().filter(|r| r.root_arrival.is_some()).count();
    let matched = lat.len();
    InboundSummary {
        orders: records.len() as u64,
        received: received as u64,
        engine_arrivals: sequenced.len() as u64,
        matched: matched as u64,
        trades: trades.len() as u64,
        matched_latency_p50_us: percentile_us(lat.clone(), 0.5),
        matched_latency_p99_us: percentile_us(lat, 0.99),
        burst_matched_latency_p50_us: percentile_us(burst_lat, 0.5),
        burst_received_rate: per_burst_s(
            records.iter().filter(|r| in_burst(r.root_arrival)).count(),
        ),
        burst_matched_rate: per_burst_s(records.iter().filter(|r| in_burst(r.matched)).count()),
        received_rate: received as f64 / span_s,
        matched_rate: matched as f64 / span_s,
        drops: c.drops,
        retransmissions: c.retransmissions,
        out_of_order_discards: c.out_of_order_discards,
        dummies_discarded: c.dummies_discarded,
        epoch_skew: c.epoch_skew,
        root_peers: c.root_peers,
        unfairness_ratio: unfairness_ratio(sequenced, trades),
        max_quantum_us: c.max_quantum_ns as f64 / 1e3,
    }
}
