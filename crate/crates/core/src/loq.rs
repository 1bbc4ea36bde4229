//! Limit Order Queue: a per-node egress queue that serves orders by
//! `(epoch, criticality, gen_ts)` so that orders near the mid-price go first.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use crate::types::{MpId, Order, TimestampNs};

/// 0 = critical, 1 = non-critical.
pub fn classify(order: &Order, m: i64, w: Option<i64>) -> u8 {
    match w {
        None => 0,
        Some(w) if (m - w..=m + w).contains(&order.price) => 0,
        Some(_) => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct LoqKey {
    pub epoch: u64,
    pub c: u8,
    pub gen_ts: TimestampNs,
    pub mp: MpId,
    pub seq: u64,
}

/// Which epoch an enqueued order is filed under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochSource {
    /// The node's current view; the order is stamped with it (gateways).
    Current,
    /// The epoch the order already carries (interior nodes).
    Carried,
}

#[derive(Clone, Debug)]
pub struct LoqState {
    heap: BinaryHeap<Reverse<(LoqKey, OrderSlot)>>,
    current_m: i64,
    current_epoch: u64,
    /// Half-width of the action window; `None` makes every order critical.
    w: Option<i64>,
    epoch_source: EpochSource,
    history: BTreeMap<u64, i64>,
    next_seq: u64,
}

/// Wrapper giving `Order` the total order the heap needs (keys are unique).
#[derive(Clone, Copy, Debug)]
struct OrderSlot(Order);

impl PartialEq for OrderSlot {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl Eq for OrderSlot {}
impl PartialOrd for OrderSlot {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrderSlot {
    fn cmp(&self, _: &Self) -> std::cmp::Ordering {
        std::cmp::Ordering::Equal
    }
}

impl LoqState {
    pub fn new(initial_m: i64, w: Option<i64>, epoch_source: EpochSource) -> Self {
        LoqState {
            heap: BinaryHeap::new(),
            current_m: initial_m,
            current_epoch: 0,
            w,
            epoch_source,
            history: BTreeMap::from([(0, initial_m)]),
            next_seq: 0,
        }
    }

    pub fn current(&self) -> (i64, u64) {
        (self.current_m, self.current_epoch)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Mid-price in effect during `epoch`, as far as this node has seen.
    pub fn mid_of_epoch(&self, epoch: u64) -> i64 {
        self.history
            .range(..=epoch)
            .next_back()
            .map_or(self.current_m, |(_, m)| *m)
    }

    pub fn key_for(&self, order: &Order) -> LoqKey {
        let epoch = match self.epoch_source {
            EpochSource::Current => self.current_epoch,
            EpochSource::Carried => order.epoch,
        };
        let c = if order.is_dummy {
            0
        } else {
            classify(order, self.mid_of_epoch(epoch), self.w)
        };
        LoqKey {
            epoch,
            c,
            gen_ts: order.gen_ts,
            mp: order.mp,
            seq: self.next_seq,
        }
    }

    pub fn loq_enqueue(&mut self, mut order: Order) {
        if self.epoch_source == EpochSource::Current {
            order.epoch = self.current_epoch;
        }
        let key = self.key_for(&order);
        self.next_seq += 1;
        self.heap.push(Reverse((key, OrderSlot(order))));
    }

    /// A new mid-price; bumps the epoch when it differs from the current one.
    pub fn on_mid_price(&mut self, m_new: i64) {
        if m_new != self.current_m {
            self.current_m = m_new;
            self.current_epoch += 1;
            self.history.insert(self.current_epoch, m_new);
        }
    }

    /// Adopts an `(m, epoch)` pair from the market-data stream if it is newer.
    pub fn observe_mid(&mut self, m: i64, epoch: u64) {
        if epoch > self.current_epoch {
            self.current_m = m;
            self.current_epoch = epoch;
            self.history.insert(epoch, m);
        }
    }

    pub fn peek_key(&self) -> Option<LoqKey> {
        self.heap.peek().map(|Reverse((k, _))| *k)
    }

    pub fn loq_dequeue(&mut self) -> Option<Order> {
        self.heap.pop().map(|Reverse((_, OrderSlot(o)))| o)
    }
}

/// Egress queue of a pipeline node: LOQ or plain FIFO.
#[derive(Clone, Debug)]
pub enum OrderQueue {
    Loq(LoqState),
    Fifo {
        queue: VecDeque<Order>,
        current_m: i64,
        current_epoch: u64,
    },
}

impl OrderQueue {
    pub fn fifo(initial_m: i64) -> Self {
        OrderQueue::Fifo {
            queue: VecDeque::new(),
            current_m: initial_m,
            current_epoch: 0,
        }
    }

    pub fn push(&mut self, mut order: Order, stamp_epoch: bool) {
        match self {
            OrderQueue::Loq(l) => l.loq_enqueue(order),
            OrderQueue::Fifo {
                queue,
                current_epoch,
                ..
            } => {
                if stamp_epoch {
                    order.epoch = *current_epoch;
                }
                queue.push_back(order)
            }
        }
    }

    pub fn pop(&mut self) -> Option<Order> {
        match self {
            OrderQueue::Loq(l) => l.loq_dequeue(),
            OrderQueue::Fifo { queue, .. } => queue.pop_front(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            OrderQueue::Loq(l) => l.len(),
            OrderQueue::Fifo { queue, .. } => queue.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observe_mid(&mut self, m: i64, epoch: u64) {
        match self {
            OrderQueue::Loq(l) => l.observe_mid(m, epoch),
            OrderQueue::Fifo {
                current_m,
                current_epoch,
                ..
            } => {
                if epoch > *current_epoch {
                    *current_m = m;
                    *current_epoch = epoch;
                }
            }
        }
    }

    pub fn current_epoch(&self) -> u64 {
        match self {
            OrderQueue::Loq(l) => l.current().1,
            OrderQueue::Fifo { current_epoch, .. } => *current_epoch,
        }
    }
}
