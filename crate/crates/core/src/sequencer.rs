//! Global-FIFO sequencer: releases orders in `(gen_ts, mp)` order once every
//! input has something queued. Idle inputs keep it moving with dummy orders.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::types::{MpId, Order, TimestampNs};
use crate::{Error, Result};

/// Head-selection strategy; both give identical output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqVariant {
    /// Linear scan of all heads per dequeue.
    #[default]
    Scan,
    /// Binary heap over the non-empty heads.
    Heap,
}

/// Outcome of one dequeue attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dequeued {
    Order(Order),
    /// A dummy reached the front and was discarded.
    Dummy(Order),
    /// Some input queue is empty.
    Blocked,
}

/// Ordering key of a queued item: `(gen_ts, dummy-first, mp, source)`.
///
/// A dummy is a promise that nothing earlier will follow from its source, so at
/// equal timestamps it goes before real orders.
type HeadKey = (TimestampNs, bool, MpId, usize);

fn head_key(o: &Order, src: usize) -> HeadKey {
    (o.gen_ts, !o.is_dummy, o.mp, src)
}

#[derive(Clone, Debug)]
pub struct SequencerState {
    queues: Vec<VecDeque<Order>>,
    variant: SeqVariant,
    heads: BinaryHeap<Reverse<HeadKey>>,
    empty: usize,
    released: u64,
    discarded: u64,
}

impl SequencerState {
    pub fn new(n: usize, variant: SeqVariant) -> Self {
        SequencerState {
            queues: vec![VecDeque::new(); n],
            variant,
            heads: BinaryHeap::new(),
            empty: n,
            released: 0,
            discarded: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.queues.len()
    }

    pub fn queue_len(&self, src: usize) -> usize {
        self.queues.get(src).map_or(0, |q| q.len())
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    pub fn released(&self) -> u64 {
        self.released
    }

    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    pub fn seq_enqueue(&mut self, order: Order, src: usize) -> Result<()> {
        let n = self.queues.len();
        let q = self
            .queues
            .get_mut(src)
            .ok_or(Error::SourceOutOfRange { src, n })?;
        if q.is_empty() {
            self.empty -= 1;
            if self.variant == SeqVariant::Heap {
                self.heads.push(Reverse(head_key(&order, src)));
            }
        }
        q.push_back(order);
        Ok(())
    }

    pub fn seq_dequeue_step(&mut self) -> Dequeued {
        if self.empty > 0 || self.queues.is_empty() {
            return Dequeued::Blocked;
        }
        let src = match self.variant {
            SeqVariant::Scan => {
                let mut best = 0;
                let mut best_key = head_key(self.queues[0].front().expect("non-empty"), 0);
                for (i, q) in self.queues.iter().enumerate().skip(1) {
                    let k = head_key(q.front().expect("non-empty"), i);
                    if k < best_key {
                        best = i;
                        best_key = k;
                    }
                }
                best
            }
            SeqVariant::Heap => self.heads.pop().expect("all heads present").0 .3,
        };
        let q = &mut self.queues[src];
        let order = q.pop_front().expect("non-empty");
        match q.front() {
            Some(next) if self.variant == SeqVariant::Heap => {
                self.heads.push(Reverse(head_key(next, src)))
            }
            Some(_) => {}
            None => self.empty += 1,
        }
        if order.is_dummy {
            self.discarded += 1;
            Dequeued::Dummy(order)
        } else {
            self.released += 1;
            Dequeued::Order(order)
        }
    }

    /// Dequeues until blocked and returns the real orders released.
    pub fn drain(&mut self) -> Vec<Order> {
        let mut out = Vec::new();
        loop {
            match self.seq_dequeue_step() {
                Dequeued::Order(o) => out.push(o),
                Dequeued::Dummy(_) => {}
                Dequeued::Blocked => return out,
            }
        }
    }
}

/// Emits dummy orders for a source that has been idle for at least `period`.
#[derive(Clone, Copy, Debug)]
pub struct Heartbeat {
    pub period_ns: u64,
    last_sent: Option<TimestampNs>,
}

impl Heartbeat {
    pub fn new(period_ns: u64) -> Self {
        Heartbeat {
            period_ns,
            last_sent: None,
        }
    }

    /// Records a transmission (real or dummy) at `now`.
    pub fn sent(&mut self, now: TimestampNs) {
        self.last_sent = Some(now);
    }

    /// Returns a dummy stamped with `clock` if nothing was sent in the last period.
    pub fn heartbeat(&mut self, mp: MpId, now: TimestampNs, clock: TimestampNs) -> Option<Order> {
        let idle = self
            .last_sent
            .is_none_or(|t| now.saturating_sub(t) >= self.period_ns);
        if !idle {
            return None;
        }
        self.last_sent = Some(now);
        Some(Order::dummy(mp, clock))
    }
}

/// Runs a batch: sources' orders are enqueued in the given arrival order and
/// drained after each arrival.
pub fn sequence_arrivals(
    n: usize,
    arrivals: &[(usize, Order)],
    variant: SeqVariant,
) -> Result<Vec<Order>> {
    let mut s = SequencerState::new(n, variant);
    let mut out = Vec::new();
    for (src, o) in arrivals {
        s.seq_enqueue(*o, *src)?;
        out.extend(s.drain());
    }
    Ok(out)
}
