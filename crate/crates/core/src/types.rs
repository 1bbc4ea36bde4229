//! Shared domain types: timestamps, participant ids, tree addresses,
//! multicast messages and orders.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Nanoseconds since the simulation epoch.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct TimestampNs(pub u64);

impl TimestampNs {
    pub const ZERO: TimestampNs = TimestampNs(0);
    pub const MAX: TimestampNs = TimestampNs(u64::MAX);

    pub fn from_us(us: f64) -> Self {
        TimestampNs((us * 1_000.0).round().max(0.0) as u64)
    }

    pub fn from_ms(ms: f64) -> Self {
        TimestampNs((ms * 1_000_000.0).round().max(0.0) as u64)
    }

    pub fn as_ns(self) -> u64 {
        self.0
    }

    pub fn as_us(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    /// Applies a signed offset, saturating at the epoch.
    pub fn offset(self, delta_ns: i64) -> Self {
        TimestampNs(self.0.saturating_add_signed(delta_ns))
    }

    pub fn saturating_sub(self, other: TimestampNs) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

impl Add<u64> for TimestampNs {
    type Output = TimestampNs;
    fn add(self, rhs: u64) -> TimestampNs {
        TimestampNs(self.0.saturating_add(rhs))
    }
}

impl Sub for TimestampNs {
    type Output = i64;
    fn sub(self, rhs: TimestampNs) -> i64 {
        self.0 as i64 - rhs.0 as i64
    }
}

impl fmt::Display for TimestampNs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Market participant identifier, dense in `[0, N)`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct MpId(pub u32);

impl fmt::Display for MpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mp{}", self.0)
    }
}

/// Position of a VM in the overlay tree.
///
/// Layer `-1` is the root (sender / exchange). Layers `0..D-1` hold proxies
/// and the last layer holds the receivers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeAddr {
    pub layer: i32,
    pub index: u32,
}

impl NodeAddr {
    pub const ROOT: NodeAddr = NodeAddr {
        layer: -1,
        index: 0,
    };

    pub fn new(layer: i32, index: u32) -> Self {
        NodeAddr { layer, index }
    }

    pub fn is_root(&self) -> bool {
        self.layer < 0
    }
}

impl fmt::Display for NodeAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            write!(f, "root")
        } else {
            write!(f, "L{}:{}", self.layer, self.index)
        }
    }
}

/// Content carried by a market-data message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarketDatum {
    Heartbeat {
        mid: i64,
        epoch: u64,
    },
    Trade {
        exec_seq: u64,
        price: i64,
        qty: u64,
        mid: i64,
        epoch: u64,
    },
    BookUpdate {
        side: Side,
        price: i64,
        level_qty: u64,
        mid: i64,
        epoch: u64,
    },
}

impl MarketDatum {
    pub fn mid(&self) -> (i64, u64) {
        match *self {
            MarketDatum::Heartbeat { mid, epoch }
            | MarketDatum::Trade { mid, epoch, .. }
            | MarketDatum::BookUpdate { mid, epoch, .. } => (mid, epoch),
        }
    }
}

/// One market-data datum as multicast by the exchange.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MulticastMessage {
    pub msg_id: u64,
    pub send_ts: TimestampNs,
    /// `TimestampNs::ZERO` means no deadline was stamped.
    pub deadline: TimestampNs,
    pub size_bytes: u32,
    pub datum: Option<MarketDatum>,
}

/// Payload size used when nothing else is configured (multicast benchmark packet size).
pub const DEFAULT_MESSAGE_BYTES: u32 = 466;

impl MulticastMessage {
    pub fn new(msg_id: u64, send_ts: TimestampNs) -> Self {
        MulticastMessage {
            msg_id,
            send_ts,
            deadline: TimestampNs::ZERO,
            size_bytes: DEFAULT_MESSAGE_BYTES,
            datum: None,
        }
    }

    pub fn has_deadline(&self) -> bool {
        self.deadline != TimestampNs::ZERO
    }
}

/// Hands out gapless, strictly increasing message ids.
#[derive(Clone, Debug, Default)]
pub struct MsgIdSource {
    next: u64,
}

impl MsgIdSource {
    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Bid => "bid",
            Side::Ask => "ask",
        }
    }
}

/// Orders are identified by who generated them and when.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrderKey {
    pub gen_ts: TimestampNs,
    pub mp: MpId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Order {
    pub mp: MpId,
    pub gen_ts: TimestampNs,
    pub side: Side,
    /// Integer ticks.
    pub price: i64,
    pub qty: u64,
    pub is_dummy: bool,
    /// Mid-price epoch observed when the gateway enqueued the order.
    pub epoch: u64,
}

impl Order {
    pub fn new(mp: MpId, gen_ts: TimestampNs, side: Side, price: i64, qty: u64) -> Self {
        Order {
            mp,
            gen_ts,
            side,
            price,
            qty,
            is_dummy: false,
            epoch: 0,
        }
    }

    pub fn dummy(mp: MpId, gen_ts: TimestampNs) -> Self {
        Order {
            mp,
            gen_ts,
            side: Side::Bid,
            price: 0,
            qty: 0,
            is_dummy: true,
            epoch: 0,
        }
    }

    pub fn key(&self) -> OrderKey {
        OrderKey {
            gen_ts: self.gen_ts,
            mp: self.mp,
        }
    }

    /// Checks the invariants every real order must satisfy.
    pub fn validate(&self) -> Result<(), crate::Error> {
        if self.is_dummy {
            return Ok(());
        }
        if self.qty == 0 {
            return Err(crate::Error::InvalidOrder(format!(
                "{}: qty must be > 0",
                self.mp
            )));
        }
        if self.price <= 0 {
            return Err(crate::Error::InvalidOrder(format!(
                "{}: price must be > 0",
                self.mp
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_key_breaks_timestamp_ties_by_mp() {
        let a = Order::new(MpId(2), TimestampNs(5), Side::Bid, 10, 1);
        let b = Order::new(MpId(0), TimestampNs(5), Side::Ask, 10, 1);
        let c = Order::new(MpId(1), TimestampNs(7), Side::Ask, 10, 1);
        let mut keys = vec![a.key(), c.key(), b.key()];
        keys.sort();
        assert_eq!(keys, vec![b.key(), a.key(), c.key()]);
    }

    #[test]
    fn msg_ids_are_gapless() {
        let mut src = MsgIdSource::default();
        let ids: Vec<u64> = (0..5).map(|_| src.next_id()).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn invalid_orders_rejected() {
        assert!(Order::new(MpId(0), TimestampNs(1), Side::Bid, 10, 0)
            .validate()
            .is_err());
        assert!(Order::new(MpId(0), TimestampNs(1), Side::Bid, 0, 1)
            .validate()
            .is_err());
        assert!(Order::dummy(MpId(0), TimestampNs(1)).validate().is_ok());
    }

    #[test]
    fn timestamp_offset_saturates() {
        assert_eq!(TimestampNs(10).offset(-20), TimestampNs(0));
        assert_eq!(TimestampNs(1000).offset(80), TimestampNs(1080));
    }
}
