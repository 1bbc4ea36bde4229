//! Limit order book with price-time priority and continuous matching.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use crate::types::{MarketDatum, MulticastMessage, Order, OrderKey, Side, TimestampNs};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trade {
    pub bid: OrderKey,
    pub ask: OrderKey,
    pub price: i64,
    pub qty: u64,
    pub exec_ts: TimestampNs,
    pub exec_seq: u64,
}

impl Trade {
    /// The fields that identify a trade independent of when it ran.
    pub fn signature(&self) -> (OrderKey, OrderKey, i64, u64) {
        (self.bid, self.ask, self.price, self.qty)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MidPrice {
    pub m: i64,
    pub epoch: u64,
}

/// Resting quantity of one level after a submit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelDelta {
    pub side: Side,
    pub price: i64,
    pub level_qty: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SubmitResult {
    pub trades: Vec<Trade>,
    pub deltas: Vec<LevelDelta>,
    /// Set when this submit moved the mid-price.
    pub mid_changed: bool,
}

#[derive(Clone, Copy, Debug)]
struct Resting {
    key: OrderKey,
    qty: u64,
}

#[derive(Clone, Debug)]
pub struct LimitOrderBook {
    bids: BTreeMap<i64, VecDeque<Resting>>,
    asks: BTreeMap<i64, VecDeque<Resting>>,
    mid: MidPrice,
    next_exec_seq: u64,
}

impl LimitOrderBook {
    pub fn new(initial_mid: i64) -> Self {
        LimitOrderBook {
            bids: BTreeMap::new(),
            asks: BTreeMap::new(),
            mid: MidPrice {
                m: initial_mid,
                epoch: 0,
            },
            next_exec_seq: 0,
        }
    }

    pub fn best_bid(&self) -> Option<i64> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.asks.keys().next().copied()
    }

    pub fn mid_price(&self) -> MidPrice {
        self.mid
    }

    pub fn level_qty(&self, side: Side, price: i64) -> u64 {
        let book = match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        };
        book.get(&price)
            .map_or(0, |q| q.iter().map(|r| r.qty).sum())
    }

    /// Matches `order` against the opposite side, rests any remainder and updates the mid-price.
    pub fn submit(&mut self, order: &Order, now: TimestampNs) -> Result<SubmitResult> {
        if order.is_dummy {
            return Err(Error::InvalidOrder(format!(
                "dummy order from {} reached the engine",
                order.mp
            )));
        }
        order.validate()?;
        let mut out = SubmitResult::default();
        let mut remaining = order.qty;
        let key = order.key();
        loop {
            if remaining == 0 {
                break;
            }
            let best = match order.side {
                Side::Bid => self.best_ask(),
                Side::Ask => self.best_bid(),
            };
            let book = match order.side {
                Side::Bid => &mut self.asks,
                Side::Ask => &mut self.bids,
            };
            let Some(price) = best else { break };
            let crosses = match order.side {
                Side::Bid => order.price >= price,
                Side::Ask => order.price <= price,
            };
            if !crosses {
                break;
            }
            let level = book.get_mut(&price).expect("best level exists");
            while remaining > 0 {
                let Some(front) = level.front_mut() else {
                    break;
                };
                let qty = remaining.min(front.qty);
                let (bid, ask) = match order.side {
                    Side::Bid => (key, front.key),
                    Side::Ask => (front.key, key),
                };
                out.trades.push(Trade {
                    bid,
                    ask,
                    price,
                    qty,
                    exec_ts: now,
                    exec_seq: self.next_exec_seq,
                });
                self.next_exec_seq += 1;
                remaining -= qty;
                front.qty -= qty;
                if front.qty == 0 {
                    level.pop_front();
                }
            }
            let level_qty = level.iter().map(|r| r.qty).sum();
            if level.is_empty() {
                book.remove(&price);
            }
            out.deltas.push(LevelDelta {
                side: order.side.opposite(),
                price,
                level_qty,
            });
        }
        if remaining > 0 {
            let book = match order.side {
                Side::Bid => &mut self.bids,
                Side::Ask => &mut self.asks,
            };
            let level = book.entry(order.price).or_default();
            let pos = level.partition_point(|r| r.key <= key);
            level.insert(
                pos,
                Resting {
                    key,
                    qty: remaining,
                },
            );
            let level_qty = level.iter().map(|r| r.qty).sum();
            out.deltas.push(LevelDelta {
                side: order.side,
                price: order.price,
                level_qty,
            });
        }
        out.mid_changed = self.refresh_mid();
        Ok(out)
    }

    fn refresh_mid(&mut self) -> bool {
        if let (Some(b), Some(a)) = (self.best_bid(), self.best_ask()) {
            let m = (b + a).div_euclid(2);
            if m != self.mid.m {
                self.mid = MidPrice {
                    m,
                    epoch: self.mid.epoch + 1,
                };
                return true;
            }
        }
        false
    }

    /// `(side, price, total_qty)` for every resting level, bids high to low then asks low to high.
    pub fn snapshot(&self) -> Vec<(Side, i64, u64)> {
        let mut v: Vec<(Side, i64, u64)> = self
            .bids
            .iter()
            .rev()
            .map(|(p, q)| (Side::Bid, *p, q.iter().map(|r| r.qty).sum()))
            .collect();
        v.extend(
            self.asks
                .iter()
                .map(|(p, q)| (Side::Ask, *p, q.iter().map(|r| r.qty).sum())),
        );
        v
    }

    pub fn write_snapshot_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("side,price,total_qty\n");
        for (side, p, q) in self.snapshot() {
            s.push_str(&format!("{},{p},{q}\n", side.as_str()));
        }
        write_file(path, &s)
    }
}

pub fn write_trades_csv(trades: &[Trade], path: &Path) -> Result<()> {
    let mut s = String::from("exec_seq,bid_mp,bid_gen_ts,ask_mp,ask_gen_ts,price,qty,exec_ts\n");
    for t in trades {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            t.exec_seq,
            t.bid.mp.0,
            t.bid.gen_ts.0,
            t.ask.mp.0,
            t.ask.gen_ts.0,
            t.price,
            t.qty,
            t.exec_ts.0
        ));
    }
    write_file(path, &s)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Encodes one submit's trades and book changes as market data, each carrying the
/// mid-price and epoch in effect after the submit.
pub fn emit_market_data(result: &SubmitResult, mid: MidPrice) -> Vec<MarketDatum> {
    let mut v: Vec<MarketDatum> = result
        .trades
        .iter()
        .map(|t| MarketDatum::Trade {
            exec_seq: t.exec_seq,
            price: t.price,
            qty: t.qty,
            mid: mid.m,
            epoch: mid.epoch,
        })
        .collect();
    v.extend(result.deltas.iter().map(|d| MarketDatum::BookUpdate {
        side: d.side,
        price: d.price,
        level_qty: d.level_qty,
        mid: mid.m,
        epoch: mid.epoch,
    }));
    v
}

pub fn heartbeat(mid: MidPrice) -> MarketDatum {
    MarketDatum::Heartbeat {
        mid: mid.m,
        epoch: mid.epoch,
    }
}

/// Wraps data items as multicast messages with consecutive ids.
pub fn to_messages(
    data: &[MarketDatum],
    first_id: u64,
    send_ts: TimestampNs,
) -> Vec<MulticastMessage> {
    data.iter()
        .enumerate()
        .map(|(i, d)| {
            let mut m = MulticastMessage::new(first_id + i as u64, send_ts);
            m.datum = Some(*d);
            m
        })
        .collect()
}

/// Receiver-side view of the mid-price rebuilt from the market-data stream.
#[derive(Clone, Debug, Default)]
pub struct MidPriceTracker {
    current: Option<MidPrice>,
    history: Vec<MidPrice>,
}

impl MidPriceTracker {
    /// Returns the new mid-price when this datum reveals a newer epoch.
    pub fn observe(&mut self, d: &MarketDatum) -> Option<MidPrice> {
        let (m, epoch) = d.mid();
        if self.current.is_some_and(|c| c.epoch >= epoch) {
            return None;
        }
        let mp = MidPrice { m, epoch };
        self.current = Some(mp);
        self.history.push(mp);
        Some(mp)
    }

    pub fn current(&self) -> Option<MidPrice> {
        self.current
    }

    pub fn history(&self) -> &[MidPrice] {
        &self.history
    }
}

/// Submits every order in sequence to a fresh book.
pub fn run_book(orders: &[Order], initial_mid: i64) -> Result<(Vec<Trade>, LimitOrderBook)> {
    let mut book = LimitOrderBook::new(initial_mid);
    let mut trades = Vec::new();
    for o in orders {
        trades.extend(book.submit(o, o.gen_ts)?.trades);
    }
    Ok((trades, book))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::MpId;
    use proptest::prelude::*;

    fn o(mp: u32, t: u64, side: Side, price: i64, qty: u64) -> Order {
        Order::new(MpId(mp), TimestampNs(t), side, price, qty)
    }

    /// Reference matcher: flat list of resting orders, scanned for the best
    /// counterparty each time.
    fn reference(orders: &[Order]) -> Vec<(OrderKey, OrderKey, i64, u64)> {
        let mut resting: Vec<(Order, u64)> = Vec::new();
        let mut trades = Vec::new();
        for inc in orders {
            let mut left = inc.qty;
            while left > 0 {
                let best = resting
                    .iter()
                    .enumerate()
                    .filter(|(_, (r, q))| *q > 0 && r.side != inc.side)
                    .filter(|(_, (r, _))| match inc.side {
                        Side::Bid => inc.price >= r.price,
                        Side::Ask => inc.price <= r.price,
                    })
                    .min_by(|(_, (a, _)), (_, (b, _))| {
                        let pa = if inc.side == Side::Bid {
                            a.price
                        } else {
                            -a.price
                        };
                        let pb = if inc.side == Side::Bid {
                            b.price
                        } else {
                            -b.price
                        };
                        pa.cmp(&pb).then(a.key().cmp(&b.key()))
                    })
                    .map(|(i, _)| i);
                let Some(i) = best else { break };
                let (r, q) = &mut resting[i];
                let qty = left.min(*q);
                let (bid, ask) = if inc.side == Side::Bid {
                    (inc.key(), r.key())
                } else {
                    (r.key(), inc.key())
                };
                trades.push((bid, ask, r.price, qty));
                *q -= qty;
                left -= qty;
            }
            if left > 0 {
                resting.push((*inc, left));
            }
        }
        trades
    }

    #[test]
    fn rests_on_empty_book() {
        let mut b = LimitOrderBook::new(100);
        let r = b
            .submit(&o(0, 1, Side::Bid, 100, 1), TimestampNs(1))
            .unwrap();
        assert!(r.trades.is_empty());
        assert_eq!(b.best_bid(), Some(100));
    }

    #[test]
    fn exact_cross_trades() {
        let mut b = LimitOrderBook::new(100);
        b.submit(&o(0, 1, Side::Ask, 100, 1), TimestampNs(1))
            .unwrap();
        let r = b
            .submit(&o(1, 2, Side::Bid, 100, 1), TimestampNs(2))
            .unwrap();
        assert_eq!(r.trades.len(), 1);
        assert_eq!(r.trades[0].price, 100);
    }

    #[test]
    fn sweep_two_levels_and_rest() {
        let orders = [
            o(0, 1, Side::Ask, 99, 1),
            o(1, 2, Side::Ask, 100, 1),
            o(2, 3, Side::Bid, 101, 3),
        ];
        let (trades, book) = run_book(&orders, 100).unwrap();
        let sigs: Vec<_> = trades.iter().map(|t| t.signature()).collect();
        assert_eq!(sigs, reference(&orders));
        assert_eq!(
            trades.iter().map(|t| t.price).collect::<Vec<_>>(),
            vec![99, 100]
        );
        assert_eq!(book.level_qty(Side::Bid, 101), 1);
    }

    #[test]
    fn midpoint_floor_and_retain() {
        let mut b = LimitOrderBook::new(50);
        b.submit(&o(0, 1, Side::Bid, 98, 1), TimestampNs(1))
            .unwrap();
        assert_eq!(b.mid_price(), MidPrice { m: 50, epoch: 0 });
        b.submit(&o(1, 2, Side::Ask, 102, 1), TimestampNs(2))
            .unwrap();
        assert_eq!(b.mid_price(), MidPrice { m: 100, epoch: 1 });
        b.submit(&o(1, 3, Side::Ask, 103, 1), TimestampNs(3))
            .unwrap();
        assert_eq!(b.mid_price().epoch, 1);
        b.submit(&o(2, 4, Side::Ask, 98, 1), TimestampNs(4))
            .unwrap();
        // Bid side empty after the trade: the last mid is kept.
        assert_eq!(b.mid_price(), MidPrice { m: 100, epoch: 1 });
    }

    #[test]
    fn dummy_rejected() {
        let mut b = LimitOrderBook::new(100);
        assert!(b
            .submit(&Order::dummy(MpId(0), TimestampNs(1)), TimestampNs(1))
            .is_err());
    }

    #[test]
    fn trade_emits_one_message_with_mid() {
        let mut b = LimitOrderBook::new(100);
        b.submit(&o(0, 1, Side::Ask, 100, 1), TimestampNs(1))
            .unwrap();
        let r = b
            .submit(&o(1, 2, Side::Bid, 100, 1), TimestampNs(2))
            .unwrap();
        let md = emit_market_data(&r, b.mid_price());
        let trades: Vec<_> = md
            .iter()
            .filter(|d| matches!(d, MarketDatum::Trade { .. }))
            .collect();
        assert_eq!(trades.len(), 1);
        assert!(matches!(
            trades[0],
            MarketDatum::Trade {
                exec_seq: 0,
                mid: 100,
                epoch: 0,
                ..
            }
        ));
        assert!(matches!(
            heartbeat(b.mid_price()),
            MarketDatum::Heartbeat { mid: 100, epoch: 0 }
        ));
    }

    fn order_strategy() -> impl Strategy<Value = Vec<Order>> {
        proptest::collection::vec((0u32..5, any::<bool>(), 95i64..106, 1u64..6), 1..50).prop_map(
            |v| {
                v.into_iter()
                    .enumerate()
                    .map(|(i, (mp, bid, price, qty))| {
                        o(
                            mp,
                            i as u64 * 10,
                            if bid { Side::Bid } else { Side::Ask },
                            price,
                            qty,
                        )
                    })
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn matches_reference(orders in order_strategy()) {
            let (trades, _) = run_book(&orders, 100).unwrap();
            let sigs: Vec<_> = trades.iter().map(|t| t.signature()).collect();
            prop_assert_eq!(sigs, reference(&orders));
            prop_assert!(trades.windows(2).all(|w| w[1].exec_seq == w[0].exec_seq + 1));
        }

        #[test]
        fn book_never_crossed(orders in order_strategy()) {
            let mut b = LimitOrderBook::new(100);
            for ord in &orders {
                b.submit(ord, ord.gen_ts).unwrap();
                if let (Some(bb), Some(ba)) = (b.best_bid(), b.best_ask()) {
                    prop_assert!(bb < ba);
                }
            }
        }

        #[test]
        fn epochs_count_mid_changes(orders in order_strategy()) {
            let mut b = LimitOrderBook::new(100);
            let mut mids = vec![100i64];
            for ord in &orders {
                b.submit(ord, ord.gen_ts).unwrap();
                let m = b.mid_price().m;
                if *mids.last().unwrap() != m {
                    mids.push(m);
                }
            }
            prop_assert_eq!(b.mid_price().epoch as usize, mids.len() - 1);
        }

        #[test]
        fn replay_reconstructs_mid_sequence(orders in order_strategy()) {
            let mut b = LimitOrderBook::new(100);
            let mut engine_seq = vec![b.mid_price()];
            let mut stream = vec![heartbeat(b.mid_price())];
            for ord in &orders {
                let r = b.submit(ord, ord.gen_ts).unwrap();
                stream.extend(emit_market_data(&r, b.mid_price()));
                if r.mid_changed {
                    engine_seq.push(b.mid_price());
                }
            }
            let mut tracker = MidPriceTracker::default();
            for d in &stream {
                tracker.observe(d);
            }
            prop_assert_eq!(tracker.history(), &engine_seq[..]);
        }
    }
}
