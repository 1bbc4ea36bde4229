//! Price-time matching on a small book.

use fairfabric::engine::LimitOrderBook;
use fairfabric::types::{MpId, Order, Side, TimestampNs};

fn main() -> fairfabric::Result<()> {
    let mut book = LimitOrderBook::new(100);
    let orders = [
        Order::new(MpId(0), TimestampNs(1), Side::Ask, 101, 5),
        Order::new(MpId(1), TimestampNs(2), Side::Ask, 101, 5),
        Order::new(MpId(2), TimestampNs(3), Side::Bid, 99, 4),
        Order::new(MpId(3), TimestampNs(4), Side::Bid, 102, 7),
    ];
    for o in &orders {
        let r = book.submit(o, o.gen_ts)?;
        for t in &r.trades {
            println!(
                "trade {} @ {}: bid {} ask {}",
                t.qty, t.price, t.bid.mp, t.ask.mp
            );
        }
        let mid = book.mid_price();
        println!(
            "after {} {} {}@{}: bid {:?} ask {:?} mid {} epoch {}",
            o.mp,
            o.side.as_str(),
            o.qty,
            o.price,
            book.best_bid(),
            book.best_ask(),
            mid.m,
            mid.epoch
        );
    }
    Ok(())
}
