//! The LOQ serves by epoch, then near-mid before far-from-mid, then timestamp.

use fairfabric::loq::{EpochSource, LoqState};
use fairfabric::types::{MpId, Order, Side, TimestampNs};

fn main() {
    let mut q = LoqState::new(100, Some(1), EpochSource::Current);
    q.loq_enqueue(Order::new(MpId(0), TimestampNs(1), Side::Bid, 90, 1));
    q.loq_enqueue(Order::new(MpId(1), TimestampNs(2), Side::Ask, 101, 1));
    q.loq_enqueue(Order::new(MpId(2), TimestampNs(3), Side::Bid, 100, 1));
    q.on_mid_price(105);
    q.loq_enqueue(Order::new(MpId(3), TimestampNs(4), Side::Bid, 105, 1));
    while let Some(k) = q.peek_key() {
        let o = q.loq_dequeue().expect("peeked");
        println!("epoch {} class {} {} price {}", k.epoch, k.c, o.mp, o.price);
    }
}
