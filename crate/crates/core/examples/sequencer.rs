//! Merging three FIFO inputs into one timestamp order; dummies unblock idle inputs.

use fairfabric::sequencer::{Dequeued, SeqVariant, SequencerState};
use fairfabric::types::{MpId, Order, Side, TimestampNs};

fn main() -> fairfabric::Result<()> {
    let o = |mp, t| Order::new(MpId(mp), TimestampNs(t), Side::Bid, 100, 1);
    let mut s = SequencerState::new(3, SeqVariant::Heap);
    let arrivals = [
        (0, o(0, 30)),
        (1, o(1, 10)),
        (1, o(1, 40)),
        (2, Order::dummy(MpId(2), TimestampNs(35))),
        (2, Order::dummy(MpId(2), TimestampNs(50))),
        (0, Order::dummy(MpId(0), TimestampNs(60))),
    ];
    for (src, order) in arrivals {
        s.seq_enqueue(order, src)?;
        loop {
            match s.seq_dequeue_step() {
                Dequeued::Order(x) => println!("release {} at ts {}", x.mp, x.gen_ts),
                Dequeued::Dummy(x) => println!("discard dummy from {} at ts {}", x.mp, x.gen_ts),
                Dequeued::Blocked => break,
            }
        }
    }
    println!("released {}, still queued {}", s.released(), s.queued());
    Ok(())
}
