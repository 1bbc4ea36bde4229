use fairfabric::mcast::{DedupBuffer, DedupOutcome};

fn main() {
    let mut buf = DedupBuffer::new(1000);
    println!("capacity {}", buf.capacity());
    for id in [5, 6, 5, 1029, 5, 7] {
        let out = buf.accept(id);
        let note = if out == DedupOutcome::Error {
            " (slot reused by a newer id)"
        } else {
            ""
        };
        println!("id {id:>4}: {out:?}{note}");
    }
    println!("violations {}", buf.violations());
}
