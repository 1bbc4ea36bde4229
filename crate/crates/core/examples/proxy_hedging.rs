//! Proxy hedging: each node gets H+1 copies, trimming the latency tail.

use fairfabric::mcast::plan_tree;
use fairfabric::mcast::sim::{run_multicast, MulticastConfig};

fn main() -> fairfabric::Result<()> {
    for hedge in 0..3 {
        let mut cfg = MulticastConfig::new(plan_tree(100)?.with_hedge(hedge)?);
        cfg.duration_s = 1.0;
        cfg.hold_release.enabled = false;
        let r = run_multicast(&cfg)?;
        println!(
            "H={hedge}: p99 OML {:>7}ns, p99 DWS {:>6}ns, copies {:?}, L0 packets/msg {:?}",
            r.summary.oml_p99_ns,
            r.summary.raw_dws_p99_ns,
            r.copy_histogram,
            r.proxy_packets_per_message(0).first()
        );
    }
    Ok(())
}
