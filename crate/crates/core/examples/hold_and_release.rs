//! Holding deliveries until a shared deadline collapses the delivery window.

use fairfabric::mcast::plan_tree;
use fairfabric::mcast::sim::{run_multicast, MulticastConfig};

fn main() -> fairfabric::Result<()> {
    for enabled in [false, true] {
        let mut cfg = MulticastConfig::new(plan_tree(100)?);
        cfg.duration_s = 0.5;
        cfg.warmup_ms = 100.0;
        cfg.hold_release.enabled = enabled;
        let s = run_multicast(&cfg)?.summary;
        println!(
            "hold-and-release {:<5}: OML p50 {:>7}ns p99 {:>7}ns, DWS p50 {:>6}ns p99 {:>6}ns, P(F) {}, misses {}",
            enabled, s.oml_p50_ns, s.oml_p99_ns, s.dws_p50_ns, s.dws_p99_ns, s.p_fair, s.misses
        );
    }
    Ok(())
}
