//! Bursty order flow with and without the reverse tree in front of the engine.

use fairfabric::inbound::{generate, run_inbound, InboundConfig, WorkloadConfig};

fn main() -> fairfabric::Result<()> {
    let wl = WorkloadConfig {
        n_mps: 50,
        duration_ms: 200.0,
        rate_per_mp: 1000.0,
        burst_period_ms: 100.0,
        burst_len_ms: 10.0,
        burst_phase_ms: 50.0,
        ..WorkloadConfig::default()
    };
    let workload = generate(&wl, 7)?;
    for tree in [true, false] {
        let mut cfg = InboundConfig {
            tree,
            drain_ms: 100.0,
            ..InboundConfig::default()
        };
        cfg.root_vm.proc_delay_us = 2.0;
        cfg.root_vm.ingress_queue_pkts = 256;
        let s = run_inbound(&cfg, &workload)?.summary;
        println!(
            "tree {tree:<5}: {} orders, burst received {:.0}/s, drops {}, matched p50 {:.1}us, unfairness {:.3}",
            s.orders, s.burst_received_rate, s.drops, s.matched_latency_p50_us, s.unfairness_ratio
        );
    }
    Ok(())
}
