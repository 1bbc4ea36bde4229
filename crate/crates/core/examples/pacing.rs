//! Delay-based pacing at the proxies trades throughput for fewer drops under incast.

use fairfabric::inbound::{generate, run_inbound, InboundConfig, WorkloadConfig};

fn main() -> fairfabric::Result<()> {
    let wl = WorkloadConfig {
        n_mps: 10,
        duration_ms: 100.0,
        rate_per_mp: 5000.0,
        burst_period_ms: 50.0,
        burst_len_ms: 10.0,
        burst_phase_ms: 20.0,
        ..WorkloadConfig::default()
    };
    let workload = generate(&wl, 11)?;
    for paced in [false, true] {
        let mut cfg = InboundConfig {
            fanout: Some(5),
            depth: Some(2),
            drain_ms: 100.0,
            ..InboundConfig::default()
        };
        cfg.root_vm.proc_delay_us = 4.0;
        cfg.root_vm.ingress_queue_pkts = 24;
        cfg.pacing.enabled = paced;
        cfg.pacing.threshold_us = 80.0;
        let s = run_inbound(&cfg, &workload)?.summary;
        println!(
            "paced {paced:<5}: received {}, drops {}, retransmissions {}, max quantum {:.0}us",
            s.received, s.drops, s.retransmissions, s.max_quantum_us
        );
    }
    Ok(())
}
