//! Tree shapes for a few receiver counts and how RRPS rotates children per message.

use fairfabric::mcast::{path_count, plan_tree, rrps_children, TreePlan};
use fairfabric::types::NodeAddr;

fn main() -> fairfabric::Result<()> {
    for n in [10, 100, 1000, 5000] {
        let p = plan_tree(n)?;
        println!(
            "N={n:>5}: fanout {} depth {} layers {:?} paths {}",
            p.fanout,
            p.depth,
            p.layer_sizes,
            path_count(&p)
        );
    }

    let plan = TreePlan::new(100, 10, 2, 0)?.with_rrps(true);
    let proxy = NodeAddr::new(0, 3);
    for msg in 0..3 {
        let kids: Vec<String> = rrps_children(proxy, msg, &plan)?
            .iter()
            .map(|a| a.to_string())
            .collect();
        println!("message {msg}: {proxy} -> {}", kids.join(" "));
    }
    Ok(())
}
