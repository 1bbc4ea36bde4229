use fairfabric::montecarlo::{run, summarize, HedgeModel};

fn main() -> fairfabric::Result<()> {
    for depth in 1..=3 {
        for hedge in 0..3 {
            let m = HedgeModel {
                depth,
                hedge,
                iterations: 20_000,
                ..HedgeModel::default()
            };
            let s = summarize(&run(&m)?, 10)?;
            let p90 = s
                .cdf
                .iter()
                .find(|(_, p)| *p >= 0.9)
                .map_or(f64::NAN, |(v, _)| *v);
            println!(
                "D={depth} H={hedge}: mean {:6.1}us std {:5.1}us p90 {:6.1}us",
                s.mean_us, s.std_us, p90
            );
        }
    }
    Ok(())
}
