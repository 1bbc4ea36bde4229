//! Running a scenario from TOML text with a sweep and an expectation.

use fairfabric::harness::{parse_scenario, run_scenario};

const SCENARIO: &str = r#"
name = "example"
seed = 4
[multicast]
n = 100
duration_s = 0.2
[hold_release]
enabled = false
[[sweep]]
key = "multicast.hedge"
values = [0, 1]
[[expect]]
metric = "losses"
op = "=="
value = 0
"#;

fn main() -> fairfabric::Result<()> {
    let s = parse_scenario(SCENARIO, &["multicast.rate_per_s=2000.0".to_string()])?;
    let out = std::env::temp_dir().join("fairfabric-scenario-example");
    let _ = std::fs::remove_dir_all(&out);
    let r = run_scenario(&s, Some(&out))?;
    for v in &r.variants {
        println!(
            "{}: p99 OML {:?}ns, p99 DWS {:?}ns",
            v.name,
            v.metric("oml_p99_ns"),
            v.metric("raw_dws_p99_ns")
        );
    }
    println!("failed expectations: {:?}", r.failed_expectations);
    println!("outputs in {}", r.dir.display());
    Ok(())
}
