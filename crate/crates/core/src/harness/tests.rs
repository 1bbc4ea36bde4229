use super::*;

const SMALL: &str = r#"
name = "small"
seed = 3
[multicast]
n = 100
rate_per_s = 1000.0
duration_s = 0.05
"#;

fn sets(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn defaults_fill_missing_keys() {
    let s = parse_scenario(SMALL, &[]).unwrap();
    assert_eq!(s.kind, Kind::Multicast);
    assert_eq!(s.multicast.hedge, 0);
    assert_eq!(s.inbound, InboundSpec::default());
    assert_eq!(s.tree_plan().unwrap().layer_sizes, vec![10, 100]);
}

#[test]
fn unknown_keys_are_named() {
    let e = parse_scenario("[multicast]\nhedgee = 1\n", &[])
        .unwrap_err()
        .to_string();
    assert!(e.contains("hedgee"), "{e}");
    let e = parse_scenario(SMALL, &sets(&["multicast.fanot=3"]))
        .unwrap_err()
        .to_string();
    assert!(
        e.contains("--set multicast.fanout") || e.contains("fanot"),
        "{e}"
    );
    let e = parse_scenario(SMALL, &sets(&["multicast.hedge=\"x\""]))
        .unwrap_err()
        .to_string();
    assert!(e.contains("--set multicast.hedge"), "{e}");
    let e = parse_scenario(SMALL, &sets(&["multicast.hedge=10"]))
        .unwrap_err()
        .to_string();
    assert!(e.contains("tree.hedge"), "{e}");
    assert!(parse_scenario(SMALL, &sets(&["nonsense"])).is_err());
}

#[test]
fn overrides_apply() {
    let s = parse_scenario(
        SMALL,
        &sets(&["multicast.hedge=1", "clock.family=exact", "name=other"]),
    )
    .unwrap();
    assert_eq!(s.multicast.hedge, 1);
    assert_eq!(s.clock, ClockErrorModel::Exact);
    assert_eq!(s.name, "other");
}

#[test]
fn config_round_trips() {
    let s = parse_scenario(SMALL, &sets(&["inbound.w=-1"])).unwrap();
    assert_eq!(parse_scenario(&s.to_toml(), &[]).unwrap(), s);
    assert_eq!(s.inbound_config().w, None);
}

#[test]
fn sweeps_expand_in_order() {
    let text = format!(
        "{SMALL}\n[[sweep]]\nkey = \"multicast.hedge\"\nvalues = [0, 1]\n[[sweep]]\nkey = \"clock\"\nvalues = [{{family = \"exact\"}}, {{family = \"uniform\", bound_ns = 100.0}}]\n"
    );
    let s = parse_scenario(&text, &[]).unwrap();
    let v = s.variants().unwrap();
    let names: Vec<&str> = v.iter().map(|x| x.name.as_str()).collect();
    assert_eq!(
        names,
        vec![
            "hedge=0_clock0",
            "hedge=0_clock1",
            "hedge=1_clock0",
            "hedge=1_clock1"
        ]
    );
    assert_eq!(v[3].scenario.multicast.hedge, 1);
    assert_eq!(
        v[3].scenario.clock,
        ClockErrorModel::Uniform { bound_ns: 100.0 }
    );
    assert!(v[3].scenario.sweep.is_empty());
}

#[test]
fn merged_sweep_moves_keys_together() {
    let text = format!(
        "{SMALL}\n[[sweep]]\nkey = \"workload\"\nmerge = true\nlabels = [\"a\", \"b\"]\nvalues = [{{band = 1, depth = 2}}, {{band = 3, depth = 6}}]\n"
    );
    let v = parse_scenario(&text, &[]).unwrap().variants().unwrap();
    assert_eq!(v[1].name, "b");
    assert_eq!(
        (v[1].scenario.workload.band, v[1].scenario.workload.depth),
        (3, 6)
    );
    assert_eq!(
        v[1].scenario.workload.n_mps,
        WorkloadConfig::default().n_mps
    );
}

#[test]
fn bad_sweep_value_is_rejected() {
    let text = format!("{SMALL}\n[[sweep]]\nkey = \"multicast.hedge\"\nvalues = [0, 50]\n");
    assert!(parse_scenario(&text, &[]).is_err());
}

#[test]
fn smoke_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let s = parse_scenario(SMALL, &[]).unwrap();
    let r = run_scenario(&s, Some(&out)).unwrap();
    for f in [
        "config.toml",
        "messages.csv",
        "summary.csv",
        "copies.csv",
        "proxy_tx.csv",
        "owd_g.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let v = &r.variants[0];
    assert_eq!(v.metric("messages"), Some(50.0));
    assert!(v.metric("oml_p50_ns").unwrap() > 0.0);
    let echoed = fs::read_to_string(out.join("config.toml")).unwrap();
    assert_eq!(parse_scenario(&echoed, &[]).unwrap(), s);
}

#[test]
fn failed_run_leaves_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut s = parse_scenario(
        SMALL,
        &sets(&[
            "kind=\"goodput\"",
            "goodput.lo_rate=400000.0",
            "goodput.hi_rate=800000.0",
        ]),
    )
    .unwrap();
    s.multicast.duration_s = 0.002;
    s.multicast.vm.egress_queue_pkts = Some(2);
    let e = run_scenario(&s, Some(&out)).unwrap_err().to_string();
    assert!(e.contains("goodput.lo_rate"), "{e}");
    assert!(!out.exists());
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn expectations_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{SMALL}\n[[expect]]\nmetric = \"losses\"\nop = \"==\"\nvalue = 0\n[[expect]]\nmetric = \"oml_p50_ns\"\nop = \"<\"\nvalue = 1\n"
    );
    let r = run_scenario(
        &parse_scenario(&text, &[]).unwrap(),
        Some(&dir.path().join("x")),
    )
    .unwrap();
    assert_eq!(r.failed_expectations.len(), 1);
    assert!(r.failed_expectations[0].starts_with("oml_p50_ns"));
}

const PAIRED: &str = r#"
kind = "inbound"
seed = 9
[workload]
n_mps = 6
duration_ms = 20.0
rate_per_mp = 2000.0
[inbound]
drain_ms = 20.0
"#;

#[test]
fn paired_runs_share_the_workload() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_scenario(
        &parse_scenario(PAIRED, &sets(&["inbound.loq=true"])).unwrap(),
        Some(&a),
    )
    .unwrap();
    run_scenario(
        &parse_scenario(PAIRED, &sets(&["inbound.loq=false"])).unwrap(),
        Some(&b),
    )
    .unwrap();
    assert_eq!(
        fs::read(a.join("workload.csv")).unwrap(),
        fs::read(b.join("workload.csv")).unwrap()
    );
    assert_eq!(workload_hash_of(&a), workload_hash_of(&b));
    let c = compare(&a, &b, "engine_latency").unwrap();
    assert_eq!(c.rows.len(), 3);
}

fn workload_hash_of(dir: &Path) -> String {
    let text = fs::read_to_string(dir.join("summary.csv")).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix("workload_hash,"))
        .unwrap()
        .to_string()
}

#[test]
fn compare_identical_and_mismatched() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    let s = parse_scenario(SMALL, &[]).unwrap();
    run_scenario(&s, Some(&a)).unwrap();
    run_scenario(&s, Some(&b)).unwrap();
    let cmp = compare(&a, &b, "oml").unwrap();
    assert!(cmp.rows.iter().all(|r| r.delta == 0));
    assert!(cmp.to_string().ends_with("oml: equal"));
    run_scenario(
        &parse_scenario(SMALL, &sets(&["multicast.rate_per_s=2000.0"])).unwrap(),
        Some(&c),
    )
    .unwrap();
    assert!(matches!(
        compare(&a, &c, "oml"),
        Err(Error::WorkloadMismatch(_))
    ));
    assert!(compare(&a, &b, "bogus").is_err());
}

#[test]
fn tree_spreads_serialization_over_layers() {
    // Constant links: the last-receiver gap is pure serialization, (n - 1) packets
    // for direct unicast and (F - 1) per level for the tree.
    let dir = tempfile::tempdir().unwrap();
    let base = "[latency]\nbase_us = 50.0\njitter = { family = \"constant\" }\n[clock]\nfamily = \"exact\"\n[hold_release]\nenabled = false\n";
    let text = format!("{SMALL}{base}");
    let (t, d) = (dir.path().join("tree"), dir.path().join("direct"));
    run_scenario(&parse_scenario(&text, &[]).unwrap(), Some(&t)).unwrap();
    run_scenario(
        &parse_scenario(&text, &sets(&["multicast.direct_unicast=true"])).unwrap(),
        Some(&d),
    )
    .unwrap();
    let ser = 233;
    let c = compare(&d, &t, "raw_dws").unwrap();
    assert!(
        c.rows.iter().all(|r| r.a == 99 * ser && r.b == 18 * ser),
        "{c}"
    );
    assert_eq!(c.sign(), -1);
}

#[test]
fn oracle_and_montecarlo_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let o = parse_scenario("kind = \"oracle\"\nseed = 5\n[oracle]\ncases = 3\n", &[]).unwrap();
    let r = run_scenario(&o, Some(&dir.path().join("o"))).unwrap();
    assert_eq!(r.variants[0].metric("mismatches"), Some(0.0));
    let m = parse_scenario(
        "kind = \"montecarlo\"\n[montecarlo]\ndepths = [1, 2]\nhedges = [0, 1]\nfanout = 3\niterations = 200\n",
        &[],
    )
    .unwrap();
    let r = run_scenario(&m, Some(&dir.path().join("m"))).unwrap();
    assert!(dir.path().join("m/cdf_D2_F3_H1.csv").exists());
    assert!(
        r.variants[0].metric("mean_us_D2_H0").unwrap()
            > r.variants[0].metric("mean_us_D1_H0").unwrap()
    );
}
