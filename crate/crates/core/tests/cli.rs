use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairfabric"))
}

const SMALL: &str = "name = \"cli\"\n[multicast]\nn = 10\nrate_per_s = 500.0\nduration_s = 0.02\n";

#[test]
fn run_succeeds_and_compare_reports_equal() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.toml");
    fs::write(&file, SMALL).unwrap();
    for sub in ["a", "b"] {
        let out = bin()
            .arg("run")
            .arg(&file)
            .arg("--out")
            .arg(dir.path().join(sub))
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stdout).contains("oml_p50_ns"));
    }
    let out = bin()
        .args(["compare", "--metric", "oml"])
        .arg(dir.path().join("a"))
        .arg(dir.path().join("b"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout)
        .trim_end()
        .ends_with("oml: equal"));
}

#[test]
fn bad_config_and_failed_expectation_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.toml");
    fs::write(&file, SMALL).unwrap();
    let out = bin()
        .arg("run")
        .arg(&file)
        .args(["--set", "multicast.hedgee=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hedgee"));

    let strict = format!("{SMALL}[[expect]]\nmetric = \"oml_p50_ns\"\nop = \"<\"\nvalue = 1\n");
    fs::write(&file, strict).unwrap();
    let out = bin()
        .arg("run")
        .arg(&file)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expectation failed"));
}

#[test]
fn montecarlo_prints_a_cdf() {
    let out = bin()
        .args([
            "montecarlo",
            "--depth",
            "2",
            "--fanout",
            "4",
            "--hedge",
            "1",
            "--iters",
            "500",
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("latency_us,cum_prob"));
    assert_eq!(
        lines.last().and_then(|l| l.split(',').nth(1)),
        Some("1.0000")
    );
    let bad = bin()
        .args(["montecarlo", "--fanout", "2", "--hedge", "9"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
