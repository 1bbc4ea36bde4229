use std::path::Path;

use super::{Metrics, VariantResult};
use crate::hold_release::MessageMetrics;
use crate::inbound::{InboundReport, OracleOutcome, Workload};
use crate::mcast::sim::MulticastReport;
use crate::montecarlo::{HedgeModel, Summary};
use crate::Result;

pub(super) fn write(path: &Path, text: &str) -> Result<()> {
    crate::engine::write_file(path, text)
}

fn opt(v: Option<u64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Flattens a serializable summary struct into metric rows, in field order.
fn flatten<T: serde::Serialize>(value: &T) -> Metrics {
    let table = toml::Table::try_from(value).expect("summary serializes to a table");
    table
        .into_iter()
        .map(|(k, v)| {
            let s = match v {
                toml::Value::String(s) => s,
                toml::Value::Float(f) => format!("{f}"),
                other => other.to_string(),
            };
            (k, s)
        })
        .collect()
}

pub(super) fn write_metrics(path: &Path, metrics: &Metrics) -> Result<()> {
    let mut s = String::from("metric,value\n");
    for (k, v) in metrics {
        s.push_str(&format!("{k},{v}\n"));
    }
    write(path, &s)
}

fn write_messages(path: &Path, ms: &[MessageMetrics]) -> Result<()> {
    let mut s = String::from("msg_id,send_ns,oml_ns,dws_ns,raw_oml_ns,raw_dws_ns,misses,losses\n");
    for m in ms {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.msg_id,
            m.send_ns,
            opt(m.oml_ns),
            opt(m.dws_ns),
            opt(m.raw_oml_ns),
            opt(m.raw_dws_ns),
            m.misses,
            m.losses
        ));
    }
    write(path, &s)
}

pub(super) fn write_multicast(dir: &Path, r: &MulticastReport, hash: &str) -> Result<Metrics> {
    write_messages(&dir.join("messages.csv"), &r.messages)?;
    let mut copies = String::from("copies,count\n");
    for (c, n) in &r.copy_histogram {
        copies.push_str(&format!("{c},{n}\n"));
    }
    write(&dir.join("copies.csv"), &copies)?;
    let mut tx = String::from("vm,layer,index,data_packets\n");
    for (vm, n) in r.data_tx.iter().enumerate() {
        let a = r.topology.addr(crate::netsim::VmId(vm as u32));
        tx.push_str(&format!("{vm},{},{},{n}\n", a.layer, a.index));
    }
    write(&dir.join("proxy_tx.csv"), &tx)?;
    let mut owd = String::from("time_ns,owd_g_ns\n");
    for (t, g) in &r.owd_g_history {
        owd.push_str(&format!("{t},{g}\n"));
    }
    write(&dir.join("owd_g.csv"), &owd)?;
    let mut m = flatten(&r.summary);
    m.extend([
        ("messages_sent".to_string(), r.messages_sent.to_string()),
        ("ingress_drops".to_string(), r.ingress_drops.to_string()),
        ("egress_drops".to_string(), r.egress_drops.to_string()),
        (
            "dedup_violations".to_string(),
            r.dedup_violations.to_string(),
        ),
        ("clamped_samples".to_string(), r.clamped_samples.to_string()),
        ("workload_hash".to_string(), hash.to_string()),
    ]);
    write_metrics(&dir.join("summary.csv"), &m)?;
    Ok(m)
}

pub(super) fn write_inbound(dir: &Path, r: &InboundReport, w: &Workload) -> Result<Metrics> {
    w.write_csv(&dir.join("workload.csv"))?;
    r.write_orders_csv(&dir.join("orders.csv"))?;
    r.write_rate_csv(&dir.join("rate.csv"))?;
    r.write_sequenced_csv(&dir.join("sequenced.csv"))?;
    crate::engine::write_trades_csv(&r.trades, &dir.join("trades.csv"))?;
    let mut m = flatten(&r.summary);
    m.push(("workload_hash".to_string(), w.hash()));
    write_metrics(&dir.join("summary.csv"), &m)?;
    Ok(m)
}

pub(super) fn write_montecarlo(dir: &Path, rows: &[(HedgeModel, Summary)]) -> Result<Metrics> {
    let mut s = String::from("depth,fanout,hedge,iterations,mean_us,std_us\n");
    let mut m = Metrics::new();
    for (model, sum) in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.4},{:.4}\n",
            model.depth, model.fanout, model.hedge, model.iterations, sum.mean_us, sum.std_us
        ));
        let tag = format!("D{}_H{}", model.depth, model.hedge);
        m.push((format!("mean_us_{tag}"), format!("{:.4}", sum.mean_us)));
        m.push((format!("std_us_{tag}"), format!("{:.4}", sum.std_us)));
    }
    write(&dir.join("montecarlo.csv"), &s)?;
    write_metrics(&dir.join("summary.csv"), &m)?;
    Ok(m)
}

pub(super) fn write_oracle(dir: &Path, rows: &[(u64, OracleOutcome)]) -> Result<Metrics> {
    let mut s =
        String::from("case_seed,passed,first_divergence,trades,unfairness_ratio,undelivered\n");
    for (seed, o) in rows {
        s.push_str(&format!(
            "{seed},{},{},{},{},{}\n",
            o.passed,
            opt(o.first_divergence),
            o.pipeline.len(),
            o.unfairness_ratio,
            o.undelivered
        ));
    }
    write(&dir.join("oracle.csv"), &s)?;
    let mismatches = rows.iter().filter(|(_, o)| !o.passed).count();
    let max_ratio = rows
        .iter()
        .map(|(_, o)| o.unfairness_ratio)
        .fold(0.0, f64::max);
    let m = vec![
        ("cases".to_string(), rows.len().to_string()),
        ("mismatches".to_string(), mismatches.to_string()),
        ("max_unfairness_ratio".to_string(), format!("{max_ratio}")),
    ];
    write_metrics(&dir.join("summary.csv"), &m)?;
    Ok(m)
}

/// One row per variant with every summary metric as a column.
pub(super) fn write_variant_index(path: &Path, results: &[VariantResult]) -> Result<()> {
    let mut keys: Vec<&str> = Vec::new();
    for r in results {
        for (k, _) in &r.metrics {
            if !keys.contains(&k.as_str()) {
                keys.push(k);
            }
        }
    }
    let mut s = format!("variant,{}\n", keys.join(","));
    for r in results {
        let row: Vec<&str> = keys
            .iter()
            .map(|k| {
                r.metrics
                    .iter()
                    .find(|(m, _)| m == k)
                    .map_or("", |(_, v)| v.as_str())
            })
            .collect();
        s.push_str(&format!("{},{}\n", r.name, row.join(",")));
    }
    write(path, &s)
}
