use std::fmt;
use std::path::Path;

use crate::stats::nearest_rank;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DeltaRow {
    pub quantile: &'static str,
    pub a: u64,
    pub b: u64,
    /// `b - a`.
    pub delta: i64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub metric: String,
    pub rows: Vec<DeltaRow>,
}

impl Comparison {
    /// `-1` if B is lower at every quantile, `1` if higher at every one, else `0`.
    pub fn sign(&self) -> i8 {
        if self.rows.iter().all(|r| r.delta < 0) {
            -1
        } else if self.rows.iter().all(|r| r.delta > 0) {
            1
        } else {
            0
        }
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "quantile,a,b,delta")?;
        for r in &self.rows {
            writeln!(f, "{},{},{},{}", r.quantile, r.a, r.b, r.delta)?;
        }
        let verdict = match self.sign() {
            -1 => "B lower",
            1 => "B higher",
            _ if self.rows.iter().all(|r| r.delta == 0) => "equal",
            _ => "mixed",
        };
        write!(f, "{}: {verdict}", self.metric)
    }
}

const METRICS: &[&str] = &[
    "oml",
    "dws",
    "raw_oml",
    "raw_dws",
    "order_latency",
    "engine_latency",
];

fn csv_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

fn workload_hash(dir: &Path) -> Result<String> {
    let path = dir.join("summary.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        if rec.get(0) == Some("workload_hash") {
            return Ok(rec.get(1).unwrap_or_default().to_string());
        }
    }
    Err(csv_err(
        &path,
        "no workload_hash row; compare needs a single-variant output directory",
    ))
}

fn column(path: &Path, name: &str) -> Result<usize> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = r.headers().map_err(|e| csv_err(path, e))?;
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| csv_err(path, format!("missing column {name}")))
}

/// Values of `metric` from one run directory, ascending; blanks and unmatched orders are skipped.
fn values(dir: &Path, metric: &str) -> Result<Vec<u64>> {
    let (file, col, base) = match metric {
        "oml" | "dws" | "raw_oml" | "raw_dws" => ("messages.csv", format!("{metric}_ns"), None),
        "order_latency" => ("orders.csv", "matched_ns".to_string(), Some("gen_ts")),
        "engine_latency" => (
            "orders.csv",
            "engine_arrival_ns".to_string(),
            Some("gen_ts"),
        ),
        _ => {
            return Err(Error::Config(format!(
                "unknown metric `{metric}`; expected one of {}",
                METRICS.join(", ")
            )))
        }
    };
    let path = dir.join(file);
    let vi = column(&path, &col)?;
    let bi = base.map(|b| column(&path, b)).transpose()?;
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let Ok(v) = rec.get(vi).unwrap_or("").parse::<u64>() else {
            continue;
        };
        let v = match bi {
            Some(i) => {
                let b: u64 = rec
                    .get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|e| csv_err(&path, e))?;
                v.saturating_sub(b)
            }
            None => v,
        };
        out.push(v);
    }
    out.sort_unstable();
    Ok(out)
}

/// p50/p90/p99 of `metric` in run B minus run A; refuses runs over different workloads.
pub fn compare(a: &Path, b: &Path, metric: &str) -> Result<Comparison> {
    let (ha, hb) = (workload_hash(a)?, workload_hash(b)?);
    if ha != hb {
        return Err(Error::WorkloadMismatch(format!(
            "{} has workload {ha}, {} has {hb}",
            a.display(),
            b.display()
        )));
    }
    let (va, vb) = (values(a, metric)?, values(b, metric)?);
    if va.is_empty() || vb.is_empty() {
        return Err(Error::Config(format!(
            "metric `{metric}` has no values in one of the runs"
        )));
    }
    let rows = [("p50", 0.50), ("p90", 0.90), ("p99", 0.99)]
        .into_iter()
        .map(|(quantile, q)| {
            let (x, y) = (nearest_rank(&va, q).unwrap(), nearest_rank(&vb, q).unwrap());
            DeltaRow {
                quantile,
                a: x,
                b: y,
                delta: y as i64 - x as i64,
            }
        })
        .collect();
    Ok(Comparison {
        metric: metric.to_string(),
        rows,
    })
}
