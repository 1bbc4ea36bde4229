//! Scenario files, parameter sweeps and CSV output for batch runs.
//!
//! A scenario is a TOML document. `--set key=value` overrides are applied to the
//! document before it is decoded, so they obey the same schema as the file.

mod compare;
mod output;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::ClockErrorModel;
use crate::hold_release::HoldReleaseConfig;
use crate::inbound::{
    fairness_oracle, generate, run_inbound, InboundConfig, InboundReport, OracleCase,
    OracleOutcome, PacingConfig, Workload, WorkloadConfig,
};
use crate::mcast::sim::{run_multicast, MulticastConfig, MulticastReport, SpikeInjection};
use crate::mcast::{plan_tree, TreePlan};
use crate::montecarlo::{self, HedgeModel, HopDelay};
use crate::netsim::{LatencyModel, NetConfig, ReliableConfig, VmProfile};
use crate::sequencer::SeqVariant;
use crate::types::DEFAULT_MESSAGE_BYTES;
use crate::{Error, Result};

pub use compare::{compare, Comparison, DeltaRow};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    #[default]
    Multicast,
    Inbound,
    /// Highest loss-free multicast rate, by bisection.
    Goodput,
    Montecarlo,
    /// End-to-end inbound fairness oracle over random small cases.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MulticastSpec {
    /// Market participants served.
    pub n: u32,
    pub fanout: Option<u32>,
    pub depth: Option<u32>,
    pub hedge: u32,
    pub rrps: bool,
    pub root_hedge: bool,
    pub receiver_hedging: bool,
    pub direct_unicast: bool,
    pub rate_per_s: f64,
    pub duration_s: f64,
    pub warmup_ms: f64,
    pub size_bytes: u32,
    pub vm: VmProfile,
}

impl Default for MulticastSpec {
    fn default() -> Self {
        MulticastSpec {
            n: 100,
            fanout: None,
            depth: None,
            hedge: 0,
            rrps: true,
            root_hedge: true,
            receiver_hedging: false,
            direct_unicast: false,
            rate_per_s: 5_000.0,
            duration_s: 1.0,
            warmup_ms: 0.0,
            size_bytes: DEFAULT_MESSAGE_BYTES,
            vm: VmProfile::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InboundSpec {
    pub tree: bool,
    pub fanout: Option<u32>,
    pub depth: Option<u32>,
    pub sequencer: bool,
    pub seq_variant: SeqVariant,
    pub loq: bool,
    /// LOQ action window; negative treats every order as critical.
    pub w: i64,
    pub heartbeat_us: f64,
    pub md_delay_us: f64,
    pub pacing: PacingConfig,
    pub gateway_vm: VmProfile,
    pub proxy_vm: VmProfile,
    pub root_vm: VmProfile,
    pub order_bytes: u32,
    pub rate_window_ms: f64,
    pub drain_ms: f64,
}

impl Default for InboundSpec {
    fn default() -> Self {
        let c = InboundConfig::default();
        InboundSpec {
            tree: c.tree,
            fanout: c.fanout,
            depth: c.depth,
            sequencer: c.sequencer,
            seq_variant: c.seq_variant,
            loq: c.loq,
            w: c.w.unwrap_or(-1),
            heartbeat_us: c.heartbeat_us,
            md_delay_us: c.md_delay_us,
            pacing: c.pacing,
            gateway_vm: c.gateway_vm,
            proxy_vm: c.proxy_vm,
            root_vm: c.root_vm,
            order_bytes: c.order_bytes,
            rate_window_ms: c.rate_window_ms,
            drain_ms: c.drain_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GoodputSpec {
    pub lo_rate: f64,
    pub hi_rate: f64,
    /// Stop when `hi / lo` falls below `1 + rel_tol`.
    pub rel_tol: f64,
}

impl Default for GoodputSpec {
    fn default() -> Self {
        GoodputSpec {
            lo_rate: 1_000.0,
            hi_rate: 2_000_000.0,
            rel_tol: 0.002,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub depths: Vec<u32>,
    pub fanout: u32,
    pub hedges: Vec<u32>,
    pub hop: HopDelay,
    pub iterations: u64,
    pub quantiles: usize,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        MonteCarloSpec {
            depths: vec![3],
            fanout: 10,
            hedges: vec![0],
            hop: HopDelay::default(),
            iterations: 100_000,
            quantiles: montecarlo::DEFAULT_QUANTILES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub cases: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { cases: 500 }
    }
}

/// One axis of a parameter sweep; every combination of axes is a variant.
///
/// Values replace the key; with `merge`, table values are merged into the table
/// at `key`, so one axis can move several related keys together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<toml::Value>,
    #[serde(default)]
    pub merge: bool,
    /// Directory-name labels, one per value; derived from the values if empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

/// A check on a summary metric, evaluated after the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    /// Variant name; empty applies to every variant.
    #[serde(default)]
    pub variant: String,
    pub metric: String,
    pub op: Op,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub latency: LatencyModel,
    pub clock: ClockErrorModel,
    pub reliable: ReliableConfig,
    pub multicast: MulticastSpec,
    pub hold_release: HoldReleaseConfig,
    pub spikes: Vec<SpikeInjection>,
    pub workload: WorkloadConfig,
    pub inbound: InboundSpec,
    pub goodput: GoodputSpec,
    pub montecarlo: MonteCarloSpec,
    pub oracle: OracleSpec,
    pub sweep: Vec<Sweep>,
    pub expect: Vec<Expect>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    put_path(doc, key, value, false)
}

fn put_path(doc: &mut toml::Table, key: &str, value: toml::Value, merging: bool) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(cfg_err(format!("invalid key `{key}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| cfg_err(format!("key `{key}`: `{part}` is not a table")))?;
    }
    let last = parts[parts.len() - 1].to_string();
    match (table.get_mut(&last), value) {
        (Some(toml::Value::Table(existing)), toml::Value::Table(new)) if merging => {
            merge(existing, new)
        }
        (_, value) => {
            table.insert(last, value);
        }
    }
    Ok(())
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

fn decode(doc: &toml::Table) -> std::result::Result<Scenario, String> {
    toml::from_str(&doc.to_string()).map_err(|e| e.message().to_string())
}

pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), parse_value(v.trim())))
}

/// Decodes `text` with `overrides` applied; errors name the offending key.
pub fn parse_scenario(text: &str, overrides: &[String]) -> Result<Scenario> {
    let base: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| cfg_err(format!("scenario: {e}")))?;
    decode(&base).map_err(|e| cfg_err(format!("scenario: {e}")))?;
    let mut doc = base.clone();
    for o in overrides {
        let (k, v) = parse_override(o)?;
        let mut single = base.clone();
        set_path(&mut single, &k, v.clone())?;
        if let Err(e) = decode(&single) {
            return Err(cfg_err(format!("--set {k}: {e}")));
        }
        set_path(&mut doc, &k, v)?;
    }
    let s = decode(&doc).map_err(|e| cfg_err(format!("scenario: {e}")))?;
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path, overrides: &[String]) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut s = parse_scenario(&text, overrides)?;
    if s.name.is_empty() {
        s.name = path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(s)
}

/// A resolved point of the sweep.
#[derive(Clone, Debug)]
pub struct Variant {
    /// Directory name; empty for a scenario without sweeps.
    pub name: String,
    pub scenario: Scenario,
}

fn label(key: &str, v: &toml::Value, i: usize) -> String {
    let last = key.rsplit('.').next().unwrap_or(key);
    let value = match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(x) => x.to_string(),
        toml::Value::Float(x) => x.to_string(),
        toml::Value::Boolean(b) => b.to_string(),
        _ => return format!("{last}{i}"),
    };
    let clean: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{last}={clean}")
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Every sweep combination, first axis outermost.
    pub fn variants(&self) -> Result<Vec<Variant>> {
        if self.sweep.is_empty() {
            return Ok(vec![Variant {
                name: String::new(),
                scenario: self.clone(),
            }]);
        }
        let base: toml::Table = self.to_toml().parse().expect("round trip");
        let mut combos: Vec<(Vec<String>, toml::Table)> = vec![(Vec::new(), base)];
        for axis in &self.sweep {
            if axis.values.is_empty() {
                return Err(cfg_err(format!("sweep `{}` has no values", axis.key)));
            }
            if !axis.labels.is_empty() && axis.labels.len() != axis.values.len() {
                return Err(cfg_err(format!(
                    "sweep `{}` needs one label per value",
                    axis.key
                )));
            }
            let mut next = Vec::new();
            for (names, doc) in &combos {
                for (i, v) in axis.values.iter().enumerate() {
                    let mut d = doc.clone();
                    put_path(&mut d, &axis.key, v.clone(), axis.merge)?;
                    let mut n = names.clone();
                    n.push(
                        axis.labels
                            .get(i)
                            .cloned()
                            .unwrap_or_else(|| label(&axis.key, v, i)),
                    );
                    next.push((n, d));
                }
            }
            combos = next;
        }
        combos
            .into_iter()
            .map(|(names, mut doc)| {
                doc.remove("sweep");
                let s = decode(&doc).map_err(|e| cfg_err(format!("sweep: {e}")))?;
                s.validate_one()?;
                Ok(Variant {
                    name: names.join("_"),
                    scenario: s,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            self.validate_one()
        } else {
            self.variants().map(|_| ())
        }
    }

    fn validate_one(&self) -> Result<()> {
        match self.kind {
            Kind::Multicast | Kind::Goodput => self.multicast_config()?.validate(),
            Kind::Inbound => {
                self.workload.validate()?;
                let c = self.inbound_config();
                c.validate()?;
                c.plan(self.workload.n_mps).map(|_| ())
            }
            Kind::Montecarlo => {
                let m = &self.montecarlo;
                if m.depths.is_empty() || m.hedges.is_empty() {
                    return Err(cfg_err(
                        "montecarlo.depths and montecarlo.hedges must be non-empty",
                    ));
                }
                for model in self.hedge_models() {
                    model.validate()?;
                }
                Ok(())
            }
            Kind::Oracle if self.oracle.cases == 0 => Err(cfg_err("oracle.cases must be >= 1")),
            Kind::Oracle => Ok(()),
        }
    }

    fn net(&self) -> NetConfig {
        NetConfig {
            seed: self.seed,
            latency: self.latency.clone(),
            clock: self.clock,
            reliable: self.reliable,
            trace: false,
        }
    }

    pub fn tree_plan(&self) -> Result<TreePlan> {
        let m = &self.multicast;
        if m.n == 0 {
            return Err(cfg_err("multicast.n must be >= 1"));
        }
        let leaves = if m.receiver_hedging { m.n * 2 } else { m.n };
        if m.direct_unicast {
            return Ok(TreePlan::direct_unicast(leaves));
        }
        let plan = match (m.fanout, m.depth) {
            (Some(f), Some(d)) => TreePlan::new(leaves, f, d, 0)?,
            (None, None) => plan_tree(leaves)?,
            _ => {
                return Err(cfg_err(
                    "multicast.fanout and multicast.depth must be given together",
                ))
            }
        };
        Ok(plan
            .with_hedge(m.hedge)?
            .with_rrps(m.rrps)
            .with_root_hedge(m.root_hedge))
    }

    pub fn multicast_config(&self) -> Result<MulticastConfig> {
        let m = &self.multicast;
        let mut c = MulticastConfig::new(self.tree_plan()?);
        c.net = self.net();
        c.receiver_hedging = m.receiver_hedging;
        c.rate_per_s = m.rate_per_s;
        c.duration_s = m.duration_s;
        c.warmup_ms = m.warmup_ms;
        c.size_bytes = m.size_bytes;
        c.hold_release = self.hold_release.clone();
        c.vm = m.vm;
        c.spikes = self.spikes.clone();
        Ok(c)
    }

    pub fn inbound_config(&self) -> InboundConfig {
        let i = &self.inbound;
        InboundConfig {
            net: self.net(),
            tree: i.tree,
            fanout: i.fanout,
            depth: i.depth,
            sequencer: i.sequencer,
            seq_variant: i.seq_variant,
            loq: i.loq,
            w: (i.w >= 0).then_some(i.w),
            heartbeat_us: i.heartbeat_us,
            md_delay_us: i.md_delay_us,
            pacing: i.pacing,
            gateway_vm: i.gateway_vm,
            proxy_vm: i.proxy_vm,
            root_vm: i.root_vm,
            order_bytes: i.order_bytes,
            rate_window_ms: i.rate_window_ms,
            drain_ms: i.drain_ms,
            mid_schedule: None,
        }
    }

    pub fn hedge_models(&self) -> Vec<HedgeModel> {
        let m = &self.montecarlo;
        let mut out = Vec::new();
        for &depth in &m.depths {
            for &hedge in &m.hedges {
                out.push(HedgeModel {
                    depth,
                    fanout: m.fanout,
                    hedge,
                    hop: m.hop,
                    iterations: m.iterations,
                    seed: self.seed,
                    leaf: 0,
                });
            }
        }
        out
    }

    /// Identifies the offered load so paired runs can be checked for a shared workload.
    pub fn multicast_workload_hash(&self) -> String {
        let m = &self.multicast;
        let key = format!(
            "{}|{}|{}|{}|{}",
            m.rate_per_s, m.duration_s, m.warmup_ms, m.size_bytes, m.n
        );
        hex::encode(Sha256::digest(key.as_bytes()))
    }
}

/// Outcome of one variant, kept in memory for callers that inspect results directly.
#[derive(Clone, Debug)]
pub enum Outcome {
    Multicast(Box<MulticastReport>),
    Inbound(Box<InboundReport>, Box<Workload>),
    Goodput {
        max_rate: f64,
        proxy_packets_per_message: f64,
    },
    Montecarlo(Vec<(HedgeModel, montecarlo::Summary)>),
    Oracle(Vec<(u64, OracleOutcome)>),
}

/// Flat `(metric, value)` summary row set.
pub type Metrics = Vec<(String, String)>;

#[derive(Clone, Debug)]
pub struct VariantResult {
    pub name: String,
    pub dir: PathBuf,
    pub outcome: Outcome,
    pub metrics: Metrics,
}

impl VariantResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .and_then(|(_, v)| v.parse().ok())
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub variants: Vec<VariantResult>,
    /// Failed `expect` checks, formatted for display.
    pub failed_expectations: Vec<String>,
}

impl RunResult {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }
}

fn run_variant(s: &Scenario, dir: &Path) -> Result<(Outcome, Metrics)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    output::write(&dir.join("config.toml"), &s.to_toml())?;
    match s.kind {
        Kind::Multicast => {
            let r = run_multicast(&s.multicast_config()?)?;
            let metrics = output::write_multicast(dir, &r, &s.multicast_workload_hash())?;
            Ok((Outcome::Multicast(Box::new(r)), metrics))
        }
        Kind::Goodput => {
            let (max_rate, packets) = goodput(s)?;
            let metrics = vec![
                (
                    "max_loss_free_rate_per_s".to_string(),
                    format!("{max_rate:.1}"),
                ),
                (
                    "proxy_packets_per_message".to_string(),
                    format!("{packets:.3}"),
                ),
                ("workload_hash".to_string(), s.multicast_workload_hash()),
            ];
            output::write_metrics(&dir.join("summary.csv"), &metrics)?;
            Ok((
                Outcome::Goodput {
                    max_rate,
                    proxy_packets_per_message: packets,
                },
                metrics,
            ))
        }
        Kind::Inbound => {
            let w = generate(&s.workload, s.seed)?;
            let r = run_inbound(&s.inbound_config(), &w)?;
            let metrics = output::write_inbound(dir, &r, &w)?;
            Ok((Outcome::Inbound(Box::new(r), Box::new(w)), metrics))
        }
        Kind::Montecarlo => {
            let mut rows = Vec::new();
            for model in s.hedge_models() {
                let samples = montecarlo::run(&model)?;
                let summary = montecarlo::summarize(&samples, s.montecarlo.quantiles)?;
                let file = format!(
                    "cdf_D{}_F{}_H{}.csv",
                    model.depth, model.fanout, model.hedge
                );
                montecarlo::write_cdf_csv(&dir.join(file), &summary)?;
                rows.push((model, summary));
            }
            let metrics = output::write_montecarlo(dir, &rows)?;
            Ok((Outcome::Montecarlo(rows), metrics))
        }
        Kind::Oracle => {
            let mut rows = Vec::new();
            for k in 0..s.oracle.cases {
                let seed = s.seed.wrapping_add(k);
                rows.push((seed, fairness_oracle(&OracleCase::random(seed))?));
            }
            let metrics = output::write_oracle(dir, &rows)?;
            Ok((Outcome::Oracle(rows), metrics))
        }
    }
}

/// Bisects on the multicast rate for the highest rate with no drops and no losses.
fn goodput(s: &Scenario) -> Result<(f64, f64)> {
    let g = &s.goodput;
    if !(g.lo_rate > 0.0 && g.hi_rate > g.lo_rate && g.rel_tol > 0.0) {
        return Err(cfg_err(
            "goodput needs 0 < lo_rate < hi_rate and rel_tol > 0",
        ));
    }
    let base = s.multicast_config()?;
    let attempt = |rate: f64| -> Result<(bool, MulticastReport)> {
        let mut c = base.clone();
        c.rate_per_s = rate;
        let r = run_multicast(&c)?;
        Ok((
            r.egress_drops == 0 && r.ingress_drops == 0 && r.summary.losses == 0,
            r,
        ))
    };
    let (ok, mut best) = attempt(g.lo_rate)?;
    if !ok {
        return Err(cfg_err(format!(
            "goodput.lo_rate {} already loses packets",
            g.lo_rate
        )));
    }
    let (mut lo, mut hi) = (g.lo_rate, g.hi_rate);
    while hi / lo > 1.0 + g.rel_tol {
        let mid = (lo * hi).sqrt();
        let (ok, r) = attempt(mid)?;
        if ok {
            lo = mid;
            best = r;
        } else {
            hi = mid;
        }
    }
    let per_proxy = best.proxy_packets_per_message(0);
    let mean = per_proxy.iter().sum::<f64>() / per_proxy.len().max(1) as f64;
    Ok((lo, mean))
}

fn check_expectations(s: &Scenario, variants: &[VariantResult]) -> Result<Vec<String>> {
    let mut failed = Vec::new();
    for e in &s.expect {
        let targets: Vec<&VariantResult> = variants
            .iter()
            .filter(|v| e.variant.is_empty() || v.name == e.variant)
            .collect();
        if targets.is_empty() {
            return Err(cfg_err(format!("expect: no variant named `{}`", e.variant)));
        }
        for v in targets {
            let got = v
                .metric(&e.metric)
                .ok_or_else(|| cfg_err(format!("expect: unknown metric `{}`", e.metric)))?;
            let ok = match e.op {
                Op::Lt => got < e.value,
                Op::Le => got <= e.value,
                Op::Eq => got == e.value,
                Op::Ge => got >= e.value,
                Op::Gt => got > e.value,
            };
            if !ok {
                let at = if v.name.is_empty() {
                    String::new()
                } else {
                    format!(" [{}]", v.name)
                };
                failed.push(format!(
                    "{}{at}: {} = {got}, expected {:?} {}",
                    e.metric, e.metric, e.op, e.value
                ));
            }
        }
    }
    Ok(failed)
}

/// Runs every variant into `out` (or the scenario's own output directory).
///
/// Outputs are built in a sibling staging directory and moved into place only
/// on success, so a failed run leaves nothing behind.
pub fn run_scenario(s: &Scenario, out: Option<&Path>) -> Result<RunResult> {
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| s.out_dir.clone())
        .unwrap_or_else(|| {
            PathBuf::from("out").join(if s.name.is_empty() {
                "scenario"
            } else {
                &s.name
            })
        });
    let staging = {
        let mut os = dir.clone().into_os_string();
        os.push(".partial");
        PathBuf::from(os)
    };
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    let result = (|| {
        let variants = s.variants()?;
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        output::write(&staging.join("config.toml"), &s.to_toml())?;
        let mut results = Vec::new();
        for v in &variants {
            let vdir = if v.name.is_empty() {
                staging.clone()
            } else {
                staging.join(&v.name)
            };
            let (outcome, metrics) = run_variant(&v.scenario, &vdir)?;
            results.push(VariantResult {
                name: v.name.clone(),
                dir: dir.join(&v.name),
                outcome,
                metrics,
            });
        }
        if !s.sweep.is_empty() {
            output::write_variant_index(&staging.join("summary.csv"), &results)?;
        }
        Ok(results)
    })();
    let results = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            return Err(e);
        }
    };
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::rename(&staging, &dir).map_err(|e| Error::io(&dir, e))?;
    let failed_expectations = check_expectations(s, &results)?;
    Ok(RunResult {
        dir,
        variants: results,
        failed_expectations,
    })
}

#[cfg(test)]
mod tests;
