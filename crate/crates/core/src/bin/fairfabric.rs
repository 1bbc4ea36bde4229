use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairfabric::harness::{compare, load_scenario, run_scenario};
use fairfabric::montecarlo::{self, HedgeModel, HopDelay};
use fairfabric::Error;

#[derive(Parser)]
#[command(
    name = "fairfabric",
    version,
    about = "Batch runner for the fair exchange fabric simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and write its CSV outputs.
    Run {
        scenario: PathBuf,
        /// Override a scenario key, e.g. `--set multicast.hedge=1`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Output directory; defaults to the scenario's `out_dir` or `out/<name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantile deltas (B minus A) of one metric between two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        metric: String,
    },
    /// Hedged tree latency distribution; prints the CDF as CSV.
    Montecarlo {
        #[arg(long, default_value_t = 3)]
        depth: u32,
        #[arg(long, default_value_t = 10)]
        fanout: u32,
        #[arg(long, default_value_t = 0)]
        hedge: u32,
        #[arg(long, default_value_t = 100_000)]
        iters: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 20.0)]
        lo_us: f64,
        #[arg(long, default_value_t = 80.0)]
        hi_us: f64,
        /// Write the CDF here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_FAILED_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_OTHER: u8 = 3;

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(match e {
        Error::Config(_) | Error::WorkloadMismatch(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            scenario,
            sets,
            out,
        } => {
            let s = match load_scenario(&scenario, &sets) {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            let r = match run_scenario(&s, out.as_deref()) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            for v in &r.variants {
                let name = if v.name.is_empty() {
                    s.name.as_str()
                } else {
                    v.name.as_str()
                };
                println!("{name}:");
                for (k, val) in &v.metrics {
                    println!("  {k} = {val}");
                }
            }
            println!("outputs in {}", r.dir.display());
            if r.failed_expectations.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &r.failed_expectations {
                    eprintln!("expectation failed: {f}");
                }
                ExitCode::from(EXIT_FAILED_CHECK)
            }
        }
        Cmd::Compare { a, b, metric } => match compare(&a, &b, &metric) {
            Ok(c) => {
                println!("{c}");
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Cmd::Montecarlo {
            depth,
            fanout,
            hedge,
            iters,
            seed,
            lo_us,
            hi_us,
            out,
        } => {
            let model = HedgeModel {
                depth,
                fanout,
                hedge,
                hop: HopDelay::Uniform { lo_us, hi_us },
                iterations: iters,
                seed,
                leaf: 0,
            };
            let summary = match montecarlo::run(&model)
                .and_then(|s| montecarlo::summarize(&s, montecarlo::DEFAULT_QUANTILES))
            {
                Ok(s) => s,
                Err(e) => return fail(e),
            };
            eprintln!(
                "D={depth} F={fanout} H={hedge}: mean {:.3} us, std {:.3} us",
                summary.mean_us, summary.std_us
            );
            match out {
                Some(path) => {
                    if let Err(e) = montecarlo::write_cdf_csv(&path, &summary) {
                        return fail(e);
                    }
                }
                None => {
                    println!("latency_us,cum_prob");
                    for (v, p) in &summary.cdf {
                        println!("{v:.3},{p:.4}");
                    }
                }
            }
            ExitCode::SUCCESS
        }
    }
}
