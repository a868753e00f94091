use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use canary::harness::{self, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "canary", version, about = "Run Canary allreduce experiments on a simulated fat tree")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set seed=7`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every repetition of one scenario and print the metrics CSV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the scenario once per axis value.
    Sweep {
        /// One of timeout, noise_prob, concurrency, host_fraction, size, or any config key.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a config file and print it in normalized form.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Compare every host's result against a direct element-wise sum.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Measure two-host single-switch goodput against the wire-efficiency bound.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, String> {
    let text = fs::read_to_string(&common.config).map_err(|e| format!("{}: {e}", common.config.display()))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(|e| format!("{}: {e}", common.config.display()))?;
    for o in &common.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| e.to_string())?;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn emit(text: &str, output: Option<&Path>) -> Result<(), String> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn execute(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run { common, output } => {
            let cfg = load(&common)?;
            let report = harness::run_experiment(&cfg).map_err(|e| e.to_string())?;
            emit(&report.to_csv(), output.as_deref())?;
            Ok(report.all_correct())
        }
        Command::Sweep {
            axis,
            values,
            common,
            output,
        } => {
            let cfg = load(&common)?;
            let values: Vec<String> = values.into_iter().filter(|v| !v.trim().is_empty()).collect();
            let table = harness::sweep(&axis, &values, &cfg).map_err(|e| e.to_string())?;
            emit(&table.to_csv(), output.as_deref())?;
            Ok(true)
        }
        Command::Validate { common } => {
            let cfg = load(&common)?;
            let (jobs, bg) = cfg.host_split();
            eprintln!(
                "ok: {} hosts, {jobs} in {} job(s), {bg} background",
                cfg.host_count(),
                cfg.concurrent_jobs
            );
            emit(&cfg.to_text(), None)?;
            Ok(true)
        }
        Command::Oracle { common } => {
            let cfg = load(&common)?;
            let rows = harness::oracle(&cfg).map_err(|e| e.to_string())?;
            let mut out = String::from("repetition,job,hosts,completed,matching_hosts,passed\n");
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.repetition,
                    r.job,
                    r.hosts,
                    r.completed,
                    r.matching_hosts,
                    r.passed()
                ));
            }
            emit(&out, None)?;
            Ok(rows.iter().all(|r| r.passed()))
        }
        Command::Calibrate { common } => {
            let cfg = load(&common)?;
            let c = harness::calibrate(&cfg).map_err(|e| e.to_string())?;
            let out = format!(
                "elements_per_packet,measured_gbps,expected_gbps,relative_error\n{},{:.4},{:.4},{:.6}\n",
                c.elements_per_packet,
                c.measured_gbps,
                c.expected_gbps,
                c.relative_error()
            );
            emit(&out, None)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs did not produce the correct result");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
