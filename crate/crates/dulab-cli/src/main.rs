use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dulab::circuits::TwoQubitGate;
use dulab::config::RunConfig;
use dulab::scan::{cmd_scan, cmd_spectrum, cmd_verify_with, Report};
use dulab::{Error, C64};

/// Eigenstate correlations and scrambling in Floquet dual-unitary circuits.
#[derive(Parser)]
#[command(name = "dulab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-instance identity checks on small rings (L <= 8).
    Verify(Common),
    /// Monte-Carlo means over the (d, t) grid, with predictions.
    Scan(Common),
    /// Leading transfer-matrix eigenvalues and boundary weights.
    Spectrum(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Scales the first gate of this sample by 1.01 (negative control).
    #[arg(long, hide = true)]
    corrupt_sample: Option<usize>,
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Invalid(_) => EXIT_CONFIG,
        Error::Budget(_) => EXIT_BUDGET,
        Error::Numerical(_) => EXIT_FAIL,
    }
}

fn load(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_path(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = c.threads {
        cfg.threads = Some(t);
    }
    if let Some(f) = &c.format {
        cfg.format = f.parse()?;
    }
    if let Some(o) = &c.output {
        cfg.output = Some(o.clone());
    }
    Ok(cfg)
}

fn emit(cfg: &RunConfig, report: &impl Report) -> Result<(), Error> {
    let text = report.render(cfg.format);
    match &cfg.output {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Verify(c) => {
            let cfg = load(&c)?;
            let corrupt = c.corrupt_sample;
            let tamper = move |i: usize, gates: &mut [TwoQubitGate]| {
                if corrupt == Some(i) {
                    gates[0] = gates[0].scale(C64::new(1.01, 0.0));
                }
            };
            let report = cmd_verify_with(&cfg, &tamper)?;
            emit(&cfg, &report)?;
            let failures = report.failures();
            for f in &failures {
                eprintln!(
                    "FAIL {}: sample {} seed {:#018x} t={:?} d={:?} defect {:.3e} {}",
                    f.name,
                    f.sample,
                    f.seed,
                    f.t,
                    f.d.map(|d| d.to_string()),
                    f.defect,
                    f.note
                );
            }
            Ok(if failures.is_empty() { 0 } else { EXIT_FAIL })
        }
        Command::Scan(c) => {
            let cfg = load(&c)?;
            let result = cmd_scan(&cfg)?;
            emit(&cfg, &result)?;
            for f in result.failures() {
                eprintln!(
                    "FAIL d={} t={}: mean {:?} prediction {:?} ({:?} sigma, max deviation {:?})",
                    f.d, f.t, f.mean, f.prediction, f.sigma_discrepancy, f.max_deviation
                );
            }
            Ok(if result.passed() { 0 } else { EXIT_FAIL })
        }
        Command::Spectrum(c) => {
            let cfg = load(&c)?;
            let report = cmd_spectrum(&cfg)?;
            emit(&cfg, &report)?;
            let mut code = 0;
            for r in report.rows.iter().filter(|r| r.status != "ok") {
                eprintln!("{:?} J={} d={}: {}", r.kind, r.j, r.d, r.status);
                let budget = r.status.starts_with("error: budget");
                code = code.max(if budget { EXIT_BUDGET } else { EXIT_FAIL });
            }
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("dulab: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
