use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use katolab::config::{CheckName, ScenarioConfig, SweepAxis};
use katolab::report::Status;
use katolab::scenario::{resolve_out_dir, run_scenario, sweep};
use katolab::Error;

#[derive(Parser)]
#[command(name = "katolab", version, about = "Kato-bound numerics on model manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; KATOLAB_OUT_DIR takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed of the test-function suite.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every check of a scenario and write the report.
    Analyze {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a scenario once per value of a parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// gamma, k_target, resolution or eta; defaults to the [sweep] section.
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// List the available checks.
    ListChecks,
}

fn load(run: &RunArgs) -> Result<(ScenarioConfig, PathBuf, PathBuf), Error> {
    if let Some(n) = run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let mut cfg = ScenarioConfig::from_path(&run.config)?;
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    let base = run.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = resolve_out_dir(run.out.clone(), std::env::var("KATOLAB_OUT_DIR").ok());
    Ok((cfg, base, out))
}

fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Json(_) | Error::Eigen(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ListChecks => {
            let mut out = std::io::stdout().lock();
            for c in CheckName::ALL {
                let _ = writeln!(out, "{:16} {}", c.as_str(), c.description());
            }
            return ExitCode::SUCCESS;
        }
        Command::Analyze { run } => load(&run).and_then(|(cfg, base, out)| {
            let outcome = run_scenario(&cfg, &base, Some(&out))?;
            let mut stdout = std::io::stdout().lock();
            for line in outcome.report.status_lines() {
                let _ = writeln!(stdout, "{line}");
            }
            let _ = writeln!(stdout, "report: {}", out.join(&cfg.name).join("report.json").display());
            Ok(outcome.report.status)
        }),
        Command::Sweep { run, axis, values } => load(&run).and_then(|(cfg, base, out)| {
            let (axis, values) = match (axis, values, &cfg.sweep) {
                (Some(a), Some(v), _) => (a, v),
                (a, v, Some(s)) => (a.unwrap_or(s.axis), v.unwrap_or_else(|| s.values.clone())),
                _ => {
                    return Err(Error::Config(
                        "sweep needs --axis and --values or a [sweep] section".into(),
                    ))
                }
            };
            let table = sweep(&cfg, axis, &values, &base, Some(&out))?;
            let mut stdout = std::io::stdout().lock();
            for row in &table.rows {
                let _ = writeln!(stdout, "{:8} {} = {}", row.status.as_str(), row.scenario, row.value);
            }
            Ok(table.status())
        }),
    };
    match result {
        Ok(Status::Fail) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
