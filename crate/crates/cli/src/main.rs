use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chanagg::ctmc::OracleError;
use chanagg::policy::PolicyKind;
use chanagg::runner::{self, RunError, RunOptions, RunReport, SweepSpec, ValidationReport};
use chanagg::scenario::{parse_scenario, Scenario};
use clap::{Args, Parser, Subcommand};

/// Discrete-event simulator for spectrum access with channel aggregation.
#[derive(Parser)]
#[command(name = "chanagg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Independent replications of a scenario.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Runs every (policy, value) cell of a one-parameter sweep.
    Sweep {
        scenario: PathBuf,
        /// Dotted field path, e.g. traffic.pu_arrival_rate or policy.q_max.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        common: Common,
    },
    /// Compares simulation with the exact Markov chain on a restricted scenario.
    Validate {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Quick end-to-end checks.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Base seed; replication k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Output directory.
    #[arg(long, env = "CHANAGG_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Policy override; repeat or comma-separate for several.
    #[arg(long, value_delimiter = ',', value_parser = parse_policy)]
    policy: Vec<PolicyKind>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            policies: self.policy.clone(),
            replications: self.reps,
            seed: self.seed,
        }
    }
}

fn parse_policy(s: &str) -> Result<PolicyKind, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let msg = e.to_string();
        match e {
            RunError::Scenario(_) | RunError::EmptySweep | RunError::Oracle(OracleError::Unsupported(_)) => {
                Failure::Usage(msg)
            }
            _ => Failure::Runtime(msg),
        }
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text).map_err(|e| Failure::Usage(format!("{}:\n{e}", path.display())))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_report(report: &RunReport, dir: &Path, rows_name: &str) -> Result<(), Failure> {
    report.write_rows_csv(create(dir, rows_name)?)?;
    report.write_summary_csv(create(dir, "summary.csv")?)?;
    print_summary(report);
    println!("wrote {} and summary.csv to {}", rows_name, dir.display());
    Ok(())
}

fn print_summary(report: &RunReport) {
    println!("{:<6} {:>10} {:<15} {:>4} {:>12} {:>12}", "policy", "value", "metric", "n", "mean", "ci95");
    for s in &report.summary {
        println!(
            "{:<6} {:>10} {:<15} {:>4} {:>12.6} {:>12}",
            s.policy.name(),
            s.swept_value.as_deref().unwrap_or("-"),
            s.metric.column(),
            s.n,
            s.mean,
            s.half_width.map_or("-".to_string(), |h| format!("{h:.6}")),
        );
    }
    let digest = report
        .rows
        .iter()
        .fold(0u64, |acc, r| acc.rotate_left(5) ^ r.trace_hash);
    println!("trace digest {digest:016x}");
}

fn print_validation(v: &ValidationReport) {
    println!("policy {}", v.policy.name());
    println!(
        "{:<15} {:>12} {:>12} {:>12} {:>12} {:>10}  result",
        "metric", "simulated", "ci95", "exact", "|diff|", "tol"
    );
    for r in &v.rows {
        println!(
            "{:<15} {:>12.6} {:>12} {:>12.6} {:>12.6} {:>10.4}  {}",
            r.metric.column(),
            r.simulated,
            r.half_width.map_or("-".to_string(), |h| format!("{h:.6}")),
            r.exact,
            r.diff,
            r.tolerance,
            if r.pass { "PASS" } else { "FAIL" },
        );
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, common } => {
            let sc = load(&scenario)?;
            let report = runner::run(&sc, &common.options())?;
            write_report(&report, &common.out, "runs.csv")
        }
        Command::Sweep {
            scenario,
            param,
            values,
            common,
        } => {
            let sc = load(&scenario)?;
            let spec = SweepSpec::new(&param, &values);
            let report = runner::sweep(&sc, &spec, &common.options())?;
            write_report(&report, &common.out, "sweep.csv")
        }
        Command::Validate { scenario, common } => {
            let sc = load(&scenario)?;
            let v = runner::validate(&sc, &common.options())?;
            v.write_csv(create(&common.out, "validation.csv")?)?;
            print_validation(&v);
            if v.passed() {
                Ok(())
            } else {
                Err(Failure::Validation("simulation disagrees with the exact chain".into()))
            }
        }
        Command::Selftest => {
            let checks = runner::selftest()?;
            for c in &checks {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                if c.detail.is_empty() {
                    println!("{tag} {}", c.name);
                } else {
                    println!("{tag} {} ({})", c.name, c.detail);
                }
            }
            let failed = checks.iter().filter(|c| !c.pass).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Validation(format!("{failed} selftest check(s) failed")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
