//! Replications, parameter sweeps, CSV output and oracle validation.
//!
//! Replication `k` of every cell runs with seed `base_seed + k`, so all
//! policies and all sweep values see the same random numbers.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::ctmc::{analyze, OracleConfig, OracleError, OracleMetrics};
use crate::metrics::{CounterSet, Metric, ReplicationSummary};
use crate::policy::PolicyKind;
use crate::scenario::{parse_scenario, Scenario, ScenarioError};
use crate::sim::{simulate, SimError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{policy}{}, replication {replication}: {source}",
        .value.as_ref().map(|v| format!(" at {v}")).unwrap_or_default())]
    Sim {
        policy: PolicyKind,
        value: Option<String>,
        replication: usize,
        source: SimError,
    },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("sweep needs at least one value")]
    EmptySweep,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Command-line style overrides of the scenario's `[sim]` and `[policy]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Policies to run; empty means the scenario's own (for `run`) or
    /// IBS_Q and RBS_Q (for `sweep`).
    pub policies: Vec<PolicyKind>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
}

/// Result of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub policy: PolicyKind,
    pub swept_value: Option<String>,
    pub replication: usize,
    pub seed: u64,
    pub counters: CounterSet,
    pub trace_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: PolicyKind,
    pub swept_value: Option<String>,
    pub metric: Metric,
    /// Replications in which the metric is defined.
    pub n: usize,
    pub mean: f64,
    /// Absent for a single replication.
    pub std_dev: Option<f64>,
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<ReplicationRow>,
    pub summary: Vec<SummaryRow>,
}

impl RunReport {
    pub fn summary_for(
        &self,
        policy: PolicyKind,
        value: Option<&str>,
        metric: Metric,
    ) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| {
            s.policy == policy && s.swept_value.as_deref() == value && s.metric == metric
        })
    }

    /// Per-replication values of `metric` in one cell, in replication order.
    pub fn values(&self, policy: PolicyKind, value: Option<&str>, metric: Metric) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.policy == policy && r.swept_value.as_deref() == value)
            .filter_map(|r| metric.of(&r.counters))
            .collect()
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<(), RunError> {
        let mut w = csv_writer(out);
        w.write_record(ROW_HEADER)?;
        for r in &self.rows {
            let c = &r.counters;
            let metric = |m: Metric| m.of(c).map(fmt_f64).unwrap_or_default();
            w.write_record([
                r.policy.name().to_string(),
                r.swept_value.clone().unwrap_or_default(),
                r.replication.to_string(),
                metric(Metric::Blocking),
                metric(Metric::ForcedTermination),
                metric(Metric::Access),
                metric(Metric::Capacity),
                metric(Metric::MeanQueueLength),
                c.su_arrivals.to_string(),
                c.su_blocked.to_string(),
                c.su_admitted.to_string(),
                c.su_forced_terminated.to_string(),
                c.su_completed.to_string(),
                c.su_in_system.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<(), RunError> {
        let mut w = csv_writer(out);
        w.write_record(SUMMARY_HEADER)?;
        for s in &self.summary {
            w.write_record([
                s.policy.name().to_string(),
                s.swept_value.clone().unwrap_or_default(),
                s.metric.column().to_string(),
                s.n.to_string(),
                fmt_f64(s.mean),
                s.std_dev.map(fmt_f64).unwrap_or_default(),
                s.half_width.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn rows_csv_string(&self) -> Result<String, RunError> {
        let mut buf = Vec::new();
        self.write_rows_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    }

    pub fn summary_csv_string(&self) -> Result<String, RunError> {
        let mut buf = Vec::new();
        self.write_summary_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV is UTF-8"))
    }
}

pub const ROW_HEADER: [&str; 14] = [
    "policy",
    "swept_value",
    "replication",
    "P_b",
    "P_f",
    "P_a",
    "capacity",
    "mean_queue_len",
    "arrivals",
    "blocked",
    "admitted",
    "dropped",
    "completed",
    "in_system",
];

pub const SUMMARY_HEADER: [&str; 7] = [
    "policy",
    "swept_value",
    "metric",
    "n",
    "mean",
    "stddev",
    "ci95_half_width",
];

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Shortest representation that reads back to the same value.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

struct Cell {
    policy: PolicyKind,
    value: Option<String>,
    scenario: Scenario,
}

fn execute(cells: Vec<Cell>, reps: usize, base_seed: u64) -> Result<RunReport, RunError> {
    let configs = cells
        .iter()
        .map(|c| c.scenario.to_sim_config(Some(c.policy)))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..reps).map(move |k| (c, k)))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(c, k)| {
            let seed = base_seed.wrapping_add(k as u64);
            let cell = &cells[c];
            let out = simulate(&configs[c], seed).map_err(|source| RunError::Sim {
                policy: cell.policy,
                value: cell.value.clone(),
                replication: k,
                source,
            })?;
            Ok(ReplicationRow {
                policy: cell.policy,
                swept_value: cell.value.clone(),
                replication: k,
                seed,
                counters: out.counters,
                trace_hash: out.trace_hash,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let summary = summarize_cells(&cells, &rows);
    Ok(RunReport { rows, summary })
}

fn summarize_cells(cells: &[Cell], rows: &[ReplicationRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for cell in cells {
        let counters: Vec<&CounterSet> = rows
            .iter()
            .filter(|r| r.policy == cell.policy && r.swept_value == cell.value)
            .map(|r| &r.counters)
            .collect();
        for m in Metric::ALL {
            let vals: Vec<f64> = counters.iter().filter_map(|c| m.of(c)).collect();
            let (mean, std_dev, half_width) = match vals.len() {
                0 => continue,
                1 => (vals[0], None, None),
                _ => {
                    let s = ReplicationSummary::from_values(&vals).expect("two or more values");
                    (s.mean, Some(s.std_dev), Some(s.half_width))
                }
            };
            out.push(SummaryRow {
                policy: cell.policy,
                swept_value: cell.value.clone(),
                metric: m,
                n: vals.len(),
                mean,
                std_dev,
                half_width,
            });
        }
    }
    out
}

fn settings(scenario: &Scenario, opts: &RunOptions) -> Result<(usize, u64), RunError> {
    let reps = opts.replications.unwrap_or(scenario.sim.replications);
    if reps == 0 {
        return Err(ScenarioError {
            errors: vec![crate::scenario::FieldError {
                line: None,
                field: "sim.replications".into(),
                message: "must be at least 1".into(),
            }],
        }
        .into());
    }
    Ok((reps, opts.seed.unwrap_or(scenario.sim.seed)))
}

/// Independent replications of the scenario, one block per policy.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunReport, RunError> {
    let (reps, seed) = settings(scenario, opts)?;
    let policies = if opts.policies.is_empty() {
        vec![scenario.policy.kind]
    } else {
        opts.policies.clone()
    };
    let cells = policies
        .into_iter()
        .map(|policy| Cell {
            policy,
            value: None,
            scenario: scenario.clone(),
        })
        .collect();
    execute(cells, reps, seed)
}

/// A field to vary and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Dotted path such as `traffic.pu_arrival_rate` or `policy.q_max`.
    pub param: String,
    pub values: Vec<String>,
}

impl SweepSpec {
    /// Parses a comma-separated value list.
    pub fn new(param: &str, values: &str) -> Self {
        Self {
            param: param.trim().to_string(),
            values: values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect(),
        }
    }
}

/// Runs every (policy, value) cell. Rows come out sorted by policy name,
/// then value (numerically when every value is a number), then replication.
pub fn sweep(scenario: &Scenario, spec: &SweepSpec, opts: &RunOptions) -> Result<RunReport, RunError> {
    if spec.values.is_empty() {
        return Err(RunError::EmptySweep);
    }
    let (reps, seed) = settings(scenario, opts)?;
    let mut policies = if opts.policies.is_empty() {
        vec![PolicyKind::IbsQ, PolicyKind::RbsQ]
    } else {
        opts.policies.clone()
    };
    policies.sort_by_key(|p| p.name());
    policies.dedup();
    let mut values = spec.values.clone();
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(values).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        values = pairs.into_iter().map(|p| p.1).collect();
    }
    let mut cells = Vec::new();
    for &policy in &policies {
        for v in &values {
            let mut sc = scenario.clone();
            sc.set(&spec.param, v)?;
            cells.push(Cell {
                policy,
                value: Some(v.clone()),
                scenario: sc,
            });
        }
    }
    execute(cells, reps, seed)
}

/// Probabilities must agree to this absolute difference.
pub const PROBABILITY_TOLERANCE: f64 = 0.01;
/// Capacity and queue length must agree to this relative difference.
pub const RELATIVE_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub metric: Metric,
    pub simulated: f64,
    pub half_width: Option<f64>,
    pub exact: f64,
    pub diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub policy: PolicyKind,
    pub exact: OracleMetrics,
    pub rows: Vec<ValidationRow>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RunError> {
        let mut w = csv_writer(out);
        w.write_record([
            "metric",
            "simulated",
            "ci95_half_width",
            "exact",
            "abs_diff",
            "tolerance",
            "pass",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.metric.column().to_string(),
                fmt_f64(r.simulated),
                r.half_width.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.exact),
                fmt_f64(r.diff),
                fmt_f64(r.tolerance),
                r.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates a scenario inside the exact-analysis family and compares the
/// estimates with the chain's values. Scenarios outside the family are
/// refused.
pub fn validate(scenario: &Scenario, opts: &RunOptions) -> Result<ValidationReport, RunError> {
    let policy = opts.policies.first().copied().unwrap_or(scenario.policy.kind);
    let cfg = scenario.to_sim_config(Some(policy))?;
    let oracle = OracleConfig::from_sim_config(&cfg)?;
    let exact = analyze(&oracle)?;
    let report = run(
        scenario,
        &RunOptions {
            policies: vec![policy],
            ..opts.clone()
        },
    )?;
    let rows = [
        (Metric::Blocking, exact.blocking),
        (Metric::ForcedTermination, exact.forced_termination),
        (Metric::Access, 1.0 - exact.blocking),
        (Metric::Capacity, exact.capacity),
        (Metric::MeanQueueLength, exact.mean_queue_length),
    ]
    .into_iter()
    .filter_map(|(metric, exact)| {
        let s = report.summary_for(policy, None, metric)?;
        let tolerance = match metric {
            Metric::Blocking | Metric::ForcedTermination | Metric::Access => PROBABILITY_TOLERANCE,
            _ => RELATIVE_TOLERANCE * exact.abs().max(0.5),
        };
        let diff = (s.mean - exact).abs();
        Some(ValidationRow {
            metric,
            simulated: s.mean,
            half_width: s.half_width,
            exact,
            diff,
            tolerance,
            pass: diff <= tolerance,
        })
    })
    .collect();
    Ok(ValidationReport {
        policy,
        exact,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

const SELFTEST_LOSS: &str = "
[spectrum]
channels = 1
slots_per_channel = 1
[class.a]
arrival_rate = 1
service_rate = 1
[policy]
kind = IBS
[sim]
horizon = 20000
replications = 4
seed = 11
";

const SELFTEST_MIXED: &str = "
[spectrum]
channels = 3
slots_per_channel = 2
[traffic]
pu_arrival_rate = 0.4
pu_service_rate = 1
snr_rate = 0.2
[class.a]
arrival_rate = 1.5
service_rate = 0.6
theta_min = 1
theta_max = 1, 2, 3
[class.b]
arrival_rate = 0.8
service_rate = 1
theta = 2
[policy]
kind = RBS_Q
q_max = 2
deadline = 3
[sim]
horizon = 3000
warmup = 100
replications = 3
seed = 5
";

/// Quick end-to-end checks of an installed build.
pub fn selftest() -> Result<Vec<SelftestCheck>, RunError> {
    let mut checks = Vec::new();

    let loss = parse_scenario(SELFTEST_LOSS)?;
    let v = validate(&loss, &RunOptions::default())?;
    let pb = v.rows.iter().find(|r| r.metric == Metric::Blocking);
    checks.push(SelftestCheck {
        name: "single-slot loss system matches the exact chain",
        pass: v.passed(),
        detail: pb.map_or(String::new(), |r| {
            format!("P_b {:.4} vs {:.4}", r.simulated, r.exact)
        }),
    });

    let mixed = parse_scenario(SELFTEST_MIXED)?;
    let opts = RunOptions {
        policies: PolicyKind::ALL.to_vec(),
        ..Default::default()
    };
    let a = run(&mixed, &opts)?;
    let b = run(&mixed, &opts)?;
    let same = a.rows_csv_string()? == b.rows_csv_string()?
        && a.rows.iter().zip(&b.rows).all(|(x, y)| x.trace_hash == y.trace_hash);
    checks.push(SelftestCheck {
        name: "repeated runs are identical",
        pass: same,
        detail: format!("{} rows", a.rows.len()),
    });

    let broken = a.rows.iter().filter(|r| !r.counters.partition_holds()).count();
    checks.push(SelftestCheck {
        name: "every arrival is accounted for",
        pass: broken == 0,
        detail: format!("{broken} of {} runs violate the partition", a.rows.len()),
    });

    let identity = a.rows.iter().all(|r| {
        match (Metric::Access.of(&r.counters), Metric::Blocking.of(&r.counters)) {
            (Some(pa), Some(pb)) => (pa + pb - 1.0).abs() <= 1e-12,
            _ => true,
        }
    });
    checks.push(SelftestCheck {
        name: "access and blocking probabilities sum to one",
        pass: identity,
        detail: String::new(),
    });
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "
        [spectrum]
        channels = 2
        slots_per_channel = 2
        [traffic]
        pu_arrival_rate = 0.3
        [class.a]
        arrival_rate = 1
        service_rate = 0.7
        theta_min = 1
        theta_max = 2
        [policy]
        kind = RBS_Q
        q_max = 1
        deadline = 2
        [sim]
        horizon = 500
        replications = 3
    ";

    #[test]
    fn sweep_cardinality_and_order() {
        let sc = parse_scenario(SMALL).unwrap();
        let spec = SweepSpec::new("traffic.pu_arrival_rate", "0.4, 0.1, 0.3, 0.2, 0.5");
        let r = sweep(&sc, &spec, &RunOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 30);
        let keys: Vec<_> = r
            .rows
            .iter()
            .map(|x| (x.policy.name(), x.swept_value.clone().unwrap(), x.replication))
            .collect();
        assert_eq!(keys[0], ("IBS_Q", "0.1".to_string(), 0));
        assert_eq!(keys[29], ("RBS_Q", "0.5".to_string(), 2));
        let mut sorted = keys.clone();
        sorted.sort_by(|a, b| {
            a.0.cmp(b.0)
                .then(a.1.parse::<f64>().unwrap().total_cmp(&b.1.parse().unwrap()))
                .then(a.2.cmp(&b.2))
        });
        assert_eq!(keys, sorted);
    }

    #[test]
    fn zero_queue_matches_baseline() {
        let sc = parse_scenario(SMALL).unwrap();
        let spec = SweepSpec::new("policy.q_max", "0");
        let opts = RunOptions {
            policies: PolicyKind::ALL.to_vec(),
            ..Default::default()
        };
        let r = sweep(&sc, &spec, &opts).unwrap();
        let rows = |p| -> Vec<_> {
            r.rows
                .iter()
                .filter(|x| x.policy == p)
                .map(|x| (x.counters.clone(), x.trace_hash))
                .collect()
        };
        assert_eq!(rows(PolicyKind::IbsQ), rows(PolicyKind::Ibs));
        assert_eq!(rows(PolicyKind::RbsQ), rows(PolicyKind::Rbs));
    }

    #[test]
    fn single_value_sweep_equals_run() {
        let sc = parse_scenario(SMALL).unwrap();
        let opts = RunOptions {
            policies: vec![PolicyKind::RbsQ],
            ..Default::default()
        };
        let s = sweep(&sc, &SweepSpec::new("traffic.pu_arrival_rate", "0.3"), &opts).unwrap();
        let r = run(&sc, &opts).unwrap();
        let strip = |rep: &RunReport| -> Vec<_> {
            rep.rows.iter().map(|x| (x.counters.clone(), x.trace_hash)).collect()
        };
        assert_eq!(strip(&s), strip(&r));
    }

    #[test]
    fn single_replication_has_empty_ci() {
        let sc = parse_scenario(SMALL).unwrap();
        let r = run(
            &sc,
            &RunOptions {
                replications: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.summary.iter().all(|s| s.n == 1 && s.half_width.is_none()));
        let csv = r.summary_csv_string().unwrap();
        let line = csv.lines().nth(1).unwrap();
        assert!(line.ends_with(",,"), "{line}");
    }

    #[test]
    fn csv_schema_and_line_endings() {
        let sc = parse_scenario(SMALL).unwrap();
        let r = run(&sc, &RunOptions::default()).unwrap();
        let csv = r.rows_csv_string().unwrap();
        assert!(!csv.contains('\r'));
        assert_eq!(csv.lines().next().unwrap(), ROW_HEADER.join(","));
        assert_eq!(csv.lines().count(), 4);
        let summary = r.summary_csv_string().unwrap();
        assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    }

    #[test]
    fn validate_refuses_fixed_deadline() {
        let mut sc = parse_scenario(SMALL).unwrap();
        sc.set("spectrum.slots_per_channel", "1").unwrap();
        sc.set("class.a.theta_max", "1").unwrap();
        let e = validate(&sc, &RunOptions::default()).unwrap_err();
        assert!(e.to_string().contains("deadline"), "{e}");
    }

    #[test]
    fn validate_no_pu_reports_zero_termination() {
        let mut sc = parse_scenario(SELFTEST_LOSS).unwrap();
        sc.set("sim.horizon", "5000").unwrap();
        let v = validate(&sc, &RunOptions::default()).unwrap();
        let pf = v
            .rows
            .iter()
            .find(|r| r.metric == Metric::ForcedTermination)
            .unwrap();
        assert_eq!((pf.simulated, pf.exact), (0.0, 0.0));
        assert!(v.passed(), "{v:?}");
    }

    #[test]
    fn selftest_passes() {
        for c in selftest().unwrap() {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }
}
