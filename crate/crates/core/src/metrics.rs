//! Event counters, the performance estimators computed from them, and
//! replication statistics.

use std::fmt;

use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no SU arrivals were observed")]
    NoArrivals,
    #[error("no SU was admitted")]
    NoAdmissions,
    #[error("observation time is zero")]
    NoObservationTime,
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Raw counts of one run, restricted to SUs that arrived after warm-up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CounterSet {
    pub su_arrivals: u64,
    pub su_blocked: u64,
    /// Arrivals that were served or buffered.
    pub su_admitted: u64,
    pub su_forced_terminated: u64,
    pub su_completed: u64,
    /// Admitted SUs still in service or buffered at the horizon.
    pub su_in_system: u64,
    /// Split of `su_forced_terminated` by cause.
    pub preemption_drops: u64,
    pub timeout_drops: u64,
    pub pu_arrivals: u64,
    /// Primary arrivals that found every channel busy.
    pub pu_blocked: u64,
    /// ∫ buffer occupancy dt over the observation window.
    pub queue_occupancy_integral: f64,
    pub observation_time: f64,
}

impl CounterSet {
    /// `arrivals = blocked + admitted` and
    /// `admitted = completed + forced_terminated + in_system`.
    pub fn partition_holds(&self) -> bool {
        self.su_arrivals == self.su_blocked + self.su_admitted
            && self.su_admitted
                == self.su_completed + self.su_forced_terminated + self.su_in_system
            && self.su_forced_terminated == self.preemption_drops + self.timeout_drops
    }
}

/// `P_b`: blocked arrivals over all arrivals.
pub fn blocking_probability(c: &CounterSet) -> Result<f64, MetricsError> {
    if c.su_arrivals == 0 {
        return Err(MetricsError::NoArrivals);
    }
    Ok(c.su_blocked as f64 / c.su_arrivals as f64)
}

/// `P_f`: forced terminations over admitted SUs.
pub fn forced_termination_probability(c: &CounterSet) -> Result<f64, MetricsError> {
    if c.su_admitted == 0 {
        return Err(MetricsError::NoAdmissions);
    }
    Ok(c.su_forced_terminated as f64 / c.su_admitted as f64)
}

/// `P_a = 1 − P_b`.
pub fn access_probability(c: &CounterSet) -> Result<f64, MetricsError> {
    Ok(1.0 - blocking_probability(c)?)
}

/// `ρ_su`: service completions per second.
pub fn su_capacity(c: &CounterSet) -> Result<f64, MetricsError> {
    if !(c.observation_time > 0.0) {
        return Err(MetricsError::NoObservationTime);
    }
    Ok(c.su_completed as f64 / c.observation_time)
}

/// `δ_l`: time-averaged number of buffered SUs.
pub fn mean_queue_length(c: &CounterSet) -> Result<f64, MetricsError> {
    if !(c.observation_time > 0.0) {
        return Err(MetricsError::NoObservationTime);
    }
    Ok(c.queue_occupancy_integral / c.observation_time)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Blocking,
    ForcedTermination,
    Access,
    Capacity,
    MeanQueueLength,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Blocking,
        Metric::ForcedTermination,
        Metric::Access,
        Metric::Capacity,
        Metric::MeanQueueLength,
    ];

    /// Column name in the CSV output.
    pub fn column(self) -> &'static str {
        match self {
            Metric::Blocking => "P_b",
            Metric::ForcedTermination => "P_f",
            Metric::Access => "P_a",
            Metric::Capacity => "capacity",
            Metric::MeanQueueLength => "mean_queue_len",
        }
    }

    /// The estimate, or `None` where it is undefined for this run.
    pub fn of(self, c: &CounterSet) -> Option<f64> {
        match self {
            Metric::Blocking => blocking_probability(c),
            Metric::ForcedTermination => forced_termination_probability(c),
            Metric::Access => access_probability(c),
            Metric::Capacity => su_capacity(c),
            Metric::MeanQueueLength => mean_queue_length(c),
        }
        .ok()
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// Mean, sample standard deviation and 95% Student-t half-width of a set of
/// independent replications.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSummary {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std_dev: f64,
    pub half_width: f64,
}

/// Two-sided 97.5% quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof is positive")
        .inverse_cdf(0.975)
}

impl ReplicationSummary {
    pub fn from_values(values: &[f64]) -> Result<Self, MetricsError> {
        let n = values.len();
        if n < 2 {
            return Err(MetricsError::TooFewReplications(n));
        }
        // shifted by the first value so identical samples give exactly zero
        let shift = values[0];
        let mean = shift + values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        let half_width = t_quantile_975(n - 1) * std_dev / (n as f64).sqrt();
        Ok(Self {
            values: values.to_vec(),
            mean,
            std_dev,
            half_width,
        })
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower() <= x && x <= self.upper()
    }
}

/// Summary of the per-replication differences `a[k] − b[k]`. Under common
/// random numbers this is much tighter than comparing two separate intervals.
pub fn paired_difference(a: &[f64], b: &[f64]) -> Result<ReplicationSummary, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    ReplicationSummary::from_values(&d)
}

/// Per-metric summaries. A metric that is undefined in some replication is
/// summarised over the rest, and left out when fewer than two remain.
pub fn summarize(reps: &[CounterSet]) -> Result<Vec<(Metric, ReplicationSummary)>, MetricsError> {
    if reps.len() < 2 {
        return Err(MetricsError::TooFewReplications(reps.len()));
    }
    Ok(Metric::ALL
        .iter()
        .filter_map(|&m| {
            let vals: Vec<f64> = reps.iter().filter_map(|c| m.of(c)).collect();
            ReplicationSummary::from_values(&vals).ok().map(|s| (m, s))
        })
        .collect())
}
