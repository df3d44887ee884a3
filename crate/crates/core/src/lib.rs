//! Discrete-event simulation of secondary users aggregating licensed
//! spectrum slots alongside primary users, with optional buffering.
//!
//! * [`scenario`] parses scenario files.
//! * [`sim`] runs one replication; [`runner`] does replications, sweeps,
//!   CSV output and validation.
//! * [`policy`] and [`queue`] hold the admission logic, [`spectrum`] the
//!   channel model, [`engine`] the event queue and random streams.
//! * [`ctmc`] solves small configurations exactly.
//! * [`metrics`] turns counters into estimates and confidence intervals.
//!
//! ```
//! use chanagg::{parse_scenario, run, Metric, PolicyKind, RunOptions};
//!
//! let sc = parse_scenario("
//! [spectrum]
//! channels = 1
//! slots_per_channel = 1
//! [class.a]
//! [policy]
//! kind = IBS
//! [sim]
//! horizon = 20000
//! replications = 4
//! ")?;
//! let report = run(&sc, &RunOptions::default())?;
//! let pb = report.summary_for(PolicyKind::Ibs, None, Metric::Blocking).unwrap();
//! assert!((pb.mean - 0.5).abs() < 0.02);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc;
pub mod engine;
pub mod metrics;
pub mod policy;
pub mod queue;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod spectrum;

pub use metrics::{CounterSet, Metric};
pub use policy::PolicyKind;
pub use runner::{run, sweep, validate, RunOptions, RunReport, SweepSpec};
pub use scenario::{parse_scenario, Scenario};
pub use sim::{simulate, SimConfig};
