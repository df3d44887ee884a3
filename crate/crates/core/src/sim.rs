//! One simulation run: pre-schedules the arrival processes, dispatches events
//! to the policy engine and accumulates counters.
//!
//! Service is tracked as work. Each SU draws `W ~ Exp(μ_s)` slot-seconds at
//! arrival and drains it at `θ` slot-seconds per second while it holds `θ`
//! slots, so with a constant grant the service time is `Exp(θ·μ_s)`. When
//! the grant changes the completion is moved to `now + remaining / θ'`; by
//! memorylessness this has the same law as drawing a fresh `Exp(θ'·μ_s)`,
//! but the draw does not depend on the policy, which keeps policies on
//! common random numbers. An SU pushed back into the buffer by a primary
//! user restarts with a fresh draw when it is readmitted.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use thiserror::Error;

use crate::engine::{
    sample_exponential, EngineError, EventKind, EventRecord, RngStreams, Scheduler, StreamId,
    TraceHasher, TrafficRates,
};
use crate::metrics::CounterSet;
use crate::policy::{
    AdmissionDecision, Outcome, PolicyConfig, PolicyEngine, PolicyError, SlotDemand, SuRequest,
    TerminationCause,
};
use crate::queue::EntryOrigin;
use crate::spectrum::{draw_class, SnrClass, SnrMatrix, SpectrumPool};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("t={time}, {kind:?}: {source}")]
    Policy {
        time: f64,
        kind: EventKind,
        source: PolicyError,
    },
    #[error("t={time}, {kind:?}: {source}")]
    Engine {
        time: f64,
        kind: EventKind,
        source: EngineError,
    },
}

/// Traffic and demand of one SU class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassConfig {
    pub name: String,
    pub arrival_rate: f64,
    /// Per-slot service rate `μ_s`.
    pub service_rate: f64,
    /// Slot demand in each SNR class, indexed by [`SnrClass::index`].
    pub demand: [SlotDemand; 3],
    /// Buffer patience for this class, overriding the policy-wide value.
    pub deadline: Option<f64>,
}

impl ClassConfig {
    pub fn demand_for(&self, snr: SnrClass) -> SlotDemand {
        self.demand[snr.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub channels: usize,
    pub slots_per_channel: usize,
    pub pu_arrival_rate: f64,
    pub pu_service_rate: f64,
    pub classes: Vec<ClassConfig>,
    /// Rate of SNR class transitions per SU in the system; 0 freezes them.
    pub snr_rate: f64,
    pub snr_matrix: SnrMatrix,
    pub policy: PolicyConfig,
    /// Buffer patience `δ_max` in seconds; infinite disables timeouts.
    pub deadline: f64,
    /// Draw patience as exponential with mean `δ_max` instead of fixed.
    pub exp_deadline: bool,
    pub horizon: f64,
    pub warmup: f64,
}

impl SimConfig {
    pub fn traffic(&self) -> TrafficRates {
        TrafficRates {
            pu_arrival: self.pu_arrival_rate,
            pu_service: self.pu_service_rate,
            su_arrival: self.classes.iter().map(|c| c.arrival_rate).collect(),
            su_service: self.classes.iter().map(|c| c.service_rate).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        if self.channels == 0 || self.slots_per_channel == 0 {
            return err("channels and slots_per_channel must be at least 1".into());
        }
        if self.classes.is_empty() {
            return err("at least one SU class is required".into());
        }
        self.traffic()
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        if !(self.snr_rate >= 0.0) || !self.snr_rate.is_finite() {
            return err(format!("snr_rate = {} is invalid", self.snr_rate));
        }
        let total = (self.channels * self.slots_per_channel) as u32;
        for c in &self.classes {
            for d in &c.demand {
                if d.max() > total || d.fixed() > total {
                    return err(format!(
                        "class `{}` demands more than the {total} slots available",
                        c.name
                    ));
                }
            }
            if let Some(d) = c.deadline {
                check_deadline(d).map_err(SimError::Config)?;
            }
        }
        check_deadline(self.deadline).map_err(SimError::Config)?;
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return err(format!("horizon = {} is invalid", self.horizon));
        }
        if !(self.warmup >= 0.0) || self.warmup > self.horizon {
            return err(format!(
                "warmup = {} must lie in [0, horizon]",
                self.warmup
            ));
        }
        Ok(())
    }
}

fn check_deadline(d: f64) -> Result<(), String> {
    if d > 0.0 {
        Ok(())
    } else {
        Err(format!("deadline = {d} must be positive or inf"))
    }
}

/// A policy outcome stamped with its event time.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub time: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub counters: CounterSet,
    /// Fingerprint of every processed event.
    pub trace_hash: u64,
    pub events: u64,
    /// Empty unless requested with [`Simulation::record_decisions`].
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone)]
struct SuState {
    class: usize,
    snr: SnrClass,
    counted: bool,
    /// Remaining work in slot-seconds.
    work: f64,
    grant: u32,
    last: f64,
    epoch: u64,
    in_service: bool,
    restart: bool,
}

impl SuState {
    fn progress(&mut self, now: f64) {
        if self.in_service {
            self.work = (self.work - self.grant as f64 * (now - self.last)).max(0.0);
        }
        self.last = now;
    }
}

pub struct Simulation {
    cfg: SimConfig,
    sched: Scheduler,
    rng: RngStreams,
    policy: PolicyEngine,
    sus: BTreeMap<u64, SuState>,
    next_su: u64,
    counters: CounterSet,
    hasher: TraceHasher,
    decisions: Option<Vec<Decision>>,
    last_time: f64,
    audit: bool,
    snr_init: [f64; 3],
}

impl Simulation {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let pool = SpectrumPool::new(cfg.channels, cfg.slots_per_channel)
            .map_err(|e| SimError::Config(e.to_string()))?;
        let policy = PolicyEngine::new(pool, cfg.policy);
        let snr_init = cfg.snr_matrix.stationary();
        let mut sim = Self {
            sched: Scheduler::new(cfg.horizon),
            rng: RngStreams::new(seed),
            policy,
            sus: BTreeMap::new(),
            next_su: 0,
            counters: CounterSet::default(),
            hasher: TraceHasher::default(),
            decisions: None,
            last_time: 0.0,
            audit: cfg!(debug_assertions),
            snr_init,
            cfg,
        };
        sim.prime().map_err(|source| SimError::Engine {
            time: 0.0,
            kind: EventKind::MeasureTick,
            source,
        })?;
        Ok(sim)
    }

    /// Keep every policy outcome in [`RunOutput::decisions`].
    pub fn record_decisions(mut self) -> Self {
        self.decisions = Some(Vec::new());
        self
    }

    /// Check slot bookkeeping after every event (on by default in debug
    /// builds).
    pub fn audit_every_event(mut self, on: bool) -> Self {
        self.audit = on;
        self
    }

    fn prime(&mut self) -> Result<(), EngineError> {
        if self.cfg.pu_arrival_rate > 0.0 {
            let dt = sample_exponential(
                self.cfg.pu_arrival_rate,
                self.rng.stream(StreamId::PuArrivals),
            )?;
            self.sched.schedule(dt, EventKind::PuArrival)?;
        }
        for k in 0..self.cfg.classes.len() {
            self.schedule_su_arrival(k)?;
        }
        if self.cfg.warmup > 0.0 && self.cfg.warmup <= self.cfg.horizon {
            self.sched.schedule(self.cfg.warmup, EventKind::MeasureTick)?;
        }
        Ok(())
    }

    fn schedule_su_arrival(&mut self, class: usize) -> Result<(), EngineError> {
        let rate = self.cfg.classes[class].arrival_rate;
        if rate > 0.0 {
            let dt = sample_exponential(rate, self.rng.stream(StreamId::SuArrivals(class)))?;
            self.sched.schedule_in(dt, EventKind::SuArrival { class })?;
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        while let Some(ev) = self.sched.pop_next() {
            self.advance(ev.time);
            self.hasher.write_event(&ev);
            self.dispatch(&ev)?;
            self.drain_journal(&ev)?;
            if self.audit {
                self.policy.audit().map_err(|source| SimError::Policy {
                    time: ev.time,
                    kind: ev.kind,
                    source,
                })?;
            }
        }
        let horizon = self.cfg.horizon;
        self.advance(horizon);
        let mut counters = self.counters;
        counters.su_in_system = self.sus.values().filter(|s| s.counted).count() as u64;
        counters.observation_time = horizon - self.cfg.warmup;
        Ok(RunOutput {
            counters,
            trace_hash: self.hasher.finish(),
            events: self.sched.processed(),
            decisions: self.decisions.unwrap_or_default(),
        })
    }

    fn advance(&mut self, t: f64) {
        let from = self.last_time.max(self.cfg.warmup);
        if t > from {
            self.counters.queue_occupancy_integral +=
                self.policy.queues().occupancy() as f64 * (t - from);
        }
        self.last_time = t;
    }

    fn counting(&self, t: f64) -> bool {
        t >= self.cfg.warmup
    }

    fn dispatch(&mut self, ev: &EventRecord) -> Result<(), SimError> {
        let t = ev.time;
        let engine = |source| SimError::Engine {
            time: t,
            kind: ev.kind,
            source,
        };
        let policy = |source| SimError::Policy {
            time: t,
            kind: ev.kind,
            source,
        };
        match ev.kind {
            EventKind::PuArrival => {
                let counted = self.counting(t);
                if counted {
                    self.counters.pu_arrivals += 1;
                }
                match self.pick_pu_channel() {
                    Some(ch) => {
                        let Self { cfg, rng, policy: engine_state, .. } = self;
                        let mut patience = |req: &SuRequest| draw_patience(cfg, rng, req.class);
                        engine_state
                            .handle_pu_arrival(ch, t, &mut patience)
                            .map_err(policy)?;
                        let hold = sample_exponential(
                            self.cfg.pu_service_rate,
                            self.rng.stream(StreamId::PuHolding),
                        )
                        .map_err(engine)?;
                        self.sched
                            .schedule_in(hold, EventKind::PuDeparture { channel: ch })
                            .map_err(engine)?;
                    }
                    None if counted => self.counters.pu_blocked += 1,
                    None => {}
                }
                let dt = sample_exponential(
                    self.cfg.pu_arrival_rate,
                    self.rng.stream(StreamId::PuArrivals),
                )
                .map_err(engine)?;
                self.sched
                    .schedule_in(dt, EventKind::PuArrival)
                    .map_err(engine)?;
            }
            EventKind::PuDeparture { channel } => {
                self.policy
                    .handle_pu_departure(channel, t)
                    .map_err(policy)?;
            }
            EventKind::SuArrival { class } => {
                let su = self.next_su;
                self.next_su += 1;
                let snr = draw_class(&self.snr_init, self.rng.stream(StreamId::SnrInit));
                let cc = &self.cfg.classes[class];
                let demand = cc.demand_for(snr);
                let work = sample_exponential(
                    cc.service_rate,
                    self.rng.stream(StreamId::SuWork(class)),
                )
                .map_err(engine)?;
                let counted = self.counting(t);
                self.sus.insert(
                    su,
                    SuState {
                        class,
                        snr,
                        counted,
                        work,
                        grant: 0,
                        last: t,
                        epoch: 0,
                        in_service: false,
                        restart: false,
                    },
                );
                let req = SuRequest {
                    su_id: su,
                    class,
                    snr,
                    demand,
                    arrival_time: t,
                };
                let Self { cfg, rng, policy: engine_state, .. } = self;
                let mut patience = |req: &SuRequest| draw_patience(cfg, rng, req.class);
                let decision = engine_state
                    .handle_su_arrival(req, t, &mut patience)
                    .map_err(policy)?;
                let blocked = matches!(decision, AdmissionDecision::Block { .. });
                if counted {
                    self.counters.su_arrivals += 1;
                    if blocked {
                        self.counters.su_blocked += 1;
                    } else {
                        self.counters.su_admitted += 1;
                    }
                }
                if !blocked && self.cfg.snr_rate > 0.0 {
                    self.schedule_snr(su).map_err(engine)?;
                }
                self.schedule_su_arrival(class).map_err(engine)?;
            }
            EventKind::SuServiceComplete { su, epoch } => {
                let live = self
                    .sus
                    .get(&su)
                    .is_some_and(|s| s.in_service && s.epoch == epoch);
                if live {
                    self.policy.handle_su_departure(su, t).map_err(policy)?;
                }
            }
            EventKind::QueueDeadline { su, seq } => {
                self.policy.check_queue_timeout(su, seq, t);
            }
            EventKind::SnrTransition { su } => {
                if let Some(st) = self.sus.get_mut(&su) {
                    let next = self
                        .cfg
                        .snr_matrix
                        .step(st.snr, self.rng.stream(StreamId::SnrStep));
                    st.snr = next;
                    let demand = self.cfg.classes[st.class].demand_for(next);
                    self.policy.update_snr(su, next, demand);
                    self.schedule_snr(su).map_err(engine)?;
                }
            }
            EventKind::MeasureTick => {}
        }
        Ok(())
    }

    /// Uniform channel; if a primary user already holds it, uniform over the
    /// channels no primary user holds. `None` when every channel is taken.
    fn pick_pu_channel(&mut self) -> Option<usize> {
        let rng = self.rng.stream(StreamId::PuChannel);
        let pool = self.policy.pool();
        let ch = rng.random_range(0..pool.channels());
        if !pool.is_pu_channel(ch) {
            return Some(ch);
        }
        let idle = pool.non_pu_channels();
        if idle.is_empty() {
            return None;
        }
        Some(idle[rng.random_range(0..idle.len())])
    }

    fn schedule_snr(&mut self, su: u64) -> Result<(), EngineError> {
        let dt = sample_exponential(self.cfg.snr_rate, self.rng.stream(StreamId::SnrStep))?;
        self.sched.schedule_in(dt, EventKind::SnrTransition { su })?;
        Ok(())
    }

    /// Applies the policy's outcomes to the service clocks and counters.
    fn drain_journal(&mut self, ev: &EventRecord) -> Result<(), SimError> {
        let t = ev.time;
        let engine = |source| SimError::Engine {
            time: t,
            kind: ev.kind,
            source,
        };
        let mut dirty = BTreeSet::new();
        for outcome in self.policy.take_outcomes() {
            if let Some(log) = self.decisions.as_mut() {
                log.push(Decision {
                    time: t,
                    outcome: outcome.clone(),
                });
            }
            match outcome {
                Outcome::Admitted { su, granted, .. } => {
                    let st = self.sus.get_mut(&su).expect("admitted SU is tracked");
                    if st.restart {
                        let mu = self.cfg.classes[st.class].service_rate;
                        st.work = sample_exponential(mu, self.rng.stream(StreamId::SuRestart(st.class)))
                            .map_err(engine)?;
                        st.restart = false;
                    }
                    st.in_service = true;
                    st.grant = granted;
                    st.last = t;
                    dirty.insert(su);
                }
                Outcome::Enqueued {
                    su,
                    seq,
                    deadline,
                    origin,
                    ..
                } => {
                    if origin == EntryOrigin::PreemptedFeedback {
                        let st = self.sus.get_mut(&su).expect("requeued SU is tracked");
                        st.progress(t);
                        st.in_service = false;
                        st.restart = true;
                        st.epoch += 1;
                        dirty.remove(&su);
                    }
                    if deadline.is_finite() {
                        self.sched
                            .schedule(deadline, EventKind::QueueDeadline { su, seq })
                            .map_err(engine)?;
                    }
                }
                Outcome::Blocked { su } => {
                    self.sus.remove(&su);
                }
                Outcome::Relocated { su, granted } | Outcome::Resized { su, granted } => {
                    let st = self.sus.get_mut(&su).expect("resized SU is tracked");
                    st.progress(t);
                    st.grant = granted;
                    dirty.insert(su);
                }
                Outcome::ForcedTerminated { su, cause } => {
                    dirty.remove(&su);
                    let st = self.sus.remove(&su).expect("terminated SU is tracked");
                    if st.counted {
                        self.counters.su_forced_terminated += 1;
                        match cause {
                            TerminationCause::Preempted => self.counters.preemption_drops += 1,
                            TerminationCause::Timeout => self.counters.timeout_drops += 1,
                        }
                    }
                }
                Outcome::Completed { su } => {
                    dirty.remove(&su);
                    let st = self.sus.remove(&su).expect("completed SU is tracked");
                    if st.counted {
                        self.counters.su_completed += 1;
                    }
                }
            }
        }
        for su in dirty {
            let st = self.sus.get_mut(&su).expect("dirty SU is tracked");
            if !st.in_service {
                continue;
            }
            st.epoch += 1;
            let rate = st.grant as f64;
            let at = t + st.work / rate;
            let epoch = st.epoch;
            self.sched
                .schedule(at, EventKind::SuServiceComplete { su, epoch })
                .map_err(engine)?;
        }
        Ok(())
    }
}

fn draw_patience(cfg: &SimConfig, rng: &mut RngStreams, class: usize) -> f64 {
    let delta = cfg.classes[class].deadline.unwrap_or(cfg.deadline);
    if delta.is_infinite() {
        return f64::INFINITY;
    }
    if cfg.exp_deadline {
        sample_exponential(1.0 / delta, rng.stream(StreamId::Patience))
            .expect("deadline validated positive")
    } else {
        delta
    }
}

/// Runs `cfg` once with `seed`.
pub fn simulate(cfg: &SimConfig, seed: u64) -> Result<RunOutput, SimError> {
    Simulation::new(cfg.clone(), seed)?.run()
}
