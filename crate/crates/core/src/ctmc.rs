//! Exact steady-state analysis of small configurations, used to check the
//! simulator.
//!
//! The chain tracks aggregate state only: the number of channels held by
//! primary users, the multiset of SU grants, and the number of buffered SUs.
//! That is exact when every SU has the same demand and the policy's
//! tie-breaks only pick *which* SU changes, never *what* the multiset becomes.
//! With primary users present it additionally needs one slot per channel,
//! so that a primary arrival displaces at most one SU and hits each SU with
//! probability proportional to its grant.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::policy::{PolicyKind, SlotDemand};
use crate::sim::SimConfig;

/// Largest chain the builder will enumerate.
pub const MAX_STATES: usize = 100_000;
/// Chains at least this large are solved iteratively.
pub const DENSE_LIMIT: usize = 2_000;
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("configuration outside the exact-analysis family: {0}")]
    Unsupported(String),
    #[error("state space exceeds {MAX_STATES} states")]
    StateSpaceOverflow,
    #[error("generator row {row} sums to {sum}")]
    BadRowSum { row: usize, sum: f64 },
    #[error("negative off-diagonal rate {rate} at ({row}, {col})")]
    NegativeRate { row: usize, col: usize, rate: f64 },
    #[error("chain is not irreducible")]
    Reducible,
    #[error("linear solve failed: matrix is singular")]
    Singular,
    #[error("residual {0:e} above tolerance")]
    NotConverged(f64),
}

/// Parameters of a chain the oracle can solve exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub channels: usize,
    pub slots_per_channel: usize,
    pub pu_arrival_rate: f64,
    pub pu_service_rate: f64,
    pub su_arrival_rate: f64,
    pub su_service_rate: f64,
    pub demand: SlotDemand,
    pub kind: PolicyKind,
    /// Combined capacity of both buffers.
    pub queue_capacity: usize,
    /// Abandonment rate `1/δ` of each buffered SU; 0 disables timeouts.
    pub abandon_rate: f64,
}

impl OracleConfig {
    /// Extracts the chain parameters, refusing anything the aggregate chain
    /// would only approximate.
    pub fn from_sim_config(cfg: &SimConfig) -> Result<Self, OracleError> {
        let refuse = |m: &str| Err(OracleError::Unsupported(m.to_string()));
        if cfg.classes.len() != 1 {
            return refuse("exactly one SU class is required");
        }
        let class = &cfg.classes[0];
        let demand = class.demand[0];
        if class.demand.iter().any(|d| *d != demand) {
            return refuse("slot demand must not depend on the SNR class");
        }
        if cfg.pu_arrival_rate > 0.0 && cfg.slots_per_channel != 1 {
            return refuse("with primary users, each channel must carry exactly one slot");
        }
        let kind = cfg.policy.kind;
        let queue_capacity = if kind.has_queue() {
            cfg.policy.q1_max + cfg.policy.q2_max
        } else {
            0
        };
        let delta = class.deadline.unwrap_or(cfg.deadline);
        let abandon_rate = if delta.is_infinite() || queue_capacity == 0 {
            0.0
        } else if cfg.exp_deadline {
            1.0 / delta
        } else {
            return refuse(
                "a fixed buffer deadline is not memoryless; use an infinite deadline \
                 or enable exp_deadline",
            );
        };
        Ok(Self {
            channels: cfg.channels,
            slots_per_channel: cfg.slots_per_channel,
            pu_arrival_rate: cfg.pu_arrival_rate,
            pu_service_rate: cfg.pu_service_rate,
            su_arrival_rate: class.arrival_rate,
            su_service_rate: class.service_rate,
            demand,
            kind,
            queue_capacity,
            abandon_rate,
        })
    }
}

/// Aggregate system state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OracleState {
    pub pu_channels: usize,
    /// Grants of the SUs in service, largest first.
    pub grants: Vec<u32>,
    pub queued: usize,
}

impl OracleState {
    fn empty() -> Self {
        Self {
            pu_channels: 0,
            grants: Vec::new(),
            queued: 0,
        }
    }

    fn held(&self) -> u32 {
        self.grants.iter().sum()
    }
}

/// Transitions out of one state, by kind. Rates are per second.
#[derive(Debug, Clone, Default)]
struct Moves {
    next: Vec<(OracleState, f64)>,
    /// An arriving SU would be blocked here.
    blocks: bool,
    /// Rate at which admitted SUs are forced to terminate.
    termination_rate: f64,
}

struct Rules<'a> {
    cfg: &'a OracleConfig,
}

impl Rules<'_> {
    fn free(&self, s: &OracleState) -> u32 {
        ((self.cfg.channels - s.pu_channels) * self.cfg.slots_per_channel) as u32 - s.held()
    }

    fn floor(&self) -> u32 {
        self.cfg.kind.admission_floor(&self.cfg.demand)
    }

    fn donatable(&self, s: &OracleState) -> u32 {
        if !self.cfg.kind.is_elastic() {
            return 0;
        }
        let min = self.cfg.demand.min();
        s.grants.iter().map(|g| g.saturating_sub(min)).sum()
    }

    /// Takes `n` slots away, one at a time from the largest grant above the
    /// minimum.
    fn donate(&self, s: &mut OracleState, n: u32) {
        let min = self.cfg.demand.min();
        for _ in 0..n {
            let i = s
                .grants
                .iter()
                .enumerate()
                .filter(|(_, g)| **g > min)
                .max_by_key(|(_, g)| **g)
                .map(|(i, _)| i)
                .expect("donation checked feasible");
            s.grants[i] -= 1;
        }
    }

    fn push(&self, s: &mut OracleState, g: u32) {
        s.grants.push(g);
    }

    fn normalise(s: &mut OracleState) {
        s.grants.sort_unstable_by(|a, b| b.cmp(a));
    }

    /// Buffer drain at the floor, then expansion toward the maximum.
    fn fill(&self, s: &mut OracleState) {
        let floor = self.floor();
        while s.queued > 0 && self.free(s) >= floor {
            s.queued -= 1;
            self.push(s, floor);
        }
        if self.cfg.kind.is_elastic() {
            let max = self.cfg.demand.max();
            while self.free(s) > 0 {
                let Some(i) = s
                    .grants
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| **g < max)
                    .min_by_key(|(_, g)| **g)
                    .map(|(i, _)| i)
                else {
                    break;
                };
                s.grants[i] += 1;
            }
        }
        Self::normalise(s);
    }

    /// Outcome of a fresh arrival; `None` means blocked.
    fn arrival(&self, s: &OracleState) -> Option<OracleState> {
        let mut t = s.clone();
        let free = self.free(s);
        let d = self.cfg.demand;
        if !self.cfg.kind.is_elastic() {
            if free >= d.fixed() {
                self.push(&mut t, d.fixed());
                Self::normalise(&mut t);
                return Some(t);
            }
        } else if free >= d.min() {
            self.push(&mut t, d.max().min(free));
            Self::normalise(&mut t);
            return Some(t);
        } else if self.donatable(s) >= d.min() - free {
            self.donate(&mut t, d.min() - free);
            self.push(&mut t, d.min());
            Self::normalise(&mut t);
            return Some(t);
        }
        if s.queued < self.cfg.queue_capacity {
            t.queued += 1;
            return Some(t);
        }
        None
    }

    /// A primary user takes an idle channel or the channel of one SU holding
    /// grant `grants[victim]`. Returns the new state and whether the SU was
    /// forced to terminate.
    fn pu_hits_su(&self, s: &OracleState, victim: usize) -> (OracleState, bool) {
        let mut t = s.clone();
        t.pu_channels += 1;
        // the lost slot leaves the victim's grant; free slots are unchanged
        let kept = t.grants[victim] - 1;
        let free = self.free(s);
        let d = self.cfg.demand;
        let survive = if !self.cfg.kind.is_elastic() {
            if free >= 1 {
                Some(kept + 1)
            } else {
                None
            }
        } else {
            let extra = free.min(1);
            if kept + extra >= d.min() {
                Some(kept + extra)
            } else {
                let needed = d.min() - kept - extra;
                t.grants[victim] = kept;
                if self.donatable(&t) >= needed {
                    self.donate(&mut t, needed);
                    Some(d.min())
                } else {
                    None
                }
            }
        };
        let terminated = match survive {
            Some(g) => {
                t.grants[victim] = g;
                false
            }
            None => {
                t.grants.remove(victim);
                if t.queued < self.cfg.queue_capacity {
                    t.queued += 1;
                    false
                } else {
                    true
                }
            }
        };
        self.fill(&mut t);
        (t, terminated)
    }

    fn moves(&self, s: &OracleState) -> Moves {
        let c = self.cfg;
        let mut m = Moves::default();
        if c.su_arrival_rate > 0.0 {
            match self.arrival(s) {
                Some(t) => m.next.push((t, c.su_arrival_rate)),
                None => m.blocks = true,
            }
        } else {
            m.blocks = self.arrival(s).is_none();
        }
        // completions: one SU with grant g leaves at rate g·μ
        for (i, &g) in s.grants.iter().enumerate() {
            let mut t = s.clone();
            t.grants.remove(i);
            self.fill(&mut t);
            m.next.push((t, g as f64 * c.su_service_rate));
        }
        if s.queued > 0 && c.abandon_rate > 0.0 {
            let mut t = s.clone();
            t.queued -= 1;
            let rate = s.queued as f64 * c.abandon_rate;
            m.next.push((t, rate));
            m.termination_rate += rate;
        }
        if c.pu_arrival_rate > 0.0 && s.pu_channels < c.channels {
            let idle = (c.channels - s.pu_channels) as f64;
            let free = self.free(s);
            if free > 0 {
                let mut t = s.clone();
                t.pu_channels += 1;
                self.fill(&mut t);
                m.next.push((t, c.pu_arrival_rate * free as f64 / idle));
            }
            for (i, &g) in s.grants.iter().enumerate() {
                let rate = c.pu_arrival_rate * g as f64 / idle;
                let (t, terminated) = self.pu_hits_su(s, i);
                if terminated {
                    m.termination_rate += rate;
                }
                m.next.push((t, rate));
            }
        }
        if s.pu_channels > 0 {
            let mut t = s.clone();
            t.pu_channels -= 1;
            self.fill(&mut t);
            m.next.push((t, s.pu_channels as f64 * c.pu_service_rate));
        }
        m
    }
}

/// Reachable states in breadth-first order from the empty system.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub states: Vec<OracleState>,
    index: HashMap<OracleState, usize>,
    blocking: Vec<bool>,
    termination: Vec<f64>,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, s: &OracleState) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// Sparse generator: off-diagonal rates per row, diagonal stored apart.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

impl GeneratorMatrix {
    /// Builds `Q` from `(from, to, rate)` triples; the diagonal makes every
    /// row sum to zero. Repeated pairs add up and self-loops are dropped.
    pub fn from_rates(n: usize, rates: &[(usize, usize, f64)]) -> Result<Self, OracleError> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, r) in rates {
            if !(r >= 0.0) {
                return Err(OracleError::NegativeRate {
                    row: i,
                    col: j,
                    rate: r,
                });
            }
            if i == j || r == 0.0 {
                continue;
            }
            match rows[i].iter_mut().find(|(c, _)| *c == j) {
                Some(e) => e.1 += r,
                None => rows[i].push((j, r)),
            }
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        let diag = rows.iter().map(|r| -r.iter().map(|e| e.1).sum::<f64>()).collect();
        let q = Self { rows, diag };
        q.check()?;
        Ok(q)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.rows[i]
            .iter()
            .find(|e| e.0 == j)
            .map_or(0.0, |e| e.1)
    }

    /// Off-diagonals non-negative, rows summing to zero within 1e-9.
    pub fn check(&self) -> Result<(), OracleError> {
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, r) in row {
                if r < 0.0 {
                    return Err(OracleError::NegativeRate {
                        row: i,
                        col: j,
                        rate: r,
                    });
                }
            }
            let sum = self.diag[i] + row.iter().map(|e| e.1).sum::<f64>();
            if sum.abs() > 1e-9 {
                return Err(OracleError::BadRowSum { row: i, sum });
            }
        }
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            m[(i, i)] = self.diag[i];
            for &(j, r) in row {
                m[(i, j)] = r;
            }
        }
        m
    }

    /// `‖πQ‖∞`.
    pub fn residual(&self, pi: &[f64]) -> f64 {
        let mut out = vec![0.0; self.len()];
        for (i, row) in self.rows.iter().enumerate() {
            out[i] += pi[i] * self.diag[i];
            for &(j, r) in row {
                out[j] += pi[i] * r;
            }
        }
        out.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn irreducible(&self) -> bool {
        let n = self.len();
        if n == 0 {
            return false;
        }
        let mut back: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                back[j].push(i);
            }
        }
        let fwd: Vec<Vec<usize>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|e| e.0).collect())
            .collect();
        reaches_all(&fwd) && reaches_all(&back)
    }
}

fn reaches_all(adj: &[Vec<usize>]) -> bool {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == adj.len()
}

/// Enumerates the chain of `cfg` and its generator.
pub fn build_generator(cfg: &OracleConfig) -> Result<(StateSpace, GeneratorMatrix), OracleError> {
    let total = (cfg.channels * cfg.slots_per_channel) as u32;
    let d = cfg.demand;
    if d.max() > total || d.fixed() > total {
        return Err(OracleError::Unsupported(
            "demand exceeds the total number of slots".into(),
        ));
    }
    let rules = Rules { cfg };
    let mut states = vec![OracleState::empty()];
    let mut index = HashMap::from([(OracleState::empty(), 0usize)]);
    let mut blocking = Vec::new();
    let mut termination = Vec::new();
    let mut rates = Vec::new();
    let mut frontier = VecDeque::from([0usize]);
    while let Some(i) = frontier.pop_front() {
        let moves = rules.moves(&states[i]);
        blocking.push(moves.blocks);
        termination.push(moves.termination_rate);
        for (t, r) in moves.next {
            let j = match index.get(&t) {
                Some(&j) => j,
                None => {
                    if states.len() >= MAX_STATES {
                        return Err(OracleError::StateSpaceOverflow);
                    }
                    let j = states.len();
                    index.insert(t.clone(), j);
                    states.push(t);
                    frontier.push_back(j);
                    j
                }
            };
            rates.push((i, j, r));
        }
    }
    let q = GeneratorMatrix::from_rates(states.len(), &rates)?;
    Ok((
        StateSpace {
            states,
            index,
            blocking,
            termination,
        },
        q,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolveMethod {
    /// Dense below [`DENSE_LIMIT`] states, iterative above.
    #[default]
    Auto,
    Dense,
    Iterative,
}

/// Stationary distribution `π` with `πQ = 0`, `Σπ = 1`.
pub fn solve_steady_state(q: &GeneratorMatrix) -> Result<Vec<f64>, OracleError> {
    solve_steady_state_with(q, SolveMethod::Auto)
}

pub fn solve_steady_state_with(
    q: &GeneratorMatrix,
    method: SolveMethod,
) -> Result<Vec<f64>, OracleError> {
    q.check()?;
    if !q.irreducible() {
        return Err(OracleError::Reducible);
    }
    let n = q.len();
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let dense = match method {
        SolveMethod::Auto => n < DENSE_LIMIT,
        SolveMethod::Dense => true,
        SolveMethod::Iterative => false,
    };
    let mut pi = if dense {
        solve_dense(q)?
    } else {
        solve_gauss_seidel(q)?
    };
    for p in &mut pi {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    let r = q.residual(&pi);
    if r > RESIDUAL_TOL {
        return Err(OracleError::NotConverged(r));
    }
    Ok(pi)
}

fn solve_dense(q: &GeneratorMatrix) -> Result<Vec<f64>, OracleError> {
    let n = q.len();
    // Qᵀ πᵀ = 0 with the last balance equation replaced by Σπ = 1
    let mut a = q.to_dense().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).ok_or(OracleError::Singular)?;
    Ok(x.iter().copied().collect())
}

fn solve_gauss_seidel(q: &GeneratorMatrix) -> Result<Vec<f64>, OracleError> {
    let n = q.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in q.rows.iter().enumerate() {
        for &(j, r) in row {
            incoming[j].push((i, r));
        }
    }
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut change = 0.0f64;
        for j in 0..n {
            let inflow: f64 = incoming[j].iter().map(|&(i, r)| pi[i] * r).sum();
            let next = inflow / -q.diag[j];
            change = change.max((next - pi[j]).abs());
            pi[j] = next;
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        // the residual alone stops too early on slowly mixing chains
        if change < 1e-15 && q.residual(&pi) <= RESIDUAL_TOL {
            return Ok(pi);
        }
    }
    Err(OracleError::NotConverged(q.residual(&pi)))
}

/// Exact long-run metrics of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMetrics {
    pub blocking: f64,
    pub forced_termination: f64,
    pub capacity: f64,
    pub mean_queue_length: f64,
}

/// Metrics from `π`. Arrivals see time averages (Poisson arrivals), so the
/// blocking probability is the mass of blocking states; forced termination
/// is the termination flow over the admission flow.
pub fn oracle_metrics(pi: &[f64], space: &StateSpace, cfg: &OracleConfig) -> OracleMetrics {
    let mut blocking = 0.0;
    let mut term = 0.0;
    let mut capacity = 0.0;
    let mut queue = 0.0;
    for (k, s) in space.states.iter().enumerate() {
        let p = pi[k];
        if space.blocking[k] {
            blocking += p;
        }
        term += p * space.termination[k];
        capacity += p * s.held() as f64 * cfg.su_service_rate;
        queue += p * s.queued as f64;
    }
    let admitted = cfg.su_arrival_rate * (1.0 - blocking);
    let forced_termination = if admitted > 0.0 { term / admitted } else { 0.0 };
    OracleMetrics {
        blocking,
        forced_termination,
        capacity,
        mean_queue_length: queue,
    }
}

/// Builds, solves and evaluates the chain of `cfg` in one call.
pub fn analyze(cfg: &OracleConfig) -> Result<OracleMetrics, OracleError> {
    let (space, q) = build_generator(cfg)?;
    let pi = solve_steady_state(&q)?;
    Ok(oracle_metrics(&pi, &space, cfg))
}
