//! Admission and aggregation policies.
//!
//! Four policies share one state machine:
//!
//! * `IBS` grants every SU exactly its demand `θ` or blocks it.
//! * `RBS` grants anything in `[θ_min, θ_max]`. When the free slots fall
//!   short of `θ_min`, incumbents above their own minimum donate slots one at
//!   a time, largest grant first.
//! * `IBS_Q` and `RBS_Q` add the two FIFO buffers: an SU that would be
//!   blocked waits instead, and an SU pushed off its channels by a primary
//!   user re-enters the buffer rather than being terminated.
//!
//! The engine does not own a clock or random numbers. Every state change is
//! appended to a journal of [`Outcome`]s that the simulator drains after each
//! call to reschedule service completions and timers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::queue::{DualQueueController, EntryOrigin, QueueFull, QueueId, QueuedEntry};
use crate::spectrum::{SlotOwner, SnrClass, SpectrumError, SpectrumPool};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("slot demand invalid: {0}")]
    BadDemand(String),
    #[error("unknown allocation for SU {0}")]
    UnknownAllocation(u64),
    #[error("SU {0} is already in the system")]
    DuplicateSu(u64),
    #[error("inconsistent state: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Ibs,
    Rbs,
    IbsQ,
    RbsQ,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Ibs,
        PolicyKind::Rbs,
        PolicyKind::IbsQ,
        PolicyKind::RbsQ,
    ];

    /// RBS family: elastic grants with donation and expansion.
    pub fn is_elastic(self) -> bool {
        matches!(self, PolicyKind::Rbs | PolicyKind::RbsQ)
    }

    pub fn has_queue(self) -> bool {
        matches!(self, PolicyKind::IbsQ | PolicyKind::RbsQ)
    }

    /// The queue-less policy of the same family.
    pub fn baseline(self) -> Self {
        if self.is_elastic() {
            PolicyKind::Rbs
        } else {
            PolicyKind::Ibs
        }
    }

    /// Smallest grant that admits an SU with this demand.
    pub fn admission_floor(self, demand: &SlotDemand) -> u32 {
        if self.is_elastic() {
            demand.min()
        } else {
            demand.fixed()
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Ibs => "IBS",
            PolicyKind::Rbs => "RBS",
            PolicyKind::IbsQ => "IBS_Q",
            PolicyKind::RbsQ => "RBS_Q",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().replace('+', "_").as_str() {
            "IBS" => Ok(PolicyKind::Ibs),
            "RBS" => Ok(PolicyKind::Rbs),
            "IBS_Q" => Ok(PolicyKind::IbsQ),
            "RBS_Q" => Ok(PolicyKind::RbsQ),
            _ => Err(format!(
                "unknown policy `{s}` (expected IBS, RBS, IBS_Q or RBS_Q)"
            )),
        }
    }
}

/// Slot demand of one SU: `fixed` for the IBS family, `[min, max]` for the
/// RBS family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotDemand {
    fixed: u32,
    min: u32,
    max: u32,
}

impl SlotDemand {
    pub fn new(fixed: u32, min: u32, max: u32) -> Result<Self, PolicyError> {
        if fixed == 0 || min == 0 {
            return Err(PolicyError::BadDemand("demand must be at least 1 slot".into()));
        }
        if min > max {
            return Err(PolicyError::BadDemand(format!(
                "theta_min {min} exceeds theta_max {max}"
            )));
        }
        Ok(Self { fixed, min, max })
    }

    /// Same demand for every policy.
    pub fn exact(n: u32) -> Self {
        Self::new(n, n, n).expect("demand must be at least 1")
    }

    pub fn fixed(&self) -> u32 {
        self.fixed
    }

    pub fn min(&self) -> u32 {
        self.min
    }

    pub fn max(&self) -> u32 {
        self.max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuRequest {
    pub su_id: u64,
    pub class: usize,
    pub snr: SnrClass,
    /// Demand for the current SNR class.
    pub demand: SlotDemand,
    pub arrival_time: f64,
}

/// Slots currently granted to an SU in service.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub request: SuRequest,
    /// Flat slot indices into the spectrum pool.
    pub slots: Vec<usize>,
    /// Demand in force when service started; bounds donation and expansion.
    pub bounds: SlotDemand,
    pub service_start: f64,
}

impl Allocation {
    pub fn su_id(&self) -> u64 {
        self.request.su_id
    }

    pub fn granted(&self) -> u32 {
        self.slots.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AdmissionDecision {
    Admit(Allocation),
    Enqueue { su: u64, queue: QueueId },
    Block { su: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminationCause {
    /// Lost its channels to a primary user with nowhere to go.
    Preempted,
    /// Waited past its deadline in the buffer.
    Timeout,
}

/// One state change, in the order it happened.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Admitted {
        su: u64,
        granted: u32,
        from_queue: bool,
    },
    Enqueued {
        su: u64,
        queue: QueueId,
        seq: u64,
        deadline: f64,
        origin: EntryOrigin,
    },
    Blocked {
        su: u64,
    },
    /// Survived a primary-user arrival, possibly with fewer slots.
    Relocated {
        su: u64,
        granted: u32,
    },
    /// Grant changed by donation or expansion.
    Resized {
        su: u64,
        granted: u32,
    },
    ForcedTerminated {
        su: u64,
        cause: TerminationCause,
    },
    Completed {
        su: u64,
    },
}

impl Outcome {
    pub fn su(&self) -> u64 {
        match *self {
            Outcome::Admitted { su, .. }
            | Outcome::Enqueued { su, .. }
            | Outcome::Blocked { su }
            | Outcome::Relocated { su, .. }
            | Outcome::Resized { su, .. }
            | Outcome::ForcedTerminated { su, .. }
            | Outcome::Completed { su } => su,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub q1_max: usize,
    pub q2_max: usize,
    pub strict_hol: bool,
}

/// Buffer deadline source: returns the patience `δ` (seconds, possibly
/// infinite) for a request entering the buffer.
pub type Patience<'a> = dyn FnMut(&SuRequest) -> f64 + 'a;

#[derive(Debug, Clone)]
pub struct PolicyEngine {
    kind: PolicyKind,
    pool: SpectrumPool,
    active: BTreeMap<u64, Allocation>,
    queues: DualQueueController,
    journal: Vec<Outcome>,
}

impl PolicyEngine {
    pub fn new(pool: SpectrumPool, cfg: PolicyConfig) -> Self {
        let (q1, q2) = if cfg.kind.has_queue() {
            (cfg.q1_max, cfg.q2_max)
        } else {
            (0, 0)
        };
        Self {
            kind: cfg.kind,
            pool,
            active: BTreeMap::new(),
            queues: DualQueueController::new(q1, q2, cfg.strict_hol),
            journal: Vec::new(),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn pool(&self) -> &SpectrumPool {
        &self.pool
    }

    pub fn queues(&self) -> &DualQueueController {
        &self.queues
    }

    pub fn allocation(&self, su: u64) -> Option<&Allocation> {
        self.active.get(&su)
    }

    pub fn allocations(&self) -> impl Iterator<Item = &Allocation> {
        self.active.values()
    }

    /// Number of SUs in service (`K`).
    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn is_queued(&self, su: u64) -> bool {
        self.queues.iter().any(|e| e.request.su_id == su)
    }

    /// Drains the outcome journal.
    pub fn take_outcomes(&mut self) -> Vec<Outcome> {
        std::mem::take(&mut self.journal)
    }

    /// Decides a fresh SU arrival.
    ///
    /// The resource test compares the request against the currently free
    /// slots: incumbents already hold theirs.
    pub fn handle_su_arrival(
        &mut self,
        req: SuRequest,
        now: f64,
        patience: &mut Patience<'_>,
    ) -> Result<AdmissionDecision, PolicyError> {
        let su = req.su_id;
        if self.active.contains_key(&su) || self.is_queued(su) {
            return Err(PolicyError::DuplicateSu(su));
        }
        if let Some(alloc) = self.try_admit(req.clone(), now, false)? {
            return Ok(AdmissionDecision::Admit(alloc));
        }
        if self.kind.has_queue() {
            if let Ok(queue) = self.push_queue(req, now, EntryOrigin::FreshArrival, patience) {
                return Ok(AdmissionDecision::Enqueue { su, queue });
            }
        }
        self.journal.push(Outcome::Blocked { su });
        Ok(AdmissionDecision::Block { su })
    }

    /// Admits `req` if the policy can find it slots.
    fn try_admit(
        &mut self,
        req: SuRequest,
        now: f64,
        from_queue: bool,
    ) -> Result<Option<Allocation>, PolicyError> {
        let free = self.pool.free_slots() as u32;
        let demand = req.demand;
        let grant = if !self.kind.is_elastic() {
            if free < demand.fixed() {
                return Ok(None);
            }
            demand.fixed()
        } else if free >= demand.min() {
            demand.max().min(free)
        } else {
            let needed = demand.min() - free;
            if self.donatable() < needed {
                return Ok(None);
            }
            let freed = self.readjust_donate(needed);
            debug_assert_eq!(freed.len() as u32, needed);
            demand.min()
        };
        Ok(Some(self.allocate(req, grant, now, from_queue)?))
    }

    fn allocate(
        &mut self,
        req: SuRequest,
        grant: u32,
        now: f64,
        from_queue: bool,
    ) -> Result<Allocation, PolicyError> {
        let su = req.su_id;
        let slots = self.pool.take_free(grant as usize, su)?;
        let alloc = Allocation {
            bounds: req.demand,
            request: req,
            slots,
            service_start: now,
        };
        self.active.insert(su, alloc.clone());
        self.journal.push(Outcome::Admitted {
            su,
            granted: grant,
            from_queue,
        });
        Ok(alloc)
    }

    fn push_queue(
        &mut self,
        req: SuRequest,
        now: f64,
        origin: EntryOrigin,
        patience: &mut Patience<'_>,
    ) -> Result<QueueId, QueueFull> {
        let delta = patience(&req);
        let su = req.su_id;
        let seq = self.queues.next_seq();
        let deadline = now + delta;
        let entry = QueuedEntry {
            request: req,
            enqueue_time: now,
            deadline,
            origin,
            seq,
        };
        let queue = self.queues.enqueue(entry)?;
        self.journal.push(Outcome::Enqueued {
            su,
            queue,
            seq,
            deadline,
            origin,
        });
        Ok(queue)
    }

    /// Slots incumbents could give up without dropping below their minimum.
    pub fn donatable(&self) -> u32 {
        if !self.kind.is_elastic() {
            return 0;
        }
        self.active
            .values()
            .map(|a| a.granted().saturating_sub(a.bounds.min()))
            .sum()
    }

    /// Takes slots from incumbents, one at a time from the largest grant
    /// above its own minimum (lowest SU id on ties), until `needed` slots are
    /// free or no donor is left. Freed slots go back to the pool and are
    /// returned; the set may be smaller than `needed`.
    pub fn readjust_donate(&mut self, needed: u32) -> Vec<usize> {
        let mut freed = Vec::new();
        let mut changed = Vec::new();
        while (freed.len() as u32) < needed {
            let donor = self
                .active
                .values()
                .filter(|a| a.granted() > a.bounds.min())
                // max_by_key keeps the last maximum; walk ids in reverse so
                // the lowest id wins ties.
                .rev()
                .max_by_key(|a| a.granted())
                .map(Allocation::su_id);
            let Some(su) = donor else { break };
            let alloc = self.active.get_mut(&su).expect("donor is active");
            let slot = alloc.slots.pop().expect("donor holds slots");
            self.pool.release_slot(slot);
            freed.push(slot);
            if !changed.contains(&su) {
                changed.push(su);
            }
        }
        changed.sort_unstable();
        for su in changed {
            let granted = self.active[&su].granted();
            self.journal.push(Outcome::Resized { su, granted });
        }
        freed
    }

    /// A primary user takes the 0-based `channel`.
    ///
    /// Every SU that held slots there tries to move, oldest arrival first.
    /// IBS-family SUs must replace every lost slot; RBS-family SUs may
    /// shrink down to their minimum and ask for donations. An SU that cannot
    /// continue re-enters the buffer under the queueing policies, else it is
    /// forced to terminate. Returns the outcome of each displaced SU.
    pub fn handle_pu_arrival(
        &mut self,
        channel: usize,
        now: f64,
        patience: &mut Patience<'_>,
    ) -> Result<Vec<Outcome>, PolicyError> {
        let lost = self.pool.seize_channel(channel)?;
        let mut hits: BTreeMap<u64, u32> = BTreeMap::new();
        for (su, slot) in lost {
            let alloc = self
                .active
                .get_mut(&su)
                .ok_or(PolicyError::UnknownAllocation(su))?;
            alloc.slots.retain(|&s| s != slot);
            *hits.entry(su).or_default() += 1;
        }
        let mut order: Vec<(f64, u64, u32)> = hits
            .into_iter()
            .map(|(su, k)| (self.active[&su].request.arrival_time, su, k))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut displaced = Vec::with_capacity(order.len());
        for (_, su, lost) in order {
            let outcome = self.relocate(su, lost, now, patience)?;
            displaced.push(outcome);
        }
        self.fill_freed_slots(now)?;
        Ok(displaced)
    }

    fn relocate(
        &mut self,
        su: u64,
        lost: u32,
        now: f64,
        patience: &mut Patience<'_>,
    ) -> Result<Outcome, PolicyError> {
        let free = self.pool.free_slots() as u32;
        let (kept, bounds) = {
            let a = &self.active[&su];
            (a.granted(), a.bounds)
        };
        let target = if !self.kind.is_elastic() {
            (free >= lost).then_some(lost)
        } else {
            let extra = lost.min(free);
            if kept + extra >= bounds.min() {
                Some(extra)
            } else {
                let needed = bounds.min() - kept - extra;
                if self.donatable() >= needed {
                    // Take the free slots first so donors only cover the rest.
                    self.extend(su, extra)?;
                    self.readjust_donate(needed);
                    Some(needed)
                } else {
                    None
                }
            }
        };
        match target {
            Some(extra) => {
                self.extend(su, extra)?;
                let granted = self.active[&su].granted();
                let out = Outcome::Relocated { su, granted };
                self.journal.push(out.clone());
                Ok(out)
            }
            None => {
                let alloc = self.active.remove(&su).expect("displaced SU is active");
                for &slot in &alloc.slots {
                    self.pool.release_slot(slot);
                }
                if self.kind.has_queue() {
                    let req = alloc.request;
                    if self
                        .push_queue(req, now, EntryOrigin::PreemptedFeedback, patience)
                        .is_ok()
                    {
                        return Ok(self.journal.last().cloned().expect("enqueue journaled"));
                    }
                }
                let out = Outcome::ForcedTerminated {
                    su,
                    cause: TerminationCause::Preempted,
                };
                self.journal.push(out.clone());
                Ok(out)
            }
        }
    }

    fn extend(&mut self, su: u64, n: u32) -> Result<(), PolicyError> {
        if n == 0 {
            return Ok(());
        }
        let slots = self.pool.take_free(n as usize, su)?;
        self.active
            .get_mut(&su)
            .ok_or(PolicyError::UnknownAllocation(su))?
            .slots
            .extend(slots);
        Ok(())
    }

    /// A primary user leaves the 0-based `channel`.
    pub fn handle_pu_departure(
        &mut self,
        channel: usize,
        now: f64,
    ) -> Result<Vec<AdmissionDecision>, PolicyError> {
        self.pool.release_channel(channel)?;
        self.fill_freed_slots(now)
    }

    /// An SU finishes service: its slots are released, then the buffer is
    /// drained and (RBS family) the remaining grants expand.
    pub fn handle_su_departure(
        &mut self,
        su: u64,
        now: f64,
    ) -> Result<Vec<AdmissionDecision>, PolicyError> {
        let alloc = self
            .active
            .remove(&su)
            .ok_or(PolicyError::UnknownAllocation(su))?;
        for &slot in &alloc.slots {
            self.pool.release_slot(slot);
        }
        self.journal.push(Outcome::Completed { su });
        self.fill_freed_slots(now)
    }

    /// Serves buffered SUs in global FIFO order while any fits, then grows
    /// RBS-family grants toward their maximum. Buffered SUs are admitted at
    /// their floor; expansion hands out whatever is left.
    pub fn fill_freed_slots(&mut self, now: f64) -> Result<Vec<AdmissionDecision>, PolicyError> {
        let mut decisions = Vec::new();
        while let Some(entry) = self
            .queues
            .dequeue_first_servable(self.pool.free_slots(), self.kind)
        {
            let grant = self.kind.admission_floor(&entry.request.demand);
            let alloc = self.allocate(entry.request, grant, now, true)?;
            decisions.push(AdmissionDecision::Admit(alloc));
        }
        if self.kind.is_elastic() {
            self.expand();
        }
        Ok(decisions)
    }

    /// One slot at a time to the grant furthest below its maximum.
    fn expand(&mut self) {
        let mut changed = Vec::new();
        while self.pool.free_slots() > 0 {
            let pick = self
                .active
                .values()
                .filter(|a| a.granted() < a.bounds.max())
                .rev()
                .max_by_key(|a| a.bounds.max() - a.granted())
                .map(Allocation::su_id);
            let Some(su) = pick else { break };
            self.extend(su, 1).expect("a free slot exists");
            if !changed.contains(&su) {
                changed.push(su);
            }
        }
        changed.sort_unstable();
        for su in changed {
            let granted = self.active[&su].granted();
            self.journal.push(Outcome::Resized { su, granted });
        }
    }

    /// Deadline timer of buffer stay `seq` of SU `su`. If that stay is still
    /// buffered, every entry due by `now` is dropped and counted as forced
    /// termination. A stale timer is a no-op.
    pub fn check_queue_timeout(&mut self, su: u64, seq: u64, now: f64) -> Vec<QueuedEntry> {
        if !self.queues.contains(su, seq) {
            return Vec::new();
        }
        let dropped = self.queues.expire_deadlines(now);
        for e in &dropped {
            self.journal.push(Outcome::ForcedTerminated {
                su: e.request.su_id,
                cause: TerminationCause::Timeout,
            });
        }
        dropped
    }

    /// Records a new SNR class. A buffered SU's demand follows it; an SU in
    /// service keeps its grant until it next goes through admission.
    pub fn update_snr(&mut self, su: u64, snr: SnrClass, demand: SlotDemand) -> bool {
        if let Some(e) = self.queues.find_mut(su) {
            e.request.snr = snr;
            e.request.demand = demand;
            return true;
        }
        if let Some(a) = self.active.get_mut(&su) {
            a.request.snr = snr;
            a.request.demand = demand;
            return true;
        }
        false
    }

    /// Checks the slot bookkeeping and grant bounds.
    pub fn audit(&self) -> Result<(), PolicyError> {
        let bad = |m: String| Err(PolicyError::Inconsistent(m));
        let mut held = 0usize;
        for a in self.active.values() {
            let g = a.granted();
            if self.kind.is_elastic() {
                if g < a.bounds.min() || g > a.bounds.max() {
                    return bad(format!("SU {} holds {g} outside its bounds", a.su_id()));
                }
            } else if g != a.bounds.fixed() {
                return bad(format!("SU {} holds {g}, demand {}", a.su_id(), a.bounds.fixed()));
            }
            for &s in &a.slots {
                if self.pool.owner(s) != SlotOwner::Su(a.su_id()) {
                    return bad(format!("slot {s} not owned by SU {}", a.su_id()));
                }
            }
            held += a.slots.len();
            if self.is_queued(a.su_id()) {
                return bad(format!("SU {} is both queued and in service", a.su_id()));
            }
        }
        if held != self.pool.su_slots() {
            return bad(format!(
                "allocations hold {held} slots, pool says {}",
                self.pool.su_slots()
            ));
        }
        if self.pool.pu_slots() + self.pool.su_slots() + self.pool.free_slots()
            != self.pool.total_slots()
        {
            return bad("slot partition broken".into());
        }
        if self.queues.occupancy() > self.queues.capacity() {
            return bad("buffer over capacity".into());
        }
        Ok(())
    }
}
