//! The two bounded FIFO buffers of the secondary base station.
//!
//! Each SU class has a primary buffer (class `k` → buffer `k mod 2`). When it
//! is full the entry overflows into the other buffer. Service scans both
//! buffers in one global FIFO order.

use std::collections::VecDeque;
use std::fmt;

use crate::policy::{PolicyKind, SuRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueueId {
    First,
    Second,
}

impl QueueId {
    pub fn index(self) -> usize {
        match self {
            QueueId::First => 0,
            QueueId::Second => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            QueueId::First => QueueId::Second,
            QueueId::Second => QueueId::First,
        }
    }

    /// Primary buffer of an SU class.
    pub fn for_class(class: usize) -> Self {
        if class.is_multiple_of(2) {
            QueueId::First
        } else {
            QueueId::Second
        }
    }
}

impl fmt::Display for QueueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q{}", self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryOrigin {
    FreshArrival,
    /// Re-entered after losing its channels to a primary user.
    PreemptedFeedback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedEntry {
    pub request: SuRequest,
    pub enqueue_time: f64,
    /// `enqueue_time + δ_max`; infinite when timeouts are disabled.
    pub deadline: f64,
    pub origin: EntryOrigin,
    /// Global enqueue sequence number, the FIFO key.
    pub seq: u64,
}

/// A bounded FIFO buffer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FifoQueue {
    capacity: usize,
    entries: VecDeque<QueuedEntry>,
}

impl FifoQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedEntry> {
        self.entries.iter()
    }
}

/// Returned when both buffers are full; hands the entry back to the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueFull(pub QueuedEntry);

#[derive(Debug, Clone, PartialEq)]
pub struct DualQueueController {
    queues: [FifoQueue; 2],
    strict_hol: bool,
    next_seq: u64,
}

impl DualQueueController {
    pub fn new(q1_max: usize, q2_max: usize, strict_hol: bool) -> Self {
        Self {
            queues: [FifoQueue::new(q1_max), FifoQueue::new(q2_max)],
            strict_hol,
            next_seq: 0,
        }
    }

    pub fn queue(&self, id: QueueId) -> &FifoQueue {
        &self.queues[id.index()]
    }

    pub fn occupancy(&self) -> usize {
        self.queues.iter().map(FifoQueue::len).sum()
    }

    pub fn capacity(&self) -> usize {
        self.queues.iter().map(FifoQueue::capacity).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy() == 0
    }

    /// Hands out the next FIFO sequence number.
    pub fn next_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    /// Places `entry` in its class's buffer, else the other one.
    pub fn enqueue(&mut self, entry: QueuedEntry) -> Result<QueueId, QueueFull> {
        let primary = QueueId::for_class(entry.request.class);
        for id in [primary, primary.other()] {
            let q = &mut self.queues[id.index()];
            if !q.is_full() {
                debug_assert!(q.entries.back().is_none_or(|last| last.seq < entry.seq));
                q.entries.push_back(entry);
                return Ok(id);
            }
        }
        Err(QueueFull(entry))
    }

    /// Entries of both buffers in global FIFO order, as `(queue, position)`.
    fn fifo_order(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<(u64, usize, usize)> = self
            .queues
            .iter()
            .enumerate()
            .flat_map(|(q, fifo)| fifo.entries.iter().enumerate().map(move |(i, e)| (e.seq, q, i)))
            .collect();
        order.sort_unstable();
        order.into_iter().map(|(_, q, i)| (q, i)).collect()
    }

    /// Removes and returns the oldest entry whose admission floor fits in
    /// `free_slots` (θ for the IBS family, θ_min for the RBS family). With
    /// `strict_hol` only the oldest entry overall is considered.
    pub fn dequeue_first_servable(
        &mut self,
        free_slots: usize,
        policy: PolicyKind,
    ) -> Option<QueuedEntry> {
        if free_slots == 0 {
            return None;
        }
        let order = self.fifo_order();
        let scan = if self.strict_hol { 1 } else { order.len() };
        for (q, i) in order.into_iter().take(scan) {
            let floor = policy.admission_floor(&self.queues[q].entries[i].request.demand);
            if floor as usize <= free_slots {
                return self.queues[q].entries.remove(i);
            }
        }
        None
    }

    /// Removes every entry whose deadline is at or before `now`, oldest first.
    pub fn expire_deadlines(&mut self, now: f64) -> Vec<QueuedEntry> {
        let mut dropped = Vec::new();
        for q in &mut self.queues {
            let (gone, kept): (VecDeque<_>, VecDeque<_>) =
                q.entries.drain(..).partition(|e| e.deadline <= now);
            q.entries = kept;
            dropped.extend(gone);
        }
        dropped.sort_by_key(|e| e.seq);
        dropped
    }

    /// Whether the stay `seq` of SU `su` is still buffered.
    pub fn contains(&self, su: u64, seq: u64) -> bool {
        self.queues
            .iter()
            .any(|q| q.entries.iter().any(|e| e.request.su_id == su && e.seq == seq))
    }

    pub fn find_mut(&mut self, su: u64) -> Option<&mut QueuedEntry> {
        self.queues
            .iter_mut()
            .flat_map(|q| q.entries.iter_mut())
            .find(|e| e.request.su_id == su)
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedEntry> {
        self.queues.iter().flat_map(FifoQueue::iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::SlotDemand;
    use crate::spectrum::SnrClass;

    fn entry(ctrl: &mut DualQueueController, su: u64, class: usize, need: u32, t: f64) -> QueuedEntry {
        QueuedEntry {
            request: SuRequest {
                su_id: su,
                class,
                snr: SnrClass::Good,
                demand: SlotDemand::exact(need),
                arrival_time: t,
            },
            enqueue_time: t,
            deadline: t + 10.0,
            origin: EntryOrigin::FreshArrival,
            seq: ctrl.next_seq(),
        }
    }

    #[test]
    fn primary_routing_and_overflow() {
        let mut c = DualQueueController::new(2, 2, false);
        let e = entry(&mut c, 1, 0, 1, 0.0);
        assert_eq!(c.enqueue(e), Ok(QueueId::First));
        let e = entry(&mut c, 2, 0, 1, 0.1);
        assert_eq!(c.enqueue(e), Ok(QueueId::First));
        let e = entry(&mut c, 3, 0, 1, 0.2);
        assert_eq!(c.enqueue(e), Ok(QueueId::Second));
        let e = entry(&mut c, 4, 1, 1, 0.3);
        assert_eq!(c.enqueue(e), Ok(QueueId::Second));
        let e = entry(&mut c, 5, 1, 1, 0.4);
        assert!(matches!(c.enqueue(e), Err(QueueFull(ref back)) if back.request.su_id == 5));
        assert_eq!(c.occupancy(), 4);
    }

    #[test]
    fn class_j_goes_to_second_queue() {
        let mut c = DualQueueController::new(2, 2, false);
        let e = entry(&mut c, 1, 1, 1, 0.0);
        assert_eq!(c.enqueue(e), Ok(QueueId::Second));
    }

    #[test]
    fn zero_capacity_is_always_full() {
        let mut c = DualQueueController::new(0, 0, false);
        let e = entry(&mut c, 1, 0, 1, 0.0);
        assert!(c.enqueue(e).is_err());
    }

    #[test]
    fn scans_past_unservable_head() {
        let mut c = DualQueueController::new(4, 4, false);
        let a = entry(&mut c, 1, 0, 3, 0.0);
        let b = entry(&mut c, 2, 0, 2, 1.0);
        c.enqueue(a).unwrap();
        c.enqueue(b).unwrap();
        let got = c.dequeue_first_servable(2, PolicyKind::IbsQ).unwrap();
        assert_eq!(got.request.su_id, 2);
        assert_eq!(c.occupancy(), 1);
    }

    #[test]
    fn strict_hol_stalls_on_head() {
        let mut c = DualQueueController::new(4, 4, true);
        let a = entry(&mut c, 1, 0, 3, 0.0);
        let b = entry(&mut c, 2, 0, 2, 1.0);
        c.enqueue(a).unwrap();
        c.enqueue(b).unwrap();
        assert!(c.dequeue_first_servable(2, PolicyKind::IbsQ).is_none());
        assert_eq!(c.dequeue_first_servable(3, PolicyKind::IbsQ).unwrap().request.su_id, 1);
    }

    #[test]
    fn nothing_servable() {
        let mut c = DualQueueController::new(4, 4, false);
        let a = entry(&mut c, 1, 0, 3, 0.0);
        c.enqueue(a).unwrap();
        assert!(c.dequeue_first_servable(2, PolicyKind::IbsQ).is_none());
        assert!(c.dequeue_first_servable(0, PolicyKind::IbsQ).is_none());
        assert_eq!(c.occupancy(), 1);
    }

    #[test]
    fn rbs_family_tests_minimum() {
        let mut c = DualQueueController::new(4, 4, false);
        let mut a = entry(&mut c, 1, 0, 4, 0.0);
        a.request.demand = SlotDemand::new(4, 2, 4).unwrap();
        c.enqueue(a).unwrap();
        assert!(c.dequeue_first_servable(2, PolicyKind::IbsQ).is_none());
        assert!(c.dequeue_first_servable(2, PolicyKind::RbsQ).is_some());
    }

    #[test]
    fn global_fifo_across_queues() {
        let mut c = DualQueueController::new(4, 4, false);
        let a = entry(&mut c, 1, 1, 1, 0.0); // q2, older
        let b = entry(&mut c, 2, 0, 1, 1.0); // q1, newer
        c.enqueue(a).unwrap();
        c.enqueue(b).unwrap();
        assert_eq!(c.dequeue_first_servable(5, PolicyKind::IbsQ).unwrap().request.su_id, 1);
        assert_eq!(c.dequeue_first_servable(5, PolicyKind::IbsQ).unwrap().request.su_id, 2);
    }

    #[test]
    fn expiry_is_selective() {
        let mut c = DualQueueController::new(4, 4, false);
        assert!(c.expire_deadlines(100.0).is_empty());
        let mut es: Vec<_> = (0..3).map(|k| entry(&mut c, k, 0, 1, k as f64)).collect();
        es[1].deadline = 2.0;
        for e in es {
            c.enqueue(e).unwrap();
        }
        assert!(c.expire_deadlines(1.5).is_empty());
        let gone = c.expire_deadlines(2.0);
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].request.su_id, 1);
        let left: Vec<u64> = c.iter().map(|e| e.request.su_id).collect();
        assert_eq!(left, vec![0, 2]);
        let gone = c.expire_deadlines(1e9);
        assert_eq!(gone.len(), 2);
        assert_eq!(c.occupancy(), 0);
    }

    #[test]
    fn infinite_deadline_never_expires() {
        let mut c = DualQueueController::new(1, 0, false);
        let mut e = entry(&mut c, 1, 0, 1, 0.0);
        e.deadline = f64::INFINITY;
        c.enqueue(e).unwrap();
        assert!(c.expire_deadlines(f64::MAX).is_empty());
    }
}
