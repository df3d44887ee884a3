//! Event kernel: future-event list, simulation clock and seeded random
//! substreams.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("event at t={time} scheduled before the clock ({clock})")]
    PastTimestamp { time: f64, clock: f64 },
    #[error("event time is not a number")]
    NanTimestamp,
    #[error("rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("slot demand must be at least 1")]
    ZeroDemand,
    #[error("traffic rate `{field}` = {value} is invalid")]
    BadTraffic { field: String, value: f64 },
}

/// What happens at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    PuArrival,
    /// A primary user leaves the 0-based channel.
    PuDeparture { channel: usize },
    SuArrival { class: usize },
    /// `epoch` invalidates completions scheduled before the SU's grant last
    /// changed.
    SuServiceComplete { su: u64, epoch: u64 },
    /// `seq` identifies one stay in the queue; a requeued SU gets a new one.
    QueueDeadline { su: u64, seq: u64 },
    SnrTransition { su: u64 },
    MeasureTick,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for EventRecord {}

impl Ord for EventRecord {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for EventRecord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Future-event list ordered by `(time, insertion sequence)`.
#[derive(Debug, Clone)]
pub struct Scheduler {
    heap: BinaryHeap<Reverse<EventRecord>>,
    clock: f64,
    horizon: f64,
    next_seq: u64,
    processed: u64,
}

impl Scheduler {
    pub fn new(horizon: f64) -> Self {
        Self {
            heap: BinaryHeap::new(),
            clock: 0.0,
            horizon,
            next_seq: 0,
            processed: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.clock
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn schedule(&mut self, time: f64, kind: EventKind) -> Result<EventRecord, EngineError> {
        if time.is_nan() {
            return Err(EngineError::NanTimestamp);
        }
        if time < self.clock {
            return Err(EngineError::PastTimestamp {
                time,
                clock: self.clock,
            });
        }
        let ev = EventRecord {
            time,
            seq: self.next_seq,
            kind,
        };
        self.next_seq += 1;
        self.heap.push(Reverse(ev));
        Ok(ev)
    }

    pub fn schedule_in(&mut self, delay: f64, kind: EventKind) -> Result<EventRecord, EngineError> {
        self.schedule(self.clock + delay, kind)
    }

    /// Removes the earliest event and advances the clock to it. Returns
    /// `None` when the list is empty or the next event lies past the horizon;
    /// the clock is left untouched in that case.
    pub fn pop_next(&mut self) -> Option<EventRecord> {
        let Reverse(next) = *self.heap.peek()?;
        if next.time > self.horizon {
            return None;
        }
        self.heap.pop();
        self.clock = next.time;
        self.processed += 1;
        Some(next)
    }
}

/// Named random substreams. Each stochastic process draws from its own
/// stream, so changing one rate leaves every other process's draws intact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamId {
    PuArrivals,
    PuHolding,
    PuChannel,
    SuArrivals(usize),
    SuWork(usize),
    SuRestart(usize),
    SnrInit,
    SnrStep,
    Patience,
}

impl StreamId {
    fn code(self) -> u64 {
        let (tag, k) = match self {
            StreamId::PuArrivals => (1, 0),
            StreamId::PuHolding => (2, 0),
            StreamId::PuChannel => (3, 0),
            StreamId::SuArrivals(k) => (4, k),
            StreamId::SuWork(k) => (5, k),
            StreamId::SuRestart(k) => (6, k),
            StreamId::SnrInit => (7, 0),
            StreamId::SnrStep => (8, 0),
            StreamId::Patience => (9, 0),
        };
        (tag << 32) | k as u64
    }
}

#[derive(Debug, Clone)]
pub struct RngStreams {
    seed: u64,
    streams: BTreeMap<StreamId, ChaCha8Rng>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&mut self, id: StreamId) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams.entry(id).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id.code());
            rng
        })
    }

    /// Number of 32-bit words consumed so far on `id`.
    pub fn counter(&self, id: StreamId) -> u128 {
        self.streams.get(&id).map_or(0, |r| r.get_word_pos())
    }
}

/// Inverse transform of an exponential law: `-ln(u) / rate` for `u ∈ (0, 1]`.
pub fn exponential_from_uniform(u: f64, rate: f64) -> f64 {
    -u.ln() / rate
}

/// Exponential draw with the given rate (events per second).
pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, EngineError> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(EngineError::BadRate(rate));
    }
    // `random` is uniform on [0, 1); flip it onto (0, 1].
    let u = 1.0 - rng.random::<f64>();
    Ok(exponential_from_uniform(u, rate))
}

/// Service time of an SU holding `slots` slots: exponential with total rate
/// `slots · per_slot_rate`.
pub fn su_service_duration<R: Rng + ?Sized>(
    slots: u32,
    per_slot_rate: f64,
    rng: &mut R,
) -> Result<f64, EngineError> {
    if slots == 0 {
        return Err(EngineError::ZeroDemand);
    }
    sample_exponential(slots as f64 * per_slot_rate, rng)
}

/// Poisson arrival and exponential service rates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficRates {
    pub pu_arrival: f64,
    pub pu_service: f64,
    pub su_arrival: Vec<f64>,
    /// Per-slot service rate of each SU class.
    pub su_service: Vec<f64>,
}

impl TrafficRates {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |field: String, value: f64| EngineError::BadTraffic { field, value };
        if !(self.pu_arrival >= 0.0) || !self.pu_arrival.is_finite() {
            return Err(bad("pu_arrival".into(), self.pu_arrival));
        }
        if !(self.pu_service > 0.0) || !self.pu_service.is_finite() {
            return Err(bad("pu_service".into(), self.pu_service));
        }
        for (k, &r) in self.su_arrival.iter().enumerate() {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(bad(format!("su_arrival[{k}]"), r));
            }
        }
        for (k, &r) in self.su_service.iter().enumerate() {
            if !(r > 0.0) || !r.is_finite() {
                return Err(bad(format!("su_service[{k}]"), r));
            }
        }
        Ok(())
    }
}

/// 64-bit FNV-1a, used to fingerprint event traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHasher(u64);

impl Default for TraceHasher {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl TraceHasher {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_event(&mut self, ev: &EventRecord) {
        self.write_u64(ev.time.to_bits());
        let (tag, a, b) = match ev.kind {
            EventKind::PuArrival => (0, 0, 0),
            EventKind::PuDeparture { channel } => (1, channel as u64, 0),
            EventKind::SuArrival { class } => (2, class as u64, 0),
            EventKind::SuServiceComplete { su, epoch } => (3, su, epoch),
            EventKind::QueueDeadline { su, seq } => (4, su, seq),
            EventKind::SnrTransition { su } => (5, su, 0),
            EventKind::MeasureTick => (6, 0, 0),
        };
        self.write_u64(tag);
        self.write_u64(a);
        self.write_u64(b);
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}
