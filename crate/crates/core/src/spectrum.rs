//! Spectrum resources: the channel/slot grid, primary-user ON/OFF channels,
//! secondary-user SNR classes and the AMC frame arithmetic.
//!
//! The grid has `M` channels of `S` slots each. A primary user always takes
//! a whole channel; secondary users aggregate individual slots, possibly
//! spread over several channels.

use std::fmt;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectrumError {
    #[error("AMC table is empty")]
    EmptyModeTable,
    #[error("AMC mode {index}: {reason}")]
    InvalidMode { index: usize, reason: String },
    #[error("frame field `{field}` must be strictly positive, got {value}")]
    NonPositiveFrameField { field: &'static str, value: f64 },
    #[error("channel {channel}: {field} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange {
        channel: usize,
        field: &'static str,
        value: f64,
    },
    #[error("channel {channel}: A + C = 0, the ON/OFF chain never moves")]
    DegenerateChain { channel: usize },
    #[error("expected {expected} channel processes, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("PU slot capacity {value} outside [0, {max}]")]
    CapacityOutOfRange { value: f64, max: f64 },
    #[error("SNR value is NaN")]
    NanSnr,
    #[error("SNR transition row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("SNR transition row {row} has an entry outside [0, 1]")]
    BadTransitionEntry { row: usize },
    #[error("spectrum grid needs at least one channel and one slot per channel")]
    EmptyGrid,
    #[error("channel index {0} out of range")]
    BadChannel(usize),
    #[error("requested {requested} free slots, only {available} available")]
    InsufficientSlots { requested: usize, available: usize },
}

/// One adaptive modulation and coding mode.
///
/// The mode is selected when the SNR lies in `[snr_low, snr_high)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmcMode {
    /// 1-based mode number.
    pub index: usize,
    pub bits_per_symbol: f64,
    pub snr_low: f64,
    pub snr_high: f64,
}

/// Result of mapping an SNR value onto the AMC table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeSelection {
    /// Below the lowest threshold: no transmission.
    Outage,
    Mode(AmcMode),
}

/// Ordered, validated set of AMC modes.
#[derive(Debug, Clone, PartialEq)]
pub struct AmcTable {
    modes: Vec<AmcMode>,
}

impl AmcTable {
    pub fn new(modes: Vec<AmcMode>) -> Result<Self, SpectrumError> {
        if modes.is_empty() {
            return Err(SpectrumError::EmptyModeTable);
        }
        for (k, m) in modes.iter().enumerate() {
            let bad = |reason: &str| SpectrumError::InvalidMode {
                index: m.index,
                reason: reason.to_string(),
            };
            if m.index != k + 1 {
                return Err(bad("mode indices must run 1..N in order"));
            }
            if !(m.bits_per_symbol > 0.0) {
                return Err(bad("bits per symbol must be positive"));
            }
            if m.snr_low.is_nan() || m.snr_high.is_nan() || !(m.snr_low < m.snr_high) {
                return Err(bad("SNR interval must satisfy low < high"));
            }
            if k > 0 {
                let prev = &modes[k - 1];
                if m.snr_low < prev.snr_high {
                    return Err(bad("SNR interval overlaps the previous mode"));
                }
                if m.bits_per_symbol <= prev.bits_per_symbol {
                    return Err(bad("bits per symbol must increase with the mode"));
                }
            }
        }
        Ok(Self { modes })
    }

    /// Builds a table whose intervals tile the SNR axis: mode `n` covers
    /// `[thresholds[n], thresholds[n + 1])` and the top mode is unbounded.
    pub fn from_thresholds(bits: &[f64], thresholds_db: &[f64]) -> Result<Self, SpectrumError> {
        if bits.len() != thresholds_db.len() {
            return Err(SpectrumError::LengthMismatch {
                expected: bits.len(),
                got: thresholds_db.len(),
            });
        }
        let modes = bits
            .iter()
            .zip(thresholds_db)
            .enumerate()
            .map(|(k, (&b, &low))| AmcMode {
                index: k + 1,
                bits_per_symbol: b,
                snr_low: low,
                snr_high: thresholds_db.get(k + 1).copied().unwrap_or(f64::INFINITY),
            })
            .collect();
        Self::new(modes)
    }

    pub fn modes(&self) -> &[AmcMode] {
        &self.modes
    }

    pub fn highest(&self) -> &AmcMode {
        self.modes.last().expect("table is never empty")
    }
}

/// Maps an SNR value (dB) onto the AMC table.
///
/// Picks the highest mode whose lower threshold is at or below `snr_db`, so a
/// value sitting exactly on a boundary selects the upper mode. Values above
/// the top interval stay in the top mode and values inside a gap between two
/// modes keep the lower one, which makes the map total and monotone.
pub fn snr_to_mode(snr_db: f64, table: &AmcTable) -> Result<ModeSelection, SpectrumError> {
    if snr_db.is_nan() {
        return Err(SpectrumError::NanSnr);
    }
    Ok(table
        .modes
        .iter()
        .rev()
        .find(|m| m.snr_low <= snr_db)
        .map_or(ModeSelection::Outage, |m| ModeSelection::Mode(*m)))
}

/// Message and symbol parameters of one SU frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    pub message_bits: f64,
    pub channel_constant: f64,
    pub symbol_rate: f64,
}

impl FrameConfig {
    pub fn new(
        message_bits: f64,
        channel_constant: f64,
        symbol_rate: f64,
    ) -> Result<Self, SpectrumError> {
        for (field, value) in [
            ("message_bits", message_bits),
            ("channel_constant", channel_constant),
            ("symbol_rate", symbol_rate),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SpectrumError::NonPositiveFrameField { field, value });
            }
        }
        Ok(Self {
            message_bits,
            channel_constant,
            symbol_rate,
        })
    }
}

/// Number of slots in a frame: `ceil((π / (r_n ε_s r_s)) · r_n)`, at least 1.
///
/// `r_n` cancels algebraically. Products that land within a relative 1e-9 of
/// an integer are snapped to it first so that the cancellation also holds in
/// floating point.
pub fn compute_frame_slots(cfg: &FrameConfig, mode: &AmcMode) -> usize {
    let r_n = mode.bits_per_symbol;
    let raw = cfg.message_bits / (r_n * cfg.channel_constant * cfg.symbol_rate) * r_n;
    let nearest = raw.round();
    let value = if (raw - nearest).abs() <= 1e-9 * nearest.abs().max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    (value as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PuState {
    On,
    Off,
}

/// Discrete-epoch ON/OFF activity chain of one licensed channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PuChannelProcess {
    /// 1-based channel index.
    pub channel: usize,
    off_to_on: f64,
    on_to_off: f64,
    pub state: PuState,
}

impl PuChannelProcess {
    pub fn new(
        channel: usize,
        off_to_on: f64,
        on_to_off: f64,
        state: PuState,
    ) -> Result<Self, SpectrumError> {
        for (field, value) in [("off_to_on", off_to_on), ("on_to_off", on_to_off)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SpectrumError::ProbabilityOutOfRange {
                    channel,
                    field,
                    value,
                });
            }
        }
        if off_to_on + on_to_off <= 0.0 {
            return Err(SpectrumError::DegenerateChain { channel });
        }
        Ok(Self {
            channel,
            off_to_on,
            on_to_off,
            state,
        })
    }

    /// `A_i`, the OFF → ON probability per epoch.
    pub fn off_to_on(&self) -> f64 {
        self.off_to_on
    }

    /// `C_i`, the ON → OFF probability per epoch.
    pub fn on_to_off(&self) -> f64 {
        self.on_to_off
    }

    /// Long-run fraction of epochs the channel is busy, `A / (A + C)`.
    pub fn channel_utilization(&self) -> f64 {
        self.off_to_on / (self.off_to_on + self.on_to_off)
    }

    /// Advances the chain by one epoch.
    pub fn sample_transition<R: Rng + ?Sized>(&mut self, rng: &mut R) -> PuState {
        let u: f64 = rng.random();
        self.state = match self.state {
            PuState::Off if u < self.off_to_on => PuState::On,
            PuState::On if u < self.on_to_off => PuState::Off,
            s => s,
        };
        self.state
    }
}

/// Owner tag of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotOwner {
    Free,
    Pu,
    Su(u64),
}

/// The `M × S` slot grid.
///
/// Slots are addressed by a flat index `channel * S + slot`. Free and PU
/// counts are kept incrementally.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPool {
    channels: usize,
    slots_per_channel: usize,
    owners: Vec<SlotOwner>,
    free: usize,
    pu_channels: usize,
}

impl SpectrumPool {
    pub fn new(channels: usize, slots_per_channel: usize) -> Result<Self, SpectrumError> {
        if channels == 0 || slots_per_channel == 0 {
            return Err(SpectrumError::EmptyGrid);
        }
        let total = channels * slots_per_channel;
        Ok(Self {
            channels,
            slots_per_channel,
            owners: vec![SlotOwner::Free; total],
            free: total,
            pu_channels: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn slots_per_channel(&self) -> usize {
        self.slots_per_channel
    }

    pub fn total_slots(&self) -> usize {
        self.owners.len()
    }

    pub fn free_slots(&self) -> usize {
        self.free
    }

    pub fn pu_channel_count(&self) -> usize {
        self.pu_channels
    }

    pub fn pu_slots(&self) -> usize {
        self.pu_channels * self.slots_per_channel
    }

    pub fn su_slots(&self) -> usize {
        self.total_slots() - self.free - self.pu_slots()
    }

    /// `F_i`: whether `channel` (1-based) names a channel of this pool.
    pub fn is_valid_channel(&self, channel: usize) -> bool {
        (1..=self.channels).contains(&channel)
    }

    pub fn owner(&self, slot: usize) -> SlotOwner {
        self.owners[slot]
    }

    pub fn channel_of(&self, slot: usize) -> usize {
        slot / self.slots_per_channel
    }

    /// Whether the 0-based `channel` is held by a primary user.
    pub fn is_pu_channel(&self, channel: usize) -> bool {
        self.owners[channel * self.slots_per_channel] == SlotOwner::Pu
    }

    /// 0-based indices of channels not held by a primary user.
    pub fn non_pu_channels(&self) -> Vec<usize> {
        (0..self.channels).filter(|&c| !self.is_pu_channel(c)).collect()
    }

    /// Hands the whole channel to a primary user. Returns the SU-held slots
    /// that were taken, as `(owner, slot)` pairs.
    pub fn seize_channel(&mut self, channel: usize) -> Result<Vec<(u64, usize)>, SpectrumError> {
        if channel >= self.channels || self.is_pu_channel(channel) {
            return Err(SpectrumError::BadChannel(channel));
        }
        let mut lost = Vec::new();
        let base = channel * self.slots_per_channel;
        for slot in base..base + self.slots_per_channel {
            match self.owners[slot] {
                SlotOwner::Free => self.free -= 1,
                SlotOwner::Su(id) => lost.push((id, slot)),
                SlotOwner::Pu => unreachable!("channel checked above"),
            }
            self.owners[slot] = SlotOwner::Pu;
        }
        self.pu_channels += 1;
        Ok(lost)
    }

    /// Primary user leaves: every slot of the channel becomes free.
    pub fn release_channel(&mut self, channel: usize) -> Result<(), SpectrumError> {
        if channel >= self.channels || !self.is_pu_channel(channel) {
            return Err(SpectrumError::BadChannel(channel));
        }
        let base = channel * self.slots_per_channel;
        for owner in &mut self.owners[base..base + self.slots_per_channel] {
            *owner = SlotOwner::Free;
        }
        self.free += self.slots_per_channel;
        self.pu_channels -= 1;
        Ok(())
    }

    /// Grants the `n` lowest-indexed free slots to SU `owner`.
    pub fn take_free(&mut self, n: usize, owner: u64) -> Result<Vec<usize>, SpectrumError> {
        if n > self.free {
            return Err(SpectrumError::InsufficientSlots {
                requested: n,
                available: self.free,
            });
        }
        let mut taken = Vec::with_capacity(n);
        for (slot, o) in self.owners.iter_mut().enumerate() {
            if taken.len() == n {
                break;
            }
            if *o == SlotOwner::Free {
                *o = SlotOwner::Su(owner);
                taken.push(slot);
            }
        }
        self.free -= n;
        Ok(taken)
    }

    /// Returns an SU-held slot to the free pool.
    pub fn release_slot(&mut self, slot: usize) {
        debug_assert!(matches!(self.owners[slot], SlotOwner::Su(_)));
        self.owners[slot] = SlotOwner::Free;
        self.free += 1;
    }

    /// Moves an SU-held slot to another SU without passing through the free pool.
    pub fn reassign_slot(&mut self, slot: usize, owner: u64) {
        debug_assert!(matches!(self.owners[slot], SlotOwner::Su(_)));
        self.owners[slot] = SlotOwner::Su(owner);
    }
}

/// Expected PU-held slots `φ_P = S · Σ ϑ_i`.
pub fn pu_slot_capacity(
    pool: &SpectrumPool,
    procs: &[PuChannelProcess],
) -> Result<f64, SpectrumError> {
    if procs.len() != pool.channels() {
        return Err(SpectrumError::LengthMismatch {
            expected: pool.channels(),
            got: procs.len(),
        });
    }
    let busy: f64 = procs.iter().map(PuChannelProcess::channel_utilization).sum();
    Ok(pool.slots_per_channel() as f64 * busy)
}

/// Expected slots left to secondary users, `θ_su = M·S − φ_P`.
pub fn su_slot_capacity(pool: &SpectrumPool, pu_capacity: f64) -> Result<f64, SpectrumError> {
    let max = pool.total_slots() as f64;
    if !(0.0..=max).contains(&pu_capacity) {
        return Err(SpectrumError::CapacityOutOfRange {
            value: pu_capacity,
            max,
        });
    }
    Ok(max - pu_capacity)
}

/// Link-quality class of a secondary user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SnrClass {
    Good,
    Moderate,
    Bad,
}

impl SnrClass {
    pub const ALL: [SnrClass; 3] = [SnrClass::Good, SnrClass::Moderate, SnrClass::Bad];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for SnrClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SnrClass::Good => "good",
            SnrClass::Moderate => "moderate",
            SnrClass::Bad => "bad",
        })
    }
}

/// Row-stochastic transition matrix over the three SNR classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrMatrix([[f64; 3]; 3]);

impl SnrMatrix {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self, SpectrumError> {
        for (row, r) in rows.iter().enumerate() {
            if r.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(SpectrumError::BadTransitionEntry { row });
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(SpectrumError::NotStochastic { row, sum });
            }
        }
        Ok(Self(rows))
    }

    /// Slow-fading default: neighbouring classes only, no GOOD ↔ BAD jumps.
    pub fn birth_death() -> Self {
        Self([[0.8, 0.2, 0.0], [0.1, 0.8, 0.1], [0.0, 0.2, 0.8]])
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.0
    }

    /// Draws the successor of `from`.
    pub fn step<R: Rng + ?Sized>(&self, from: SnrClass, rng: &mut R) -> SnrClass {
        draw_class(&self.0[from.index()], rng)
    }

    /// Stationary distribution, from the balance equations with the last one
    /// replaced by normalisation. Falls back to uniform for chains without a
    /// unique stationary law.
    pub fn stationary(&self) -> [f64; 3] {
        let p = &self.0;
        // (P^T - I) x = 0 with the last row replaced by 1 1 1.
        let mut a = [[0.0f64; 4]; 3];
        for i in 0..2 {
            for j in 0..3 {
                a[i][j] = p[j][i] - if i == j { 1.0 } else { 0.0 };
            }
        }
        a[2] = [1.0, 1.0, 1.0, 1.0];
        for col in 0..3 {
            let pivot = (col..3)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            if a[pivot][col].abs() < 1e-14 {
                return [1.0 / 3.0; 3];
            }
            a.swap(col, pivot);
            for row in 0..3 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    let pivot_row = a[col];
                    for (x, p) in a[row].iter_mut().zip(pivot_row).skip(col) {
                        *x -= f * p;
                    }
                }
            }
        }
        [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
    }
}

impl Default for SnrMatrix {
    fn default() -> Self {
        Self::birth_death()
    }
}

pub(crate) fn draw_class<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> SnrClass {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return SnrClass::ALL[k];
        }
    }
    // Rounding left `acc` a hair under 1: take the last class with mass.
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(2);
    SnrClass::ALL[last]
}

/// SNR class process of one secondary user.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrProcess {
    pub su_id: u64,
    pub class: SnrClass,
    matrix: SnrMatrix,
}

impl SnrProcess {
    pub fn new(su_id: u64, class: SnrClass, matrix: SnrMatrix) -> Self {
        Self {
            su_id,
            class,
            matrix,
        }
    }

    pub fn sample_transition<R: Rng + ?Sized>(&mut self, rng: &mut R) -> SnrClass {
        self.class = self.matrix.step(self.class, rng);
        self.class
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mode(bits: f64) -> AmcMode {
        AmcMode {
            index: 1,
            bits_per_symbol: bits,
            snr_low: 0.0,
            snr_high: 10.0,
        }
    }

    #[test]
    fn frame_slots_examples() {
        let cfg = FrameConfig::new(1000.0, 0.5, 500.0).unwrap();
        assert_eq!(compute_frame_slots(&cfg, &mode(2.0)), 4);
        let cfg = FrameConfig::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(compute_frame_slots(&cfg, &mode(1.0)), 1);
        // 1500 / (4 * 0.8 * 400) * 4 = 1500 / 320 = 4.6875
        let cfg = FrameConfig::new(1500.0, 0.8, 400.0).unwrap();
        assert_eq!(compute_frame_slots(&cfg, &mode(4.0)), 5);
    }

    #[test]
    fn frame_slots_never_zero() {
        let cfg = FrameConfig::new(1.0, 10.0, 1000.0).unwrap();
        assert_eq!(compute_frame_slots(&cfg, &mode(3.0)), 1);
    }

    #[test]
    fn frame_rejects_non_positive() {
        assert!(FrameConfig::new(0.0, 1.0, 1.0).is_err());
        assert!(FrameConfig::new(1.0, -1.0, 1.0).is_err());
        assert!(FrameConfig::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn utilization_examples() {
        let p = |a, c| PuChannelProcess::new(1, a, c, PuState::Off).unwrap();
        assert_eq!(p(0.2, 0.8).channel_utilization(), 0.2);
        assert_eq!(p(0.0, 0.5).channel_utilization(), 0.0);
        assert_eq!(p(0.5, 0.5).channel_utilization(), 0.5);
    }

    #[test]
    fn degenerate_chain_rejected() {
        assert_eq!(
            PuChannelProcess::new(3, 0.0, 0.0, PuState::Off),
            Err(SpectrumError::DegenerateChain { channel: 3 })
        );
        assert!(PuChannelProcess::new(1, 1.2, 0.1, PuState::Off).is_err());
    }

    fn procs(thetas: &[f64]) -> Vec<PuChannelProcess> {
        // A = ϑ, C = 1 - ϑ gives utilisation ϑ (A + C = 1).
        thetas
            .iter()
            .enumerate()
            .map(|(i, &t)| PuChannelProcess::new(i + 1, t, 1.0 - t, PuState::Off).unwrap())
            .collect()
    }

    #[test]
    fn pu_capacity_examples() {
        let pool = SpectrumPool::new(2, 4).unwrap();
        assert_eq!(pu_slot_capacity(&pool, &procs(&[0.5, 0.25])).unwrap(), 3.0);
        assert_eq!(pu_slot_capacity(&pool, &procs(&[0.0, 0.0])).unwrap(), 0.0);
        let pool = SpectrumPool::new(3, 2).unwrap();
        assert_eq!(pu_slot_capacity(&pool, &procs(&[1.0, 1.0, 1.0])).unwrap(), 6.0);
        assert!(matches!(
            pu_slot_capacity(&pool, &procs(&[0.5])),
            Err(SpectrumError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn su_capacity_examples() {
        let pool = SpectrumPool::new(2, 4).unwrap();
        assert_eq!(su_slot_capacity(&pool, 3.0).unwrap(), 5.0);
        assert_eq!(su_slot_capacity(&pool, 8.0).unwrap(), 0.0);
        let pool = SpectrumPool::new(3, 2).unwrap();
        assert_eq!(su_slot_capacity(&pool, 0.0).unwrap(), 6.0);
        assert!(su_slot_capacity(&pool, 6.5).is_err());
        assert!(su_slot_capacity(&pool, -0.1).is_err());
    }

    fn three_modes() -> AmcTable {
        AmcTable::from_thresholds(&[1.0, 2.0, 4.0], &[5.0, 10.0, 15.0]).unwrap()
    }

    #[test]
    fn snr_mapping() {
        let t = three_modes();
        assert_eq!(snr_to_mode(2.0, &t).unwrap(), ModeSelection::Outage);
        match snr_to_mode(10.0, &t).unwrap() {
            ModeSelection::Mode(m) => assert_eq!(m.index, 2),
            other => panic!("{other:?}"),
        }
        match snr_to_mode(12.5, &t).unwrap() {
            ModeSelection::Mode(m) => assert_eq!(m.index, 2),
            other => panic!("{other:?}"),
        }
        assert_eq!(snr_to_mode(f64::NAN, &t), Err(SpectrumError::NanSnr));
    }

    #[test]
    fn amc_table_validation() {
        assert!(AmcTable::new(vec![]).is_err());
        // bits must increase
        assert!(AmcTable::from_thresholds(&[2.0, 2.0], &[0.0, 5.0]).is_err());
        // thresholds must increase
        assert!(AmcTable::from_thresholds(&[1.0, 2.0], &[5.0, 0.0]).is_err());
    }

    #[test]
    fn pu_forced_and_absorbing_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PuChannelProcess::new(1, 1.0, 0.5, PuState::Off).unwrap();
        assert_eq!(p.sample_transition(&mut rng), PuState::On);
        let mut p = PuChannelProcess::new(1, 0.5, 0.0, PuState::On).unwrap();
        for _ in 0..1000 {
            assert_eq!(p.sample_transition(&mut rng), PuState::On);
        }
    }

    #[test]
    fn pu_on_entry_frequency() {
        // Reset to OFF before each draw: the ON frequency estimates A.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mut on = 0usize;
        let mut p = PuChannelProcess::new(1, 0.3, 0.5, PuState::Off).unwrap();
        for _ in 0..n {
            p.state = PuState::Off;
            if p.sample_transition(&mut rng) == PuState::On {
                on += 1;
            }
        }
        let freq = on as f64 / n as f64;
        assert!((freq - 0.3).abs() < 0.002, "{freq}");
    }

    #[test]
    fn pu_long_run_on_fraction_matches_utilization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, c) = (0.2, 0.6);
        let mut p = PuChannelProcess::new(1, a, c, PuState::Off).unwrap();
        let n = 1_000_000;
        let on = (0..n)
            .filter(|_| p.sample_transition(&mut rng) == PuState::On)
            .count();
        let frac = on as f64 / n as f64;
        let target = p.channel_utilization();
        // Two-state chain: asymptotic variance of the ON fraction is
        // ϑ(1-ϑ)(1+λ)/(1-λ) / n with λ = 1 - A - C.
        let lambda = 1.0 - a - c;
        let se = (target * (1.0 - target) * (1.0 + lambda) / (1.0 - lambda) / n as f64).sqrt();
        assert!((frac - target).abs() < 3.0 * se, "{frac} vs {target} (se {se})");
    }

    #[test]
    fn snr_identity_and_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = SnrMatrix::new([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let mut s = SnrProcess::new(0, SnrClass::Moderate, id);
        for _ in 0..100 {
            assert_eq!(s.sample_transition(&mut rng), SnrClass::Moderate);
        }
        let forced = SnrMatrix::new([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]).unwrap();
        let mut s = SnrProcess::new(0, SnrClass::Good, forced);
        assert_eq!(s.sample_transition(&mut rng), SnrClass::Moderate);
    }

    #[test]
    fn snr_uniform_occupancy() {
        let third = 1.0 / 3.0;
        let m = SnrMatrix::new([[third; 3]; 3]).unwrap();
        let mut s = SnrProcess::new(0, SnrClass::Good, m);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 3];
        let n = 1_000_000;
        for _ in 0..n {
            counts[s.sample_transition(&mut rng).index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - third).abs() < 0.01);
        }
    }

    #[test]
    fn snr_matrix_validation() {
        assert!(SnrMatrix::new([[0.5, 0.4, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
        assert!(SnrMatrix::new([[1.5, -0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn birth_death_stationary() {
        // Detailed balance: π_G 0.2 = π_M 0.1, π_M 0.1 = π_B 0.2 → (1/4, 1/2, 1/4).
        let pi = SnrMatrix::birth_death().stationary();
        for (got, want) in pi.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_seize_and_release() {
        let mut pool = SpectrumPool::new(2, 3).unwrap();
        let got = pool.take_free(4, 9).unwrap();
        assert_eq!(got, vec![0, 1, 2, 3]);
        let lost = pool.seize_channel(1).unwrap();
        assert_eq!(lost, vec![(9, 3)]);
        assert_eq!(pool.free_slots(), 0);
        assert_eq!(pool.pu_slots(), 3);
        assert_eq!(pool.su_slots(), 3);
        assert!(pool.seize_channel(1).is_err());
        pool.release_channel(1).unwrap();
        assert_eq!(pool.free_slots(), 3);
        assert!(pool.take_free(4, 1).is_err());
        assert!(pool.is_valid_channel(2) && !pool.is_valid_channel(0) && !pool.is_valid_channel(3));
    }

    proptest! {
        #[test]
        fn capacities_conserve_slots(
            m in 1usize..8, s in 1usize..8,
            thetas in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 8)
        ) {
            let pool = SpectrumPool::new(m, s).unwrap();
            let ps: Vec<_> = thetas.iter().take(m).enumerate()
                .filter_map(|(i, &(a, c))| PuChannelProcess::new(i + 1, a, c, PuState::Off).ok())
                .collect();
            prop_assume!(ps.len() == m);
            let phi = pu_slot_capacity(&pool, &ps).unwrap();
            let su = su_slot_capacity(&pool, phi).unwrap();
            prop_assert!((phi + su - (m * s) as f64).abs() < 1e-9);
            prop_assert!(ps.iter().all(|p| (0.0..=1.0).contains(&p.channel_utilization())));
        }

        #[test]
        fn frame_slots_ignore_bits_per_symbol(
            pi in 1.0f64..1e5, eps in 0.01f64..10.0, rs in 1.0f64..1e4,
            r1 in 0.5f64..12.0, r2 in 0.5f64..12.0,
        ) {
            let cfg = FrameConfig::new(pi, eps, rs).unwrap();
            prop_assert_eq!(compute_frame_slots(&cfg, &mode(r1)), compute_frame_slots(&cfg, &mode(r2)));
        }

        #[test]
        fn snr_mapping_is_monotone(a in -20.0f64..40.0, b in -20.0f64..40.0) {
            let t = three_modes();
            let rank = |g| match snr_to_mode(g, &t).unwrap() {
                ModeSelection::Outage => 0,
                ModeSelection::Mode(m) => m.index,
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(rank(lo) <= rank(hi));
        }
    }
}
