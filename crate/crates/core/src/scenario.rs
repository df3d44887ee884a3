//! Scenario files.
//!
//! A scenario is flat text: named blocks in brackets, then `key = value`
//! lines. `#` starts a comment. Lists are comma-separated; the SNR matrix
//! takes three rows separated by `;`.
//!
//! ```text
//! [spectrum]
//! channels = 4
//! slots_per_channel = 3
//!
//! [traffic]
//! pu_arrival_rate = 0.4
//! pu_service_rate = 1.0
//!
//! [class.video]
//! arrival_rate = 1.2
//! service_rate = 0.5
//! theta_min = 1
//! theta_max = 3
//!
//! [policy]
//! kind = RBS_Q
//! q_max = 4
//! deadline = 5
//!
//! [sim]
//! horizon = 20000
//! warmup = 1000
//! replications = 10
//! seed = 1
//! ```
//!
//! `[spectrum]`, `[policy]` and at least one `[class.NAME]` block are
//! required. Any field can be overridden later by its dotted path, e.g.
//! `traffic.pu_arrival_rate`, `class.video.theta_max` or `policy.q_max`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::policy::{PolicyConfig, PolicyKind, SlotDemand};
use crate::sim::{ClassConfig, SimConfig};
use crate::spectrum::{
    compute_frame_slots, pu_slot_capacity, su_slot_capacity, AmcTable, FrameConfig,
    PuChannelProcess, PuState, SnrMatrix, SpectrumPool,
};

/// One problem with a scenario, tied to a line when it came from a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if self.field.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ScenarioError {
    pub errors: Vec<FieldError>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in self.errors.iter().enumerate() {
            if k > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl ScenarioError {
    fn single(line: Option<usize>, field: &str, message: impl Into<String>) -> Self {
        Self {
            errors: vec![FieldError {
                line,
                field: field.to_string(),
                message: message.into(),
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumBlock {
    pub channels: usize,
    /// Explicit `S`. When absent it is derived from the frame fields, or 1.
    pub slots_per_channel: Option<usize>,
    pub message_bits: Option<f64>,
    pub channel_constant: Option<f64>,
    pub symbol_rate: Option<f64>,
    pub amc_bits: Vec<f64>,
    pub amc_thresholds_db: Vec<f64>,
    /// 1-based AMC mode used for the frame arithmetic; default the highest.
    pub amc_mode: Option<usize>,
    /// Per-channel `A_i`; one value applies to every channel.
    pub pu_off_to_on: Vec<f64>,
    /// Per-channel `C_i`; one value applies to every channel.
    pub pu_on_to_off: Vec<f64>,
}

impl Default for SpectrumBlock {
    fn default() -> Self {
        Self {
            channels: 1,
            slots_per_channel: None,
            message_bits: None,
            channel_constant: None,
            symbol_rate: None,
            amc_bits: vec![1.0, 2.0, 4.0],
            amc_thresholds_db: vec![0.0, 8.0, 15.0],
            amc_mode: None,
            pu_off_to_on: vec![0.0],
            pu_on_to_off: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficBlock {
    pub pu_arrival_rate: f64,
    pub pu_service_rate: f64,
    pub snr_rate: f64,
    pub snr_matrix: [[f64; 3]; 3],
}

impl Default for TrafficBlock {
    fn default() -> Self {
        Self {
            pu_arrival_rate: 0.0,
            pu_service_rate: 1.0,
            snr_rate: 0.0,
            snr_matrix: *SnrMatrix::birth_death().rows(),
        }
    }
}

/// Per-SNR-class values, ordered good, moderate, bad.
pub type PerSnr = [u32; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ClassBlock {
    pub name: String,
    pub arrival_rate: f64,
    pub service_rate: f64,
    /// Fixed demand. Defaults to `theta_max` if given, else 1.
    pub theta: Option<PerSnr>,
    /// Defaults to `theta`.
    pub theta_min: Option<PerSnr>,
    /// Defaults to `theta`.
    pub theta_max: Option<PerSnr>,
    pub deadline: Option<f64>,
}

impl ClassBlock {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            arrival_rate: 1.0,
            service_rate: 1.0,
            theta: None,
            theta_min: None,
            theta_max: None,
            deadline: None,
        }
    }

    fn resolved(&self) -> (PerSnr, PerSnr, PerSnr) {
        let theta = self.theta.or(self.theta_max).unwrap_or([1; 3]);
        let min = self.theta_min.unwrap_or(theta);
        let max = self.theta_max.unwrap_or(theta);
        (theta, min, max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBlock {
    pub kind: PolicyKind,
    pub q1_max: usize,
    pub q2_max: usize,
    pub deadline: f64,
    pub strict_hol: bool,
    pub exp_deadline: bool,
}

impl Default for PolicyBlock {
    fn default() -> Self {
        Self {
            kind: PolicyKind::IbsQ,
            q1_max: 0,
            q2_max: 0,
            deadline: f64::INFINITY,
            strict_hol: false,
            exp_deadline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimBlock {
    pub horizon: f64,
    pub warmup: f64,
    pub replications: usize,
    pub seed: u64,
}

impl Default for SimBlock {
    fn default() -> Self {
        Self {
            horizon: 10_000.0,
            warmup: 0.0,
            replications: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub spectrum: SpectrumBlock,
    pub traffic: TrafficBlock,
    pub classes: Vec<ClassBlock>,
    pub policy: PolicyBlock,
    pub sim: SimBlock,
    /// Where each field was set, for error messages.
    lines: BTreeMap<String, usize>,
}

fn parse_f64(v: &str) -> Result<f64, String> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| format!("`{}` is not a number", v.trim()))
}

fn parse_uint<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.trim()
        .parse::<T>()
        .map_err(|_| format!("`{}` is not a non-negative integer", v.trim()))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(parse_f64).collect()
}

fn parse_per_snr(v: &str) -> Result<PerSnr, String> {
    let vals: Vec<u32> = v.split(',').map(parse_uint).collect::<Result<_, _>>()?;
    match vals[..] {
        [x] => Ok([x; 3]),
        [g, m, b] => Ok([g, m, b]),
        _ => Err("expected one value or three (good, moderate, bad)".into()),
    }
}

fn parse_matrix(v: &str) -> Result<[[f64; 3]; 3], String> {
    let rows: Vec<&str> = v.split(';').collect();
    if rows.len() != 3 {
        return Err("expected three rows separated by `;`".into());
    }
    let mut m = [[0.0; 3]; 3];
    for (i, row) in rows.iter().enumerate() {
        let vals = parse_list(row)?;
        if vals.len() != 3 {
            return Err(format!("row {} needs three entries", i + 1));
        }
        m[i].copy_from_slice(&vals);
    }
    Ok(m)
}

const BLOCKS: &str = "spectrum, traffic, class.NAME, policy, sim";

impl Scenario {
    /// Sets one field by its dotted path.
    pub fn set(&mut self, path: &str, value: &str) -> Result<(), ScenarioError> {
        self.set_at(path, value, None)?;
        self.validate()
    }

    fn set_at(&mut self, path: &str, value: &str, line: Option<usize>) -> Result<(), ScenarioError> {
        let (block, key) = path
            .rsplit_once('.')
            .ok_or_else(|| ScenarioError::single(line, path, "expected BLOCK.KEY"))?;
        self.set_field(block, key, value)
            .map_err(|m| ScenarioError::single(line, path, m))?;
        if let Some(line) = line {
            self.lines.insert(path.to_string(), line);
        }
        Ok(())
    }

    fn class_mut(&mut self, name: &str) -> &mut ClassBlock {
        if let Some(k) = self.classes.iter().position(|c| c.name == name) {
            return &mut self.classes[k];
        }
        self.classes.push(ClassBlock::new(name));
        self.classes.last_mut().unwrap()
    }

    fn set_field(&mut self, block: &str, key: &str, v: &str) -> Result<(), String> {
        let unknown = || Err(format!("unknown key `{key}` in [{block}]"));
        match block {
            "spectrum" => {
                let s = &mut self.spectrum;
                match key {
                    "channels" => s.channels = parse_uint(v)?,
                    "slots_per_channel" => s.slots_per_channel = Some(parse_uint(v)?),
                    "message_bits" => s.message_bits = Some(parse_f64(v)?),
                    "channel_constant" => s.channel_constant = Some(parse_f64(v)?),
                    "symbol_rate" => s.symbol_rate = Some(parse_f64(v)?),
                    "amc_bits" => s.amc_bits = parse_list(v)?,
                    "amc_thresholds_db" => s.amc_thresholds_db = parse_list(v)?,
                    "amc_mode" => s.amc_mode = Some(parse_uint(v)?),
                    "pu_off_to_on" => s.pu_off_to_on = parse_list(v)?,
                    "pu_on_to_off" => s.pu_on_to_off = parse_list(v)?,
                    _ => return unknown(),
                }
            }
            "traffic" => {
                let t = &mut self.traffic;
                match key {
                    "pu_arrival_rate" => t.pu_arrival_rate = parse_f64(v)?,
                    "pu_service_rate" => t.pu_service_rate = parse_f64(v)?,
                    "snr_rate" => t.snr_rate = parse_f64(v)?,
                    "snr_matrix" => t.snr_matrix = parse_matrix(v)?,
                    _ => return unknown(),
                }
            }
            "policy" => {
                let p = &mut self.policy;
                match key {
                    "kind" => p.kind = v.trim().parse()?,
                    "q_max" => {
                        p.q1_max = parse_uint(v)?;
                        p.q2_max = p.q1_max;
                    }
                    "q1_max" => p.q1_max = parse_uint(v)?,
                    "q2_max" => p.q2_max = parse_uint(v)?,
                    "deadline" => p.deadline = parse_f64(v)?,
                    "strict_hol" => p.strict_hol = parse_bool(v)?,
                    "exp_deadline" => p.exp_deadline = parse_bool(v)?,
                    _ => return unknown(),
                }
            }
            "sim" => {
                let s = &mut self.sim;
                match key {
                    "horizon" => s.horizon = parse_f64(v)?,
                    "warmup" => s.warmup = parse_f64(v)?,
                    "replications" => s.replications = parse_uint(v)?,
                    "seed" => s.seed = parse_uint(v)?,
                    _ => return unknown(),
                }
            }
            _ => {
                let Some(name) = block.strip_prefix("class.").filter(|n| !n.is_empty()) else {
                    return Err(format!("unknown block [{block}] (expected {BLOCKS})"));
                };
                if !matches!(
                    key,
                    "arrival_rate"
                        | "service_rate"
                        | "theta"
                        | "theta_min"
                        | "theta_max"
                        | "deadline"
                ) {
                    return unknown();
                }
                let c = self.class_mut(name);
                match key {
                    "arrival_rate" => c.arrival_rate = parse_f64(v)?,
                    "service_rate" => c.service_rate = parse_f64(v)?,
                    "theta" => c.theta = Some(parse_per_snr(v)?),
                    "theta_min" => c.theta_min = Some(parse_per_snr(v)?),
                    "theta_max" => c.theta_max = Some(parse_per_snr(v)?),
                    _ => c.deadline = Some(parse_f64(v)?),
                }
            }
        }
        Ok(())
    }

    fn line_of(&self, path: &str) -> Option<usize> {
        self.lines.get(path).copied()
    }

    /// `S`, from the explicit value or the frame arithmetic.
    pub fn slots_per_channel(&self) -> usize {
        let s = &self.spectrum;
        if let Some(n) = s.slots_per_channel {
            return n;
        }
        match self.frame_slots() {
            Some(Ok(n)) => n,
            _ => 1,
        }
    }

    fn amc_table(&self) -> Result<AmcTable, String> {
        AmcTable::from_thresholds(&self.spectrum.amc_bits, &self.spectrum.amc_thresholds_db)
            .map_err(|e| e.to_string())
    }

    fn frame_slots(&self) -> Option<Result<usize, String>> {
        let s = &self.spectrum;
        let (Some(pi), Some(eps), Some(rs)) = (s.message_bits, s.channel_constant, s.symbol_rate)
        else {
            return None;
        };
        Some((|| {
            let frame = FrameConfig::new(pi, eps, rs).map_err(|e| e.to_string())?;
            let table = self.amc_table()?;
            let mode = match s.amc_mode {
                None => *table.highest(),
                Some(n) => *table
                    .modes()
                    .get(n.wrapping_sub(1))
                    .ok_or_else(|| format!("amc_mode {n} not in the table"))?,
            };
            Ok(compute_frame_slots(&frame, &mode))
        })())
    }

    /// Discrete ON/OFF chains of every channel.
    pub fn pu_processes(&self) -> Result<Vec<PuChannelProcess>, String> {
        let s = &self.spectrum;
        let m = s.channels;
        let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
        for (name, v) in [("pu_off_to_on", &s.pu_off_to_on), ("pu_on_to_off", &s.pu_on_to_off)] {
            if v.len() != 1 && v.len() != m {
                return Err(format!("{name} needs 1 or {m} values, got {}", v.len()));
            }
        }
        (0..m)
            .map(|i| {
                PuChannelProcess::new(
                    i + 1,
                    pick(&s.pu_off_to_on, i),
                    pick(&s.pu_on_to_off, i),
                    PuState::Off,
                )
                .map_err(|e| e.to_string())
            })
            .collect()
    }

    /// Expected slots held by primary users and left to secondary users,
    /// from the per-channel ON/OFF chains.
    pub fn expected_slot_split(&self) -> Result<(f64, f64), String> {
        let pool = SpectrumPool::new(self.spectrum.channels, self.slots_per_channel())
            .map_err(|e| e.to_string())?;
        let phi = pu_slot_capacity(&pool, &self.pu_processes()?).map_err(|e| e.to_string())?;
        let theta = su_slot_capacity(&pool, phi).map_err(|e| e.to_string())?;
        Ok((phi, theta))
    }

    /// Checks every constraint, reporting all violations at once.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut errors = Vec::new();
        let mut push = |path: &str, message: String| {
            errors.push(FieldError {
                line: self.line_of(path),
                field: path.to_string(),
                message,
            })
        };
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();

        let sp = &self.spectrum;
        if sp.channels == 0 {
            push("spectrum.channels", "must be at least 1".into());
        }
        if sp.slots_per_channel == Some(0) {
            push("spectrum.slots_per_channel", "must be at least 1".into());
        }
        let frame_given = [sp.message_bits, sp.channel_constant, sp.symbol_rate]
            .iter()
            .filter(|v| v.is_some())
            .count();
        if frame_given != 0 && frame_given != 3 {
            push(
                "spectrum.message_bits",
                "message_bits, channel_constant and symbol_rate go together".into(),
            );
        }
        if frame_given == 3 && sp.slots_per_channel.is_some() {
            push(
                "spectrum.slots_per_channel",
                "give either slots_per_channel or the frame fields, not both".into(),
            );
        }
        if let Err(e) = self.amc_table() {
            push("spectrum.amc_bits", e);
        } else if let Some(Err(e)) = self.frame_slots() {
            push("spectrum.message_bits", e);
        }
        let mut pu_range_bad = false;
        for (path, v) in [
            ("spectrum.pu_off_to_on", &sp.pu_off_to_on),
            ("spectrum.pu_on_to_off", &sp.pu_on_to_off),
        ] {
            for x in v.iter() {
                if !(0.0..=1.0).contains(x) {
                    push(path, format!("{x} is outside [0, 1]"));
                    pu_range_bad = true;
                }
            }
        }
        if sp.channels > 0 && !pu_range_bad {
            if let Err(e) = self.pu_processes() {
                push("spectrum.pu_off_to_on", e);
            }
        }

        let tr = &self.traffic;
        if !non_negative(tr.pu_arrival_rate) {
            push("traffic.pu_arrival_rate", "must be >= 0".into());
        }
        if !positive(tr.pu_service_rate) {
            push("traffic.pu_service_rate", "must be > 0".into());
        }
        if !non_negative(tr.snr_rate) {
            push("traffic.snr_rate", "must be >= 0".into());
        }
        if let Err(e) = SnrMatrix::new(tr.snr_matrix) {
            push("traffic.snr_matrix", e.to_string());
        }

        if self.classes.is_empty() {
            push("", "missing block [class.NAME]: at least one SU class is required".into());
        }
        let total = (sp.channels * self.slots_per_channel()) as u32;
        for c in &self.classes {
            let p = |k: &str| format!("class.{}.{k}", c.name);
            if !non_negative(c.arrival_rate) {
                push(&p("arrival_rate"), "must be >= 0".into());
            }
            if !positive(c.service_rate) {
                push(&p("service_rate"), "must be > 0".into());
            }
            let (theta, min, max) = c.resolved();
            for k in 0..3 {
                if theta[k] == 0 {
                    push(&p("theta"), "must be at least 1".into());
                }
                if min[k] == 0 {
                    push(&p("theta_min"), "must be at least 1".into());
                }
                if min[k] > max[k] {
                    push(
                        &p("theta_min"),
                        format!("theta_min {} exceeds theta_max {}", min[k], max[k]),
                    );
                }
                if total > 0 && (max[k] > total || theta[k] > total) {
                    push(
                        &p("theta_max"),
                        format!("demand exceeds the {total} slots of the spectrum"),
                    );
                }
            }
            if let Some(d) = c.deadline {
                if !(d > 0.0) {
                    push(&p("deadline"), "must be > 0 or inf".into());
                }
            }
        }

        if !(self.policy.deadline > 0.0) {
            push("policy.deadline", "must be > 0 or inf".into());
        }

        let sim = &self.sim;
        if !positive(sim.horizon) {
            push("sim.horizon", "must be > 0".into());
        }
        if !(sim.warmup >= 0.0 && sim.warmup < sim.horizon) {
            push("sim.warmup", "must lie in [0, horizon)".into());
        }
        if sim.replications == 0 {
            push("sim.replications", "must be at least 1".into());
        }
        errors.dedup();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError { errors })
        }
    }

    /// Simulator configuration, with the policy kind optionally replaced.
    pub fn to_sim_config(&self, kind: Option<PolicyKind>) -> Result<SimConfig, ScenarioError> {
        self.validate()?;
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let (theta, min, max) = c.resolved();
                let demand = [0, 1, 2].map(|k| {
                    SlotDemand::new(theta[k], min[k], max[k]).expect("validated demand")
                });
                ClassConfig {
                    name: c.name.clone(),
                    arrival_rate: c.arrival_rate,
                    service_rate: c.service_rate,
                    demand,
                    deadline: c.deadline,
                }
            })
            .collect();
        Ok(SimConfig {
            channels: self.spectrum.channels,
            slots_per_channel: self.slots_per_channel(),
            pu_arrival_rate: self.traffic.pu_arrival_rate,
            pu_service_rate: self.traffic.pu_service_rate,
            classes,
            snr_rate: self.traffic.snr_rate,
            snr_matrix: SnrMatrix::new(self.traffic.snr_matrix).expect("validated matrix"),
            policy: PolicyConfig {
                kind: kind.unwrap_or(self.policy.kind),
                q1_max: self.policy.q1_max,
                q2_max: self.policy.q2_max,
                strict_hol: self.policy.strict_hol,
            },
            deadline: self.policy.deadline,
            exp_deadline: self.policy.exp_deadline,
            horizon: self.sim.horizon,
            warmup: self.sim.warmup,
        })
    }
}

/// Parses a scenario in the block format, or its JSON equivalent when the
/// text starts with `{`.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    if text.trim_start().starts_with('{') {
        return parse_json(text);
    }
    let mut sc = Scenario::default();
    let mut errors = Vec::new();
    let mut block: Option<String> = None;
    let mut seen_blocks = Vec::new();
    let mut seen_keys = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                errors.push(FieldError {
                    line: Some(line),
                    field: String::new(),
                    message: format!("malformed block header `{content}`"),
                });
                continue;
            };
            let name = name.trim().to_string();
            let known = matches!(name.as_str(), "spectrum" | "traffic" | "policy" | "sim")
                || name.strip_prefix("class.").is_some_and(|n| !n.is_empty());
            if !known {
                errors.push(FieldError {
                    line: Some(line),
                    field: String::new(),
                    message: format!("unknown block [{name}] (expected {BLOCKS})"),
                });
                block = None;
                continue;
            }
            if seen_blocks.contains(&name) {
                errors.push(FieldError {
                    line: Some(line),
                    field: String::new(),
                    message: format!("block [{name}] appears twice"),
                });
            }
            if let Some(class) = name.strip_prefix("class.") {
                sc.class_mut(class);
            }
            seen_blocks.push(name.clone());
            block = Some(name);
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            errors.push(FieldError {
                line: Some(line),
                field: String::new(),
                message: format!("expected `key = value`, got `{content}`"),
            });
            continue;
        };
        let Some(b) = block.as_deref() else {
            errors.push(FieldError {
                line: Some(line),
                field: key.trim().to_string(),
                message: "key outside any block".into(),
            });
            continue;
        };
        let path = format!("{b}.{}", key.trim());
        if let Some(prev) = seen_keys.insert(path.clone(), line) {
            errors.push(FieldError {
                line: Some(line),
                field: path.clone(),
                message: format!("already set on line {prev}"),
            });
            continue;
        }
        if let Err(e) = sc.set_at(&path, value, Some(line)) {
            errors.extend(e.errors);
        }
    }
    for required in ["spectrum", "policy"] {
        if !seen_blocks.iter().any(|b| b == required) {
            errors.push(FieldError {
                line: None,
                field: String::new(),
                message: format!("missing block [{required}]"),
            });
        }
    }
    if let Err(e) = sc.validate() {
        errors.extend(e.errors);
    }
    if errors.is_empty() {
        Ok(sc)
    } else {
        Err(ScenarioError { errors })
    }
}

/// JSON form: an object of blocks keyed like the text headers
/// (`"spectrum"`, `"class.video"`, ...), each an object of fields. Arrays
/// become comma lists, arrays of arrays become `;`-separated rows.
fn parse_json(text: &str) -> Result<Scenario, ScenarioError> {
    use serde_json::Value;
    let root: Value = serde_json::from_str(text)
        .map_err(|e| ScenarioError::single(Some(e.line()), "", format!("invalid JSON: {e}")))?;
    let Value::Object(blocks) = root else {
        return Err(ScenarioError::single(None, "", "top level must be an object"));
    };
    fn flat(v: &Value) -> String {
        match v {
            Value::Array(items) => {
                let sep = if items.iter().any(Value::is_array) { ";" } else { "," };
                items.iter().map(flat).collect::<Vec<_>>().join(sep)
            }
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
    let mut text = String::new();
    for (name, fields) in &blocks {
        let Value::Object(fields) = fields else {
            return Err(ScenarioError::single(None, name, "block must be an object"));
        };
        text.push_str(&format!("[{name}]\n"));
        for (k, v) in fields {
            text.push_str(&format!("{k} = {}\n", flat(v)));
        }
    }
    parse_scenario(&text).map_err(|mut e| {
        // line numbers refer to the flattened form, not the JSON text
        e.errors.iter_mut().for_each(|f| f.line = None);
        e
    })
}
