//! Monitoring, aggregation and control stages connected by ordered topics.
//!
//! Samples and commands have a JSON line format so traces can be exported
//! and replayed against the controller outside the simulator.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::control::{compute_next_capacity, CapacityDecision, ControlError, ControlParams, ControllerState};
use crate::sim::{Event, NodeSpec, NodeState};
use crate::units::MIB;

/// Default minimum capacity change worth a command.
pub const DEFAULT_DEAD_BAND: u64 = 256 * MIB;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TelemetryError {
    #[error("malformed document: {0}")]
    Syntax(String),
    #[error("field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("no sample for `{host}` in window ending at {window_end_ms} ms")]
    Stale { host: String, window_end_ms: u64 },
    #[error("timestamps for `{host}` not increasing: {previous} then {got}")]
    NonMonotonic { host: String, previous: u64, got: u64 },
    #[error("command for `{host}` violates clamp: {target}")]
    Clamp { host: String, target: u64 },
    #[error(transparent)]
    Control(#[from] ControlError),
}

impl TelemetryError {
    /// Name of the offending field, when there is one.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            TelemetryError::Field { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MemorySample {
    pub host: String,
    pub timestamp_ms: u64,
    pub mem_total: u64,
    pub mem_used: u64,
    pub mem_free: u64,
    pub storage_used: u64,
    pub swap_used: u64,
}

impl MemorySample {
    pub const FIELDS: [&'static str; 7] =
        ["host", "timestamp_ms", "mem_total", "mem_used", "mem_free", "storage_used", "swap_used"];

    /// Total memory demand: resident plus swapped out.
    pub fn demand(&self) -> u64 {
        self.mem_used + self.swap_used
    }

    pub fn validate(&self) -> Result<(), TelemetryError> {
        if self.host.is_empty() {
            return Err(field_err("host", "empty"));
        }
        if self.mem_used.checked_add(self.mem_free) != Some(self.mem_total) {
            return Err(field_err(
                "mem_free",
                format!("mem_used {} + mem_free {} != mem_total {}", self.mem_used, self.mem_free, self.mem_total),
            ));
        }
        if self.storage_used > self.mem_used {
            return Err(field_err("storage_used", "exceeds mem_used"));
        }
        Ok(())
    }
}

fn field_err(field: &'static str, reason: impl Into<String>) -> TelemetryError {
    TelemetryError::Field { field, reason: reason.into() }
}

/// Compact JSON with a fixed field order.
pub fn encode_sample(s: &MemorySample) -> String {
    let mut out = String::with_capacity(160);
    out.push_str("{\"host\":");
    out.push_str(&serde_json::to_string(&s.host).expect("string serializes"));
    for (name, v) in [
        ("timestamp_ms", s.timestamp_ms),
        ("mem_total", s.mem_total),
        ("mem_used", s.mem_used),
        ("mem_free", s.mem_free),
        ("storage_used", s.storage_used),
        ("swap_used", s.swap_used),
    ] {
        let _ = write!(out, ",\"{name}\":{v}");
    }
    out.push('}');
    out
}

fn take_u64(obj: &Map<String, Value>, field: &'static str) -> Result<u64, TelemetryError> {
    match obj.get(field) {
        None => Err(field_err(field, "missing")),
        Some(Value::Number(n)) => {
            if let Some(v) = n.as_u64() {
                Ok(v)
            } else if n.as_i64().is_some() || n.as_f64().is_some_and(|f| f < 0.0) {
                Err(field_err(field, "negative"))
            } else {
                Err(field_err(field, "expected an integer"))
            }
        }
        Some(other) => Err(field_err(field, format!("expected an integer, got {other}"))),
    }
}

/// Parses one sample document. Unknown fields are ignored.
pub fn decode_sample(text: &str) -> Result<MemorySample, TelemetryError> {
    let value: Value = serde_json::from_str(text).map_err(|e| TelemetryError::Syntax(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(TelemetryError::Syntax("expected an object".into()));
    };
    let host = match obj.get("host") {
        None => return Err(field_err("host", "missing")),
        Some(Value::String(h)) => h.clone(),
        Some(other) => return Err(field_err("host", format!("expected a string, got {other}"))),
    };
    let s = MemorySample {
        host,
        timestamp_ms: take_u64(&obj, "timestamp_ms")?,
        mem_total: take_u64(&obj, "mem_total")?,
        mem_used: take_u64(&obj, "mem_used")?,
        mem_free: take_u64(&obj, "mem_free")?,
        storage_used: take_u64(&obj, "storage_used")?,
        swap_used: take_u64(&obj, "swap_used")?,
    };
    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityCommand {
    pub host: String,
    pub target_capacity: u64,
    pub issued_at_ms: u64,
    pub decision: CapacityDecision,
}

impl CapacityCommand {
    /// A bare command with a placeholder decision.
    pub fn new(host: &str, target_capacity: u64, issued_at_ms: u64) -> Self {
        Self {
            host: host.to_string(),
            target_capacity,
            issued_at_ms,
            decision: CapacityDecision {
                node_id: host.to_string(),
                target_capacity,
                raw_unclamped: target_capacity as i64,
                utilization_r: 0.0,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("command serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope<T> {
    pub sequence: u64,
    pub payload: T,
}

/// FIFO queue with per-topic sequence numbers.
#[derive(Debug, Clone)]
pub struct Topic<T> {
    name: String,
    next_sequence: u64,
    queue: VecDeque<Envelope<T>>,
}

impl<T> Topic<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), next_sequence: 0, queue: VecDeque::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn publish(&mut self, payload: T) -> u64 {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.queue.push_back(Envelope { sequence, payload });
        sequence
    }

    pub fn poll(&mut self) -> Option<Envelope<T>> {
        self.queue.pop_front()
    }

    pub fn drain(&mut self) -> Vec<Envelope<T>> {
        self.queue.drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Bus {
    pub metrics: Topic<MemorySample>,
    pub commands: Topic<CapacityCommand>,
}

impl Default for Bus {
    fn default() -> Self {
        Self { metrics: Topic::new("metrics"), commands: Topic::new("commands") }
    }
}

/// Ledger snapshot. `mem_used` is resident memory, so it saturates at
/// `total_m` and the overflow is reported as swap.
pub fn sample_node(state: &NodeState, spec: &NodeSpec, now_ms: u64) -> MemorySample {
    MemorySample {
        host: spec.node_id.clone(),
        timestamp_ms: now_ms,
        mem_total: spec.total_m,
        mem_used: state.mem_used(spec),
        mem_free: state.free,
        storage_used: state.storage_used,
        swap_used: state.swap_used,
    }
}

/// Publishes samples, enforcing per-host timestamp order.
#[derive(Debug, Clone, Default)]
pub struct MonitoringAgent {
    last: HashMap<String, u64>,
}

impl MonitoringAgent {
    pub fn publish(&mut self, topic: &mut Topic<MemorySample>, sample: MemorySample) -> Result<u64, TelemetryError> {
        if let Some(&previous) = self.last.get(&sample.host) {
            if sample.timestamp_ms <= previous {
                return Err(TelemetryError::NonMonotonic { host: sample.host, previous, got: sample.timestamp_ms });
            }
        }
        self.last.insert(sample.host.clone(), sample.timestamp_ms);
        Ok(topic.publish(sample))
    }
}

/// One host's input to a control cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aggregate {
    /// Memory demand `mem_used + swap_used`.
    pub v: u64,
    pub storage_used: u64,
}

/// Newest sample for `host` in `(window_end - window_ms, window_end]`.
pub fn aggregate_latest<'a>(
    samples: impl IntoIterator<Item = &'a MemorySample>,
    host: &str,
    window_end_ms: u64,
    window_ms: u64,
) -> Result<Aggregate, TelemetryError> {
    let lo = window_end_ms.saturating_sub(window_ms);
    samples
        .into_iter()
        .filter(|s| {
            s.host == host && s.timestamp_ms <= window_end_ms && (s.timestamp_ms > lo || window_end_ms < window_ms)
        })
        .max_by_key(|s| s.timestamp_ms)
        .map(|s| Aggregate { v: s.demand(), storage_used: s.storage_used })
        .ok_or_else(|| TelemetryError::Stale { host: host.to_string(), window_end_ms })
}

/// One exponential smoothing step.
pub fn ema(previous: u64, x: u64, alpha: f64) -> u64 {
    (alpha * x as f64 + (1.0 - alpha) * previous as f64).round() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerOptions {
    pub dead_band: u64,
    /// Smoothing factor for `v`; `None` uses the latest sample as is.
    pub ema_alpha: Option<f64>,
    /// Shrink from the occupied bytes rather than the nominal capacity when
    /// the tier is not full.
    pub anti_windup: bool,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self { dead_band: DEFAULT_DEAD_BAND, ema_alpha: None, anti_windup: true }
    }
}

/// The control stage: owns every host's `ControllerState`.
#[derive(Debug, Clone)]
pub struct MemoryController {
    params: ControlParams,
    options: ControllerOptions,
    states: Vec<ControllerState>,
    smoothed: HashMap<String, u64>,
}

impl MemoryController {
    pub fn new(params: ControlParams, options: ControllerOptions, hosts: &[String]) -> Result<Self, TelemetryError> {
        params.validate()?;
        if let Some(a) = options.ema_alpha {
            if !(a > 0.0 && a <= 1.0) {
                return Err(field_err("ema_alpha", "must lie in (0, 1]"));
            }
        }
        let states = hosts.iter().map(|h| ControllerState::new(h.clone(), &params)).collect();
        Ok(Self { params, options, states, smoothed: HashMap::new() })
    }

    pub fn params(&self) -> &ControlParams {
        &self.params
    }

    pub fn states(&self) -> &[ControllerState] {
        &self.states
    }

    /// Overrides a host's believed capacity, e.g. to match a tier that did
    /// not start at `u_max`.
    pub fn set_capacity(&mut self, host: &str, u: u64) {
        if let Some(st) = self.states.iter_mut().find(|s| s.node_id == host) {
            st.current_capacity_u = self.params.clamp(u as i64);
        }
    }

    /// Runs the law for every host. `aggregates` is indexed like the host
    /// list; stale hosts are skipped and logged.
    pub fn control_cycle(
        &mut self,
        now_ms: u64,
        aggregates: &[Result<Aggregate, TelemetryError>],
        log: &mut Vec<Event>,
    ) -> Result<Vec<CapacityCommand>, TelemetryError> {
        let mut commands = Vec::new();
        for (st, agg) in self.states.iter_mut().zip(aggregates) {
            let agg = match agg {
                Ok(a) => *a,
                Err(_) => {
                    log.push(Event::StaleMetrics { t_ms: now_ms, node: st.node_id.clone() });
                    continue;
                }
            };
            let v = match self.options.ema_alpha {
                Some(alpha) => {
                    let s = self.smoothed.get(&st.node_id).map_or(agg.v, |&prev| ema(prev, agg.v, alpha));
                    self.smoothed.insert(st.node_id.clone(), s);
                    s
                }
                None => agg.v,
            };
            let u = st.current_capacity_u;
            let over = v as f64 > self.params.r0 * self.params.total_m as f64;
            let base =
                if self.options.anti_windup && over { u.min(agg.storage_used).max(self.params.u_min) } else { u };
            let mut decision = compute_next_capacity(&self.params, base, v)?;
            decision.node_id = st.node_id.clone();
            let target = decision.target_capacity;
            let issued = target.abs_diff(u) >= self.options.dead_band;
            log.push(Event::Decision {
                t_ms: now_ms,
                node: st.node_id.clone(),
                utilization: decision.utilization_r,
                capacity: u,
                target,
                issued,
            });
            st.last_decision_at = now_ms;
            if !issued {
                continue;
            }
            if target < self.params.u_min || target > self.params.u_max {
                return Err(TelemetryError::Clamp { host: st.node_id.clone(), target });
            }
            st.current_capacity_u = target;
            commands.push(CapacityCommand {
                host: st.node_id.clone(),
                target_capacity: target,
                issued_at_ms: now_ms,
                decision,
            });
        }
        Ok(commands)
    }
}

/// Drives the controller from a recorded sample stream. Control instants
/// are the multiples of the interval up to the last sample; hosts appear in
/// first-seen order and start at `u_max`.
pub fn replay(
    params: &ControlParams,
    options: &ControllerOptions,
    samples: &[MemorySample],
    log: &mut Vec<Event>,
) -> Result<Vec<CapacityCommand>, TelemetryError> {
    let mut hosts: Vec<String> = Vec::new();
    let mut last: HashMap<&str, u64> = HashMap::new();
    for s in samples {
        s.validate()?;
        match last.insert(&s.host, s.timestamp_ms) {
            Some(previous) if previous >= s.timestamp_ms => {
                return Err(TelemetryError::NonMonotonic { host: s.host.clone(), previous, got: s.timestamp_ms });
            }
            None => hosts.push(s.host.clone()),
            _ => {}
        }
    }
    let mut ctl = MemoryController::new(params.clone(), options.clone(), &hosts)?;
    let t = params.interval_ms;
    let end = samples.iter().map(|s| s.timestamp_ms).max().unwrap_or(0);
    let mut sorted: Vec<&MemorySample> = samples.iter().collect();
    sorted.sort_by_key(|s| s.timestamp_ms);
    let mut commands = Vec::new();
    let mut start = 0;
    let mut boundary = t;
    while boundary < end + t {
        let stop = sorted.partition_point(|s| s.timestamp_ms <= boundary);
        let window = &sorted[start..stop];
        let aggs: Vec<_> = hosts.iter().map(|h| aggregate_latest(window.iter().copied(), h, boundary, t)).collect();
        commands.extend(ctl.control_cycle(boundary, &aggs, log)?);
        start = stop;
        boundary += t;
    }
    Ok(commands)
}

/// Reads one sample per non-blank line; errors carry the line number.
pub fn parse_samples_jsonl(text: &str) -> Result<Vec<MemorySample>, (usize, TelemetryError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| decode_sample(l).map_err(|e| (i + 1, e)))
        .collect()
}
