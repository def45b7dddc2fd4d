//! Scenario files.
//!
//! Scenarios are TOML documents. Sizes accept either integer bytes or a
//! string with a binary unit (`"125GB"`, `"256 MiB"`). See `presets/` for
//! complete examples.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlParams;
use crate::sim::{ClusterConfig, NodeSpec, SlowdownModel};
use crate::storage::{AdmissionPolicy, DataNodeSpec, TierConfig, TierLatencies};
use crate::telemetry::{ControllerOptions, DEFAULT_DEAD_BAND};
use crate::units::{gb, serde_size, MIB};
use crate::workload::{gen_hpc_trace, AnalyticsJob, BurstWindow, HpcTraceProfile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("`{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Upper bound on simulated time.
    pub duration_ms: u64,
    #[serde(default = "default_tick")]
    pub tick_ms: u64,
    #[serde(default)]
    pub cluster: ClusterSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub hpc: Option<HpcSection>,
    #[serde(default)]
    pub analytics: Option<AnalyticsSection>,
    #[serde(default)]
    pub slowdown: SlowdownModel,
    #[serde(default)]
    pub latencies: TierLatencies,
}

fn default_tick() -> u64 {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    pub compute_nodes: usize,
    #[serde(with = "serde_size")]
    pub total_memory: u64,
    #[serde(with = "serde_size")]
    pub reserved: u64,
    #[serde(with = "serde_size")]
    pub ramdisk_max: u64,
    pub cores: u32,
    /// Swap beyond this fraction of memory fails a node.
    pub swap_limit_frac: f64,
    pub data_nodes: usize,
    #[serde(with = "serde_size")]
    pub buffer_cache: u64,
    /// Stall per evicted byte, in nanoseconds.
    pub eviction_ns_per_byte: f64,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            compute_nodes: 4,
            total_memory: gb(125),
            reserved: gb(5),
            ramdisk_max: gb(60),
            cores: 24,
            swap_limit_frac: 0.02,
            data_nodes: 2,
            buffer_cache: gb(80),
            eviction_ns_per_byte: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed capacity.
    Static,
    /// Capacity steered by the controller.
    Dynamic,
    /// Whole RAMdisk, never adjusted.
    Unlimited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub mode: Mode,
    /// Static capacity; ignored in the other modes.
    #[serde(with = "serde_size")]
    pub capacity: u64,
    pub lambda: f64,
    pub r0: f64,
    #[serde(with = "serde_size")]
    pub u_min: u64,
    #[serde(with = "serde_size")]
    pub u_max: u64,
    pub interval_ms: u64,
    #[serde(with = "serde_size")]
    pub dead_band: u64,
    pub ema_alpha: Option<f64>,
    pub anti_windup: bool,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let p = ControlParams::default();
        Self {
            mode: Mode::Dynamic,
            capacity: gb(25),
            lambda: p.lambda,
            r0: p.r0,
            u_min: p.u_min,
            u_max: p.u_max,
            interval_ms: p.interval_ms,
            dead_band: DEFAULT_DEAD_BAND,
            ema_alpha: None,
            anti_windup: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpcSection {
    #[serde(with = "serde_size")]
    pub baseline: u64,
    #[serde(with = "serde_size")]
    pub peak: u64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default = "default_jitter_step")]
    pub jitter_step_ms: u64,
    #[serde(default)]
    pub bursts: Vec<BurstWindow>,
    /// Compute nodes running the trace; all of them when absent.
    #[serde(default)]
    pub nodes: Option<Vec<usize>>,
}

fn default_jitter_step() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticsSection {
    #[serde(with = "serde_size")]
    pub dataset: u64,
    #[serde(with = "serde_size", default = "default_block")]
    pub block_size: u64,
    pub iterations: u32,
    #[serde(with = "serde_size")]
    pub exec_memory: u64,
    #[serde(default = "default_compute")]
    pub compute_ms_per_block: f64,
    #[serde(default)]
    pub nodes: Option<Vec<usize>>,
    /// Resident bytes per cached data byte.
    #[serde(default = "one")]
    pub inflation: f64,
    #[serde(default)]
    pub admission: AdmissionPolicy,
    #[serde(default = "default_ghost_factor")]
    pub ghost_factor: usize,
    /// Halve cached access counts at this period.
    #[serde(default)]
    pub aging_interval_ms: Option<u64>,
}

fn default_block() -> u64 {
    256 * MIB
}

fn default_compute() -> f64 {
    20.0
}

fn one() -> f64 {
    1.0
}

fn default_ghost_factor() -> usize {
    4
}

const PRESETS: [(&str, &str); 4] = [
    ("config1-spark45", include_str!("../presets/config1-spark45.toml")),
    ("config2-static25", include_str!("../presets/config2-static25.toml")),
    ("config3-dynims", include_str!("../presets/config3-dynims.toml")),
    ("config4-upper", include_str!("../presets/config4-upper.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|p| p.0)
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|p| p.0 == name).map(|p| p.1)
}

pub fn preset(name: &str) -> Result<Scenario, ScenarioError> {
    let src = preset_source(name).ok_or_else(|| ScenarioError::UnknownPreset(name.into()))?;
    Scenario::from_toml(src)
}

/// Loads a scenario file, or a preset when `path` names one and no such
/// file exists.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some(name) = path.to_str().filter(|n| preset_source(n).is_some()) {
            return preset(name);
        }
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), reason: e.to_string() })?;
    Scenario::from_toml(&text)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn control_params(&self) -> ControlParams {
        let c = &self.controller;
        ControlParams {
            lambda: c.lambda,
            r0: c.r0,
            u_min: c.u_min,
            u_max: c.u_max,
            interval_ms: c.interval_ms,
            total_m: self.cluster.total_memory,
        }
    }

    pub fn controller_options(&self) -> ControllerOptions {
        ControllerOptions {
            dead_band: self.controller.dead_band,
            ema_alpha: self.controller.ema_alpha,
            anti_windup: self.controller.anti_windup,
        }
    }

    pub fn node_ids(&self) -> Vec<String> {
        (0..self.cluster.compute_nodes).map(|i| format!("cn{i}")).collect()
    }

    /// Capacity every tier starts at.
    pub fn initial_capacity(&self) -> u64 {
        match self.controller.mode {
            Mode::Static => self.controller.capacity,
            Mode::Dynamic => self.controller.u_max,
            Mode::Unlimited => self.cluster.ramdisk_max,
        }
    }

    pub fn job(&self) -> Option<AnalyticsJob> {
        self.analytics.as_ref().map(|a| AnalyticsJob {
            dataset_bytes: a.dataset,
            block_size: a.block_size,
            iterations: a.iterations,
            exec_memory: a.exec_memory,
            compute_ms_per_block: a.compute_ms_per_block,
            nodes: a.nodes.clone().unwrap_or_else(|| (0..self.cluster.compute_nodes).collect()),
        })
    }

    /// Trace profile for compute node `node`; each node gets its own noise.
    pub fn hpc_profile(&self, node: usize) -> Option<HpcTraceProfile> {
        let h = self.hpc.as_ref()?;
        if let Some(nodes) = &h.nodes {
            if !nodes.contains(&node) {
                return None;
            }
        }
        Some(HpcTraceProfile {
            baseline: h.baseline,
            peak: h.peak,
            bursts: h.bursts.clone(),
            jitter: h.jitter,
            jitter_step_ms: h.jitter_step_ms,
            horizon_ms: self.duration_ms,
            seed: self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(node as u64),
        })
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if self.duration_ms == 0 {
            return Err(invalid("duration_ms", "must be positive"));
        }
        let c = &self.cluster;
        if c.compute_nodes == 0 {
            return Err(invalid("cluster.compute_nodes", "need at least one"));
        }
        if c.data_nodes == 0 {
            return Err(invalid("cluster.data_nodes", "need at least one"));
        }
        if c.total_memory == 0 || c.ramdisk_max == 0 || c.cores == 0 {
            return Err(invalid("cluster", "total_memory, ramdisk_max and cores must be positive"));
        }
        if c.reserved + c.ramdisk_max > c.total_memory {
            return Err(invalid("cluster.ramdisk_max", "reserved + ramdisk_max exceeds total_memory"));
        }
        if !(c.swap_limit_frac >= 0.0 && c.swap_limit_frac.is_finite()) {
            return Err(invalid("cluster.swap_limit_frac", "must be a non-negative number"));
        }
        if !(c.eviction_ns_per_byte >= 0.0 && c.eviction_ns_per_byte.is_finite()) {
            return Err(invalid("cluster.eviction_ns_per_byte", "must be a non-negative number"));
        }
        let k = &self.controller;
        if k.interval_ms == 0 {
            return Err(invalid("controller.interval_ms", "must be positive"));
        }
        if self.tick_ms == 0 || !k.interval_ms.is_multiple_of(self.tick_ms) {
            return Err(invalid(
                "tick_ms",
                format!("must be positive and divide controller.interval_ms ({})", k.interval_ms),
            ));
        }
        match k.mode {
            Mode::Static if k.capacity > c.ramdisk_max => {
                return Err(invalid("controller.capacity", "exceeds cluster.ramdisk_max"));
            }
            Mode::Dynamic => {
                self.control_params().validate().map_err(|e| match e {
                    crate::control::ControlError::Config { field, reason }
                    | crate::control::ControlError::Input { field, reason } => {
                        invalid(&format!("controller.{field}"), reason)
                    }
                })?;
                if k.u_max > c.ramdisk_max {
                    return Err(invalid("controller.u_max", "exceeds cluster.ramdisk_max"));
                }
                if let Some(a) = k.ema_alpha {
                    if !(a > 0.0 && a <= 1.0) {
                        return Err(invalid("controller.ema_alpha", "must lie in (0, 1]"));
                    }
                }
            }
            _ => {}
        }
        if self.hpc.is_none() && self.analytics.is_none() {
            return Err(invalid("hpc", "a scenario needs an hpc or an analytics section"));
        }
        if let Some(h) = &self.hpc {
            if let Some(nodes) = &h.nodes {
                if let Some(&bad) = nodes.iter().find(|&&n| n >= c.compute_nodes) {
                    return Err(invalid("hpc.nodes", format!("node {bad} does not exist")));
                }
            }
            self.hpc_profile(0)
                .unwrap_or(HpcTraceProfile {
                    baseline: h.baseline,
                    peak: h.peak,
                    bursts: h.bursts.clone(),
                    jitter: h.jitter,
                    jitter_step_ms: h.jitter_step_ms,
                    horizon_ms: self.duration_ms,
                    seed: 0,
                })
                .validate(Some(c.total_memory))
                .map_err(|e| invalid("hpc", e.to_string()))?;
        }
        if let Some(a) = &self.analytics {
            if let Some(nodes) = &a.nodes {
                if let Some(&bad) = nodes.iter().find(|&&n| n >= c.compute_nodes) {
                    return Err(invalid("analytics.nodes", format!("node {bad} does not exist")));
                }
            }
            if !(a.inflation >= 1.0 && a.inflation.is_finite()) {
                return Err(invalid("analytics.inflation", "must be at least 1"));
            }
            if a.ghost_factor == 0 {
                return Err(invalid("analytics.ghost_factor", "must be positive"));
            }
            if a.aging_interval_ms == Some(0) {
                return Err(invalid("analytics.aging_interval_ms", "must be positive"));
            }
            self.job().expect("analytics present").validate().map_err(|e| invalid("analytics", e.to_string()))?;
        }
        self.slowdown.validate().map_err(|e| invalid("slowdown", e))?;
        self.latencies.validate().map_err(|e| invalid("latencies", e.to_string()))?;
        Ok(())
    }

    /// Simulation setup with freshly generated HPC traces.
    pub fn cluster_config(&self) -> Result<ClusterConfig, ScenarioError> {
        let c = &self.cluster;
        let nodes: Vec<NodeSpec> = self
            .node_ids()
            .into_iter()
            .map(|node_id| NodeSpec {
                node_id,
                total_m: c.total_memory,
                reserved: c.reserved,
                ramdisk_max: c.ramdisk_max,
                cores: c.cores,
            })
            .collect();
        let hpc = (0..c.compute_nodes)
            .map(|i| self.hpc_profile(i).map(|p| gen_hpc_trace(&p)).transpose())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| invalid("hpc", e.to_string()))?;
        let mut tier = TierConfig::new(c.ramdisk_max, default_block());
        if let Some(a) = &self.analytics {
            tier.block_size = a.block_size;
            tier.inflation = a.inflation;
            tier.admission = a.admission;
            tier.ghost_factor = a.ghost_factor;
        }
        Ok(ClusterConfig {
            initial_capacity: vec![self.initial_capacity(); nodes.len()],
            nodes,
            tier,
            data_nodes: vec![DataNodeSpec { buffer_cache: c.buffer_cache }; c.data_nodes],
            latencies: self.latencies,
            slowdown: self.slowdown,
            swap_limit_frac: c.swap_limit_frac,
            eviction_ns_per_byte: c.eviction_ns_per_byte,
            hpc,
            job: self.job(),
            tick_ms: self.tick_ms,
            control_interval_ms: self.controller.interval_ms,
            record_timeline: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in preset_names() {
            let s = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.name, name);
            // Text form round-trips.
            assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
        }
    }

    #[test]
    fn config3_matches_reference_setup() {
        let s = preset("config3-dynims").unwrap();
        assert_eq!(s.cluster.compute_nodes, 4);
        assert_eq!(s.cluster.total_memory, gb(125));
        assert_eq!(s.controller.mode, Mode::Dynamic);
        assert_eq!(s.control_params(), ControlParams::default());
        let job = s.job().unwrap();
        assert_eq!((job.dataset_bytes, job.iterations), (gb(320), 10));
        assert!(s.hpc.is_some());
    }

    #[test]
    fn static_presets() {
        let c2 = preset("config2-static25").unwrap();
        assert_eq!((c2.controller.mode, c2.initial_capacity()), (Mode::Static, gb(25)));
        assert_eq!(c2.job().unwrap().exec_memory, gb(20));
        let c4 = preset("config4-upper").unwrap();
        assert_eq!(c4.initial_capacity(), gb(60));
        assert!(c4.hpc.is_none());
        let c1 = preset("config1-spark45").unwrap();
        assert_eq!(c1.analytics.unwrap().inflation, 1.5);
    }

    fn with(edit: impl FnOnce(&mut Scenario)) -> Result<(), ScenarioError> {
        let mut s = preset("config3-dynims").unwrap();
        edit(&mut s);
        s.validate()
    }

    fn field_of(r: Result<(), ScenarioError>) -> String {
        match r {
            Err(ScenarioError::Invalid { field, .. }) => field,
            other => panic!("expected a field error, got {other:?}"),
        }
    }

    #[test]
    fn validation_names_fields() {
        assert_eq!(field_of(with(|s| s.tick_ms = 30)), "tick_ms");
        assert_eq!(field_of(with(|s| s.controller.lambda = 0.0)), "controller.lambda");
        assert_eq!(field_of(with(|s| s.controller.u_max = gb(61))), "controller.u_max");
        assert_eq!(
            field_of(with(|s| {
                s.controller.mode = Mode::Static;
                s.controller.capacity = gb(70);
            })),
            "controller.capacity"
        );
        assert_eq!(field_of(with(|s| s.cluster.reserved = gb(70))), "cluster.ramdisk_max");
        assert_eq!(
            field_of(with(|s| {
                s.hpc = None;
                s.analytics = None;
            })),
            "hpc"
        );
        assert_eq!(field_of(with(|s| s.analytics.as_mut().unwrap().iterations = 0)), "analytics");
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(Scenario::from_toml("name = 3"), Err(ScenarioError::Parse(_))));
        let typo = "name = \"x\"\nduration_ms = 10\n[hpc]\nbaseline = \"1GB\"\npeak = \"2GB\"\nbursst = []\n";
        assert!(matches!(Scenario::from_toml(typo), Err(ScenarioError::Parse(_))));
        assert!(matches!(preset("nope"), Err(ScenarioError::UnknownPreset(_))));
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let s =
            Scenario::from_toml("name = \"tiny\"\nduration_ms = 1000\n[hpc]\nbaseline = \"10GB\"\npeak = \"20GB\"\n")
                .unwrap();
        assert_eq!(s.tick_ms, 10);
        assert_eq!(s.cluster.compute_nodes, 4);
        assert_eq!(s.controller.mode, Mode::Dynamic);
        assert_eq!(s.latencies, TierLatencies::default());
    }

    #[test]
    fn per_node_trace_seeds_differ() {
        let s = preset("config3-dynims").unwrap();
        assert_ne!(s.hpc_profile(0).unwrap().seed, s.hpc_profile(1).unwrap().seed);
    }
}
