//! Workload generators: bursty HPC memory demand and an iterative analytics
//! job that rescans a block dataset every iteration.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::storage::{self, AccessStats, BackingStore, BlockId, StorageError, StorageTier};
use crate::units::{gb, serde_size, MIB};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorkloadError {
    #[error("invalid HPC profile: {0}")]
    Profile(String),
    #[error("invalid analytics job: {0}")]
    Job(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurstWindow {
    pub start_ms: u64,
    pub ramp_ms: u64,
    pub hold_ms: u64,
    pub fall_ms: u64,
}

impl BurstWindow {
    pub fn end_ms(&self) -> u64 {
        self.start_ms + self.ramp_ms + self.hold_ms + self.fall_ms
    }

    /// Instant the demand first reaches its peak.
    pub fn hold_start_ms(&self) -> u64 {
        self.start_ms + self.ramp_ms
    }

    pub fn hold_end_ms(&self) -> u64 {
        self.hold_start_ms() + self.hold_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpcTraceProfile {
    #[serde(with = "serde_size")]
    pub baseline: u64,
    #[serde(with = "serde_size")]
    pub peak: u64,
    #[serde(default)]
    pub bursts: Vec<BurstWindow>,
    /// Multiplicative noise amplitude.
    #[serde(default)]
    pub jitter: f64,
    /// Spacing of jittered breakpoints.
    #[serde(default = "default_jitter_step")]
    pub jitter_step_ms: u64,
    /// Length of the generated trace; demand stays at its final value after.
    pub horizon_ms: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_jitter_step() -> u64 {
    1000
}

impl Default for HpcTraceProfile {
    /// 35 GB baseline with one 25 s excursion to 75 GB at the start of a
    /// 120 s horizon.
    fn default() -> Self {
        Self {
            baseline: gb(35),
            peak: gb(75),
            bursts: vec![BurstWindow { start_ms: 0, ramp_ms: 5_000, hold_ms: 10_000, fall_ms: 10_000 }],
            jitter: 0.01,
            jitter_step_ms: 1000,
            horizon_ms: 120_000,
            seed: 0,
        }
    }
}

impl HpcTraceProfile {
    pub fn validate(&self, node_total: Option<u64>) -> Result<(), WorkloadError> {
        let err = |m: String| Err(WorkloadError::Profile(m));
        if self.baseline > self.peak {
            return err("baseline exceeds peak".into());
        }
        if let Some(m) = node_total {
            if self.peak > m {
                return err(format!("peak {} exceeds node memory {m}", self.peak));
            }
        }
        if !(0.0..=0.2).contains(&self.jitter) {
            return err(format!("jitter {} outside [0, 0.2]", self.jitter));
        }
        if self.jitter_step_ms == 0 || self.horizon_ms == 0 {
            return err("jitter_step_ms and horizon_ms must be positive".into());
        }
        for w in &self.bursts {
            if w.ramp_ms == 0 || w.fall_ms == 0 {
                return err(format!("burst at {} ms needs nonzero ramp and fall", w.start_ms));
            }
        }
        for pair in self.bursts.windows(2) {
            if pair[1].start_ms < pair[0].end_ms() {
                return err(format!("burst windows overlap or are unsorted at {} ms", pair[1].start_ms));
            }
        }
        Ok(())
    }

    /// Noise-free demand at `t`.
    fn shape_at(&self, t: u64) -> u64 {
        let (lo, hi) = (self.baseline as i128, self.peak as i128);
        for w in &self.bursts {
            if t < w.start_ms || t >= w.end_ms() {
                continue;
            }
            let v = if t < w.hold_start_ms() {
                lo + (hi - lo) * (t - w.start_ms) as i128 / w.ramp_ms as i128
            } else if t < w.hold_end_ms() {
                hi
            } else {
                hi - (hi - lo) * (t - w.hold_end_ms()) as i128 / w.fall_ms as i128
            };
            return v as u64;
        }
        self.baseline
    }
}

/// Piecewise-linear demand curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandTimeline {
    points: Vec<(u64, u64)>,
}

impl DemandTimeline {
    pub fn new(points: Vec<(u64, u64)>) -> Result<Self, WorkloadError> {
        if points.is_empty() {
            return Err(WorkloadError::Profile("timeline needs at least one point".into()));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(WorkloadError::Profile("timeline timestamps must increase".into()));
        }
        Ok(Self { points })
    }

    pub fn constant(value: u64) -> Self {
        Self { points: vec![(0, value)] }
    }

    pub fn points(&self) -> &[(u64, u64)] {
        &self.points
    }

    /// Demand at `t_ms`, holding the end values outside the defined range.
    pub fn value_at(&self, t_ms: u64) -> u64 {
        let i = self.points.partition_point(|&(t, _)| t <= t_ms);
        if i == 0 {
            return self.points[0].1;
        }
        if i == self.points.len() {
            return self.points[i - 1].1;
        }
        let (t0, v0) = self.points[i - 1];
        let (t1, v1) = self.points[i];
        let (v0, v1) = (v0 as i128, v1 as i128);
        (v0 + (v1 - v0) * (t_ms - t0) as i128 / (t1 - t0) as i128) as u64
    }

    pub fn max(&self) -> u64 {
        self.points.iter().map(|p| p.1).max().unwrap_or(0)
    }

    pub fn min(&self) -> u64 {
        self.points.iter().map(|p| p.1).min().unwrap_or(0)
    }
}

/// Builds the demand curve for a profile: trapezoids per burst, baseline
/// elsewhere, multiplicative noise at every breakpoint. Noisy values never
/// exceed `peak`.
pub fn gen_hpc_trace(profile: &HpcTraceProfile) -> Result<DemandTimeline, WorkloadError> {
    profile.validate(None)?;
    let mut times: BTreeSet<u64> =
        (0..=profile.horizon_ms / profile.jitter_step_ms).map(|k| k * profile.jitter_step_ms).collect();
    times.insert(profile.horizon_ms);
    for w in &profile.bursts {
        times.extend([w.start_ms, w.hold_start_ms(), w.hold_end_ms(), w.end_ms()]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let j = profile.jitter;
    let points = times
        .into_iter()
        .map(|t| {
            let base = profile.shape_at(t) as f64;
            let noise = if j > 0.0 { rng.random_range(-j..=j) } else { 0.0 };
            let v = (base * (1.0 + noise)).max(0.0) as u64;
            (t, v.min(profile.peak))
        })
        .collect();
    DemandTimeline::new(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsJob {
    #[serde(with = "serde_size")]
    pub dataset_bytes: u64,
    #[serde(with = "serde_size")]
    pub block_size: u64,
    pub iterations: u32,
    /// Executor memory per participating node.
    #[serde(with = "serde_size")]
    pub exec_memory: u64,
    pub compute_ms_per_block: f64,
    /// Indices of participating compute nodes.
    pub nodes: Vec<usize>,
}

impl Default for AnalyticsJob {
    fn default() -> Self {
        Self {
            dataset_bytes: gb(320),
            block_size: 256 * MIB,
            iterations: 10,
            exec_memory: gb(20),
            compute_ms_per_block: 20.0,
            nodes: vec![0, 1, 2, 3],
        }
    }
}

impl AnalyticsJob {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let err = |m: &str| Err(WorkloadError::Job(m.into()));
        if self.iterations == 0 {
            return err("iterations must be at least 1");
        }
        if self.block_size == 0 || self.dataset_bytes == 0 {
            return err("dataset and block size must be positive");
        }
        if self.nodes.is_empty() {
            return err("job needs at least one node");
        }
        if !(self.compute_ms_per_block.is_finite() && self.compute_ms_per_block >= 0.0) {
            return err("compute_ms_per_block must be non-negative");
        }
        let blocks = self.dataset_bytes.div_ceil(self.block_size);
        if blocks < self.nodes.len() as u64 {
            return err("fewer blocks than participating nodes");
        }
        Ok(())
    }

    pub fn block_count(&self) -> u64 {
        self.dataset_bytes.div_ceil(self.block_size)
    }

    /// Contiguous block range scanned by the `slot`-th participating node.
    pub fn partition(&self, slot: usize) -> Range<u64> {
        let n = self.block_count();
        let k = self.nodes.len() as u64;
        let s = slot as u64;
        (s * n / k)..((s + 1) * n / k)
    }
}

/// Execution memory the analytics framework holds on a node.
pub fn exec_footprint(job: &AnalyticsJob, analytics_active: bool) -> u64 {
    if analytics_active {
        job.exec_memory
    } else {
        0
    }
}

/// Wall time for one block: service plus compute, stretched by slowdown.
pub fn block_cost_us(latency_ms: f64, compute_ms: f64, slowdown: f64) -> u64 {
    ((latency_ms + compute_ms) * slowdown * 1000.0).round() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub index: u32,
    pub start_ms: f64,
    pub duration_ms: f64,
    pub per_tier_access_counts: AccessStats,
    pub aborted: bool,
}

/// Runs one barrier-synchronized iteration outside the tick loop.
///
/// Accesses from different nodes are interleaved in time order (ties go to
/// the lower slot). `slowdown(slot, t_us)` is sampled at each access.
pub fn run_iteration(
    job: &AnalyticsJob,
    index: u32,
    tiers: &mut [StorageTier],
    backing: &mut BackingStore,
    start_ms: u64,
    mut slowdown: impl FnMut(usize, u64) -> f64,
) -> Result<IterationReport, WorkloadError> {
    job.validate()?;
    if tiers.len() != job.nodes.len() {
        return Err(WorkloadError::Job("one tier per participating node required".into()));
    }
    let start_us = start_ms * 1000;
    let mut cursors: Vec<(u64, Range<u64>)> = (0..tiers.len()).map(|s| (start_us, job.partition(s))).collect();
    let before: Vec<AccessStats> = tiers.iter().map(|t| *t.stats()).collect();
    loop {
        let next = cursors
            .iter()
            .enumerate()
            .filter(|(_, (_, r))| !r.is_empty())
            .min_by_key(|(slot, (t, _))| (*t, *slot))
            .map(|(slot, _)| slot);
        let Some(slot) = next else { break };
        let (t, range) = &mut cursors[slot];
        let id = BlockId(range.next().expect("non-empty"));
        let r = storage::access(&mut tiers[slot], backing, id, *t / 1000)?;
        *t += block_cost_us(r.latency_ms, job.compute_ms_per_block, slowdown(slot, *t));
    }
    let end_us = cursors.iter().map(|c| c.0).max().unwrap_or(start_us);
    let mut counts = AccessStats::default();
    for (tier, b) in tiers.iter().zip(&before) {
        counts.merge(&tier.stats().since(b));
    }
    Ok(IterationReport {
        index,
        start_ms: start_ms as f64,
        duration_ms: (end_us - start_us) as f64 / 1000.0,
        per_tier_access_counts: counts,
        aborted: false,
    })
}
