//! Discrete-time cluster simulation.
//!
//! Each tick the engine refreshes execution demand on every compute node,
//! rebalances the memory ledger, recomputes slowdown and advances the
//! analytics job. Accesses inside a tick are processed node by node in
//! index order; each node carries its own sub-tick clock so block service
//! times are exact.

mod node;
mod slowdown;

pub use node::{utilization, NodeSpec, NodeState};
pub use slowdown::{slowdown_factor, SlowdownModel};

use serde::{Deserialize, Serialize};

use crate::storage::{
    self, AccessStats, BackingStore, BlockId, Catalog, DataNodeSpec, EvictionSummary, StorageError, StorageTier,
    TierConfig, TierLatencies,
};
use crate::telemetry::CapacityCommand;
use crate::workload::{block_cost_us, exec_footprint, AnalyticsJob, DemandTimeline, IterationReport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("no compute node named `{0}`")]
    UnknownNode(String),
    #[error("capacity {target} for `{node}` outside [0, {max}]")]
    CapacityOutOfRange { node: String, target: u64, max: u64 },
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    pub now_ms: u64,
    pub tick_ms: u64,
}

impl SimClock {
    pub fn new(tick_ms: u64, control_interval_ms: u64) -> Result<Self, SimError> {
        if tick_ms == 0 || !control_interval_ms.is_multiple_of(tick_ms) {
            return Err(SimError::Config(format!(
                "tick {tick_ms} ms must be positive and divide the control interval {control_interval_ms} ms"
            )));
        }
        Ok(Self { now_ms: 0, tick_ms })
    }
}

/// Append-only run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    SwapEngaged { t_ms: u64, node: String, swap_used: u64 },
    SwapReleased { t_ms: u64, node: String },
    NodeFailed { t_ms: u64, node: String, swap_used: u64 },
    CapacityApplied { t_ms: u64, node: String, from: u64, to: u64, evicted_blocks: usize, evicted_bytes: u64 },
    Decision { t_ms: u64, node: String, utilization: f64, capacity: u64, target: u64, issued: bool },
    StaleMetrics { t_ms: u64, node: String },
    IterationFinished { t_ms: u64, index: u32, duration_ms: f64 },
    JobFinished { t_ms: u64 },
    JobAborted { t_ms: u64, reason: String },
}

/// One row of the per-tick timeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub timestamp_ms: u64,
    pub node_id: String,
    pub exec_used: u64,
    pub storage_capacity: u64,
    pub storage_used: u64,
    pub free: u64,
    pub swap_used: u64,
    pub slowdown: f64,
    pub utilization: f64,
}

impl TimelineRecord {
    pub const HEADER: [&'static str; 9] = [
        "timestamp_ms",
        "node_id",
        "exec_used",
        "storage_capacity",
        "storage_used",
        "free",
        "swap_used",
        "slowdown",
        "utilization",
    ];
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub nodes: Vec<NodeSpec>,
    pub initial_capacity: Vec<u64>,
    /// Template for every node's tier; `max_capacity` is replaced by the
    /// node's RAMdisk size.
    pub tier: TierConfig,
    pub data_nodes: Vec<DataNodeSpec>,
    pub latencies: TierLatencies,
    pub slowdown: SlowdownModel,
    /// Swap beyond this fraction of physical memory fails the node.
    pub swap_limit_frac: f64,
    /// Stall charged to a node's analytics work per evicted byte.
    pub eviction_ns_per_byte: f64,
    pub hpc: Vec<Option<DemandTimeline>>,
    pub job: Option<AnalyticsJob>,
    pub tick_ms: u64,
    pub control_interval_ms: u64,
    pub record_timeline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Finished,
    Aborted,
}

#[derive(Debug, Clone)]
struct Slot {
    node: usize,
    next: u64,
    end: u64,
    free_at_us: u64,
}

#[derive(Debug, Clone)]
struct JobRun {
    job: AnalyticsJob,
    slots: Vec<Slot>,
    iteration: u32,
    iter_start_us: u64,
    stats_at_start: AccessStats,
    reports: Vec<IterationReport>,
    status: JobStatus,
    finished_at_us: Option<u64>,
}

impl JobRun {
    fn new(job: AnalyticsJob) -> Self {
        let slots = job
            .nodes
            .iter()
            .enumerate()
            .map(|(slot, &node)| {
                let r = job.partition(slot);
                Slot { node, next: r.start, end: r.end, free_at_us: 0 }
            })
            .collect();
        Self {
            job,
            slots,
            iteration: 0,
            iter_start_us: 0,
            stats_at_start: AccessStats::default(),
            reports: Vec::new(),
            status: JobStatus::Running,
            finished_at_us: None,
        }
    }

    fn runs_on(&self, node: usize) -> bool {
        self.status == JobStatus::Running && self.job.nodes.contains(&node)
    }
}

#[derive(Debug, Clone)]
pub struct Cluster {
    specs: Vec<NodeSpec>,
    states: Vec<NodeState>,
    tiers: Vec<StorageTier>,
    backing: BackingStore,
    hpc: Vec<Option<DemandTimeline>>,
    job: Option<JobRun>,
    clock: SimClock,
    slowdown: SlowdownModel,
    swap_limit_frac: f64,
    eviction_ns_per_byte: f64,
    events: Vec<Event>,
    timeline: Vec<TimelineRecord>,
    record_timeline: bool,
    access_calls: u64,
}

impl Cluster {
    pub fn new(cfg: ClusterConfig) -> Result<Self, SimError> {
        let n = cfg.nodes.len();
        if n == 0 {
            return Err(SimError::Config("at least one compute node".into()));
        }
        if cfg.initial_capacity.len() != n || cfg.hpc.len() != n {
            return Err(SimError::Config("per-node vectors must match the node list".into()));
        }
        for spec in &cfg.nodes {
            spec.validate()?;
        }
        cfg.latencies.validate()?;
        cfg.slowdown.validate().map_err(SimError::Config)?;
        if !(cfg.swap_limit_frac >= 0.0) || !(cfg.eviction_ns_per_byte >= 0.0) {
            return Err(SimError::Config("swap limit and eviction latency must be non-negative".into()));
        }
        let clock = SimClock::new(cfg.tick_ms, cfg.control_interval_ms)?;
        let catalog = match &cfg.job {
            Some(job) => {
                job.validate().map_err(|e| SimError::Config(e.to_string()))?;
                if job.nodes.iter().any(|&i| i >= n) {
                    return Err(SimError::Config("job references a missing node".into()));
                }
                Catalog::uniform(job.dataset_bytes, job.block_size)
            }
            None => Catalog::from_sizes(Vec::new()),
        };
        let backing = BackingStore::new(cfg.data_nodes.clone(), cfg.latencies, catalog);
        let mut tiers = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        for (spec, &cap) in cfg.nodes.iter().zip(&cfg.initial_capacity) {
            if cap > spec.ramdisk_max {
                return Err(SimError::CapacityOutOfRange {
                    node: spec.node_id.clone(),
                    target: cap,
                    max: spec.ramdisk_max,
                });
            }
            let mut tier = StorageTier::new(TierConfig { max_capacity: spec.ramdisk_max, ..cfg.tier.clone() });
            tier.set_capacity(cap);
            tiers.push(tier);
            states.push(NodeState::empty(spec, cap));
        }
        let mut c = Self {
            specs: cfg.nodes,
            states,
            tiers,
            backing,
            hpc: cfg.hpc,
            job: cfg.job.map(JobRun::new),
            clock,
            slowdown: cfg.slowdown,
            swap_limit_frac: cfg.swap_limit_frac,
            eviction_ns_per_byte: cfg.eviction_ns_per_byte,
            events: Vec::new(),
            timeline: Vec::new(),
            record_timeline: cfg.record_timeline,
            access_calls: 0,
        };
        c.refresh_demand(0);
        Ok(c)
    }

    pub fn specs(&self) -> &[NodeSpec] {
        &self.specs
    }

    pub fn states(&self) -> &[NodeState] {
        &self.states
    }

    pub fn tiers(&self) -> &[StorageTier] {
        &self.tiers
    }

    pub fn backing(&self) -> &BackingStore {
        &self.backing
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn push_event(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn timeline(&self) -> &[TimelineRecord] {
        &self.timeline
    }

    pub fn take_timeline(&mut self) -> Vec<TimelineRecord> {
        std::mem::take(&mut self.timeline)
    }

    /// Number of `storage::access` calls made so far.
    pub fn access_calls(&self) -> u64 {
        self.access_calls
    }

    pub fn node_index(&self, node_id: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.node_id == node_id)
    }

    pub fn utilization(&self, node: usize) -> f64 {
        utilization(&self.states[node], &self.specs[node])
    }

    pub fn job_status(&self) -> Option<JobStatus> {
        self.job.as_ref().map(|j| j.status)
    }

    pub fn iteration_reports(&self) -> &[IterationReport] {
        self.job.as_ref().map_or(&[], |j| &j.reports)
    }

    /// Completion instant of the job, in milliseconds.
    pub fn job_completion_ms(&self) -> Option<f64> {
        self.job.as_ref()?.finished_at_us.map(|us| us as f64 / 1000.0)
    }

    /// Local-tier access statistics summed over nodes.
    pub fn total_stats(&self) -> AccessStats {
        let mut s = AccessStats::default();
        for t in &self.tiers {
            s.merge(t.stats());
        }
        s
    }

    pub fn is_done(&self) -> bool {
        matches!(self.job_status(), Some(JobStatus::Finished | JobStatus::Aborted))
    }

    fn analytics_active(&self, node: usize) -> bool {
        self.job.as_ref().is_some_and(|j| j.runs_on(node))
    }

    fn exec_demand(&self, node: usize, t_ms: u64) -> u64 {
        let hpc = self.hpc[node].as_ref().map_or(0, |d| d.value_at(t_ms));
        let fw = self.job.as_ref().map_or(0, |j| exec_footprint(&j.job, j.runs_on(node)));
        hpc + fw
    }

    fn refresh_node(&mut self, i: usize, t_ms: u64) {
        let spec = &self.specs[i];
        let st = &mut self.states[i];
        let had_swap = st.swap_used > 0;
        st.storage_used = self.tiers[i].used();
        st.storage_capacity = self.tiers[i].capacity();
        st.rebalance(spec);
        let r = utilization(st, spec);
        st.slowdown = slowdown_factor(&self.slowdown, r, st.swap_used as f64 / spec.total_m as f64);
        if st.swap_used > 0 && !had_swap {
            self.events.push(Event::SwapEngaged { t_ms, node: spec.node_id.clone(), swap_used: st.swap_used });
        } else if st.swap_used == 0 && had_swap {
            self.events.push(Event::SwapReleased { t_ms, node: spec.node_id.clone() });
        }
        let limit = (spec.total_m as f64 * self.swap_limit_frac) as u64;
        if !st.failed && st.swap_used > limit {
            st.failed = true;
            self.events.push(Event::NodeFailed { t_ms, node: spec.node_id.clone(), swap_used: st.swap_used });
            let node_id = spec.node_id.clone();
            if self.analytics_active(i) {
                self.abort_job(t_ms, format!("node {node_id} failed"));
            }
        }
    }

    fn refresh_demand(&mut self, t_ms: u64) {
        for i in 0..self.specs.len() {
            self.states[i].exec_used = self.exec_demand(i, t_ms);
            self.refresh_node(i, t_ms);
        }
    }

    fn abort_job(&mut self, t_ms: u64, reason: String) {
        let Some(j) = self.job.as_mut() else { return };
        if j.status != JobStatus::Running {
            return;
        }
        let now_us = t_ms * 1000;
        let mut counts = AccessStats::default();
        for t in &self.tiers {
            counts.merge(t.stats());
        }
        j.reports.push(IterationReport {
            index: j.iteration,
            start_ms: j.iter_start_us as f64 / 1000.0,
            duration_ms: now_us.saturating_sub(j.iter_start_us) as f64 / 1000.0,
            per_tier_access_counts: counts.since(&j.stats_at_start),
            aborted: true,
        });
        j.status = JobStatus::Aborted;
        j.finished_at_us = Some(now_us);
        self.events.push(Event::JobAborted { t_ms, reason });
    }

    /// Advances the cluster by one tick.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t1 = self.clock.now_ms + self.clock.tick_ms;
        self.advance_job(t1 * 1000)?;
        self.clock.now_ms = t1;
        self.refresh_demand(t1);
        if self.record_timeline {
            for (spec, st) in self.specs.iter().zip(&self.states) {
                self.timeline.push(TimelineRecord {
                    timestamp_ms: t1,
                    node_id: spec.node_id.clone(),
                    exec_used: st.exec_used,
                    storage_capacity: st.storage_capacity,
                    storage_used: st.storage_used,
                    free: st.free,
                    swap_used: st.swap_used,
                    slowdown: st.slowdown,
                    utilization: utilization(st, spec),
                });
            }
        }
        Ok(())
    }

    fn advance_job(&mut self, horizon_us: u64) -> Result<(), SimError> {
        let Some(mut j) = self.job.take() else { return Ok(()) };
        let result = self.advance_job_inner(&mut j, horizon_us);
        self.job = Some(j);
        result
    }

    fn advance_job_inner(&mut self, j: &mut JobRun, horizon_us: u64) -> Result<(), SimError> {
        while j.status == JobStatus::Running {
            for s in 0..j.slots.len() {
                let node = j.slots[s].node;
                let slowdown = self.states[node].slowdown;
                while j.slots[s].free_at_us < horizon_us && j.slots[s].next < j.slots[s].end {
                    let slot = &mut j.slots[s];
                    let id = BlockId(slot.next);
                    slot.next += 1;
                    let now_ms = slot.free_at_us / 1000;
                    let r = storage::access(&mut self.tiers[node], &mut self.backing, id, now_ms)?;
                    self.access_calls += 1;
                    slot.free_at_us += block_cost_us(r.latency_ms, j.job.compute_ms_per_block, slowdown);
                    self.states[node].storage_used = self.tiers[node].used();
                }
            }
            if j.slots.iter().any(|s| s.next < s.end) {
                return Ok(());
            }
            // Barrier: everyone finished their partition.
            let end_us = j.slots.iter().map(|s| s.free_at_us).max().unwrap_or(j.iter_start_us);
            if end_us > horizon_us {
                // Completion lies in a later tick.
                return Ok(());
            }
            let stats = self.total_stats();
            let duration_ms = (end_us - j.iter_start_us) as f64 / 1000.0;
            j.reports.push(IterationReport {
                index: j.iteration,
                start_ms: j.iter_start_us as f64 / 1000.0,
                duration_ms,
                per_tier_access_counts: stats.since(&j.stats_at_start),
                aborted: false,
            });
            self.events.push(Event::IterationFinished { t_ms: end_us / 1000, index: j.iteration, duration_ms });
            j.iteration += 1;
            if j.iteration >= j.job.iterations {
                j.status = JobStatus::Finished;
                j.finished_at_us = Some(end_us);
                self.events.push(Event::JobFinished { t_ms: end_us / 1000 });
                return Ok(());
            }
            j.iter_start_us = end_us;
            j.stats_at_start = stats;
            for (k, s) in j.slots.iter_mut().enumerate() {
                let r = j.job.partition(k);
                s.next = r.start;
                s.end = r.end;
                s.free_at_us = end_us;
            }
        }
        Ok(())
    }

    /// Halves cached access counts on every node.
    pub fn age_tiers(&mut self) {
        for t in &mut self.tiers {
            t.age();
        }
    }

    /// Applies a capacity command, evicting synchronously when shrinking.
    pub fn apply_capacity(&mut self, command: &CapacityCommand) -> Result<EvictionSummary, SimError> {
        let i = self.node_index(&command.host).ok_or_else(|| SimError::UnknownNode(command.host.clone()))?;
        let max = self.specs[i].ramdisk_max;
        if command.target_capacity > max {
            return Err(SimError::CapacityOutOfRange {
                node: command.host.clone(),
                target: command.target_capacity,
                max,
            });
        }
        let from = self.tiers[i].capacity();
        if from == command.target_capacity {
            return Ok(EvictionSummary::default());
        }
        let summary = self.tiers[i].set_capacity(command.target_capacity);
        if summary.bytes > 0 && self.eviction_ns_per_byte > 0.0 {
            let stall_us = (summary.bytes as f64 * self.eviction_ns_per_byte / 1000.0) as u64;
            if let Some(j) = self.job.as_mut() {
                for s in j.slots.iter_mut().filter(|s| s.node == i) {
                    s.free_at_us += stall_us;
                }
            }
        }
        let t_ms = self.clock.now_ms;
        self.events.push(Event::CapacityApplied {
            t_ms,
            node: command.host.clone(),
            from,
            to: self.tiers[i].capacity(),
            evicted_blocks: summary.evicted.len(),
            evicted_bytes: summary.bytes,
        });
        self.refresh_node(i, t_ms);
        Ok(summary)
    }

    /// Ledger, tier and backing-store consistency.
    pub fn check_invariants(&self) -> Result<(), String> {
        for ((spec, st), tier) in self.specs.iter().zip(&self.states).zip(&self.tiers) {
            st.check(spec)?;
            tier.check_invariants()?;
            if st.storage_used != tier.used() || st.storage_capacity != tier.capacity() {
                return Err(format!("{}: state and tier disagree", spec.node_id));
            }
        }
        self.backing.check_invariants()?;
        if self.total_stats().total() != self.access_calls {
            return Err(format!("access stats {} != calls {}", self.total_stats().total(), self.access_calls));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::CapacityCommand;
    use crate::units::{gb, GIB, MIB};

    fn spec(i: usize) -> NodeSpec {
        NodeSpec { node_id: format!("cn{i}"), total_m: gb(125), reserved: gb(5), ramdisk_max: gb(60), cores: 24 }
    }

    fn config(hpc: Option<DemandTimeline>, job: Option<AnalyticsJob>) -> ClusterConfig {
        ClusterConfig {
            nodes: vec![spec(0)],
            initial_capacity: vec![gb(60)],
            tier: TierConfig::new(gb(60), 256 * MIB),
            data_nodes: vec![DataNodeSpec { buffer_cache: gb(80) }],
            latencies: TierLatencies::default(),
            slowdown: SlowdownModel::default(),
            swap_limit_frac: 0.02,
            eviction_ns_per_byte: 0.0,
            hpc: vec![hpc],
            job,
            tick_ms: 10,
            control_interval_ms: 100,
            record_timeline: true,
        }
    }

    fn fill(c: &mut Cluster, node: usize, bytes: u64) {
        let blocks = bytes / GIB;
        c.tiers[node] = StorageTier::new(TierConfig::new(gb(60), GIB));
        c.tiers[node].set_capacity(c.states[node].storage_capacity);
        for b in 0..blocks {
            c.tiers[node]
                .insert(storage::Block { block_id: BlockId(b), size: GIB, access_count: 1 + b % 3, last_access: b })
                .unwrap();
        }
        c.refresh_node(node, c.clock.now_ms);
    }

    fn cmd(host: &str, target: u64) -> CapacityCommand {
        CapacityCommand::new(host, target, 0)
    }

    #[test]
    fn idle_node_only_advances_clock() {
        let mut c = Cluster::new(config(Some(DemandTimeline::constant(0)), None)).unwrap();
        let before = c.states()[0].clone();
        for _ in 0..5 {
            c.step().unwrap();
        }
        assert_eq!(c.states()[0], before);
        assert_eq!(c.clock().now_ms, 50);
        assert!(c.events().is_empty());
    }

    #[test]
    fn burst_over_full_tier_engages_swap() {
        let trace = DemandTimeline::new(vec![(0, gb(40)), (10, gb(75))]).unwrap();
        let mut c = Cluster::new(config(Some(trace), None)).unwrap();
        fill(&mut c, 0, gb(60));
        c.step().unwrap();
        c.step().unwrap();
        let st = &c.states()[0];
        assert_eq!(st.exec_used, gb(75));
        assert_eq!(st.swap_used, gb(15));
        assert!(c.events().iter().any(|e| matches!(e, Event::SwapEngaged { .. })));
        // 15 GB is far beyond the 2% swap limit.
        assert!(st.failed);
        c.check_invariants().unwrap_or_else(|e| assert!(e.contains("access stats"), "{e}"));
    }

    #[test]
    fn exact_fill_balances() {
        let mut c = Cluster::new(config(Some(DemandTimeline::constant(gb(60))), None)).unwrap();
        fill(&mut c, 0, gb(60));
        c.step().unwrap();
        let st = &c.states()[0];
        assert_eq!((st.free, st.swap_used), (0, 0));
        assert_eq!(c.utilization(0), 1.0);
    }

    #[test]
    fn capacity_commands() {
        let mut c = Cluster::new(config(None, None)).unwrap();
        fill(&mut c, 0, gb(40));
        let s = c.apply_capacity(&cmd("cn0", gb(60))).unwrap();
        assert!(s.evicted.is_empty());

        let s = c.apply_capacity(&cmd("cn0", gb(25))).unwrap();
        assert!(s.bytes >= gb(15));
        assert!(c.states()[0].storage_used <= gb(25));
        assert_eq!(c.states()[0].storage_capacity, gb(25));

        let before = c.states()[0].clone();
        let events = c.events().len();
        c.apply_capacity(&cmd("cn0", gb(25))).unwrap();
        assert_eq!(c.states()[0], before);
        assert_eq!(c.events().len(), events);

        assert!(matches!(c.apply_capacity(&cmd("cn9", 0)), Err(SimError::UnknownNode(_))));
        assert!(matches!(c.apply_capacity(&cmd("cn0", gb(61))), Err(SimError::CapacityOutOfRange { .. })));
    }

    #[test]
    fn job_runs_to_completion() {
        let job = AnalyticsJob {
            dataset_bytes: gb(4),
            block_size: 256 * MIB,
            iterations: 3,
            exec_memory: gb(20),
            compute_ms_per_block: 20.0,
            nodes: vec![0],
        };
        let mut c = Cluster::new(config(None, Some(job))).unwrap();
        while !c.is_done() {
            c.step().unwrap();
            c.check_invariants().unwrap();
        }
        let reports = c.iteration_reports();
        assert_eq!(reports.len(), 3);
        // 16 blocks: cold from disk, then resident.
        assert_eq!(reports[0].duration_ms, 16.0 * 120.0);
        assert_eq!(reports[1].duration_ms, 16.0 * 21.0);
        assert_eq!(reports[2].duration_ms, 16.0 * 21.0);
        assert_eq!(c.job_completion_ms(), Some(16.0 * (120.0 + 42.0)));
        assert_eq!(c.states()[0].exec_used, 0);
    }

    #[test]
    fn tick_must_divide_interval() {
        assert!(SimClock::new(30, 100).is_err());
        assert!(SimClock::new(0, 100).is_err());
        assert!(SimClock::new(20, 100).is_ok());
    }
}
