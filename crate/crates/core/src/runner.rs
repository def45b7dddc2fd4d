//! Scenario execution, comparisons, sweeps and output writers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::control::{stability_summary, StabilitySummary};
use crate::scenario::{Mode, Scenario, ScenarioError};
use crate::sim::{Cluster, Event, JobStatus, SimError, TimelineRecord};
use crate::storage::{byte_hit_ratio, hit_ratio, AccessStats};
use crate::telemetry::{
    aggregate_latest, sample_node, Bus, CapacityCommand, MemoryController, MemorySample, MonitoringAgent,
    TelemetryError,
};
use crate::workload::IterationReport;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("{0}")]
    Usage(String),
    #[error("output: {0}")]
    Output(String),
    #[error("invariant violated at {t_ms} ms: {reason}")]
    Invariant { t_ms: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    /// Dataset size and iteration count; `compare` warns when they differ.
    pub workload: Option<(u64, u32)>,
    pub simulated_ms: u64,
    pub job_completion_ms: Option<f64>,
    pub job_aborted: bool,
    pub per_iteration_ms: Vec<f64>,
    pub hit_ratio: Option<f64>,
    pub byte_hit_ratio: Option<f64>,
    pub access_counts: AccessStats,
    pub nodes: Vec<String>,
    pub mean_utilization: Vec<f64>,
    pub peak_utilization: Vec<f64>,
    pub command_count: u64,
    pub eviction_bytes: u64,
    pub node_failures: Vec<String>,
}

/// Per-node storage statistics at the end of a control interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub timestamp_ms: u64,
    pub node_id: String,
    pub hits_local: u64,
    pub hits_remote_cache: u64,
    pub hits_remote_disk: u64,
    pub storage_used: u64,
    pub storage_capacity: u64,
    pub evicted_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub timeline: bool,
    /// Keep every published sample for export.
    pub samples: bool,
    /// Verify ledger, tier and clamp invariants after every tick.
    pub check_invariants: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { timeline: true, samples: false, check_invariants: false }
    }
}

fn check(cluster: &Cluster, scenario: &Scenario) -> Result<(), RunError> {
    let fail = |reason: String| RunError::Invariant { t_ms: cluster.clock().now_ms, reason };
    cluster.check_invariants().map_err(fail)?;
    if scenario.controller.mode == Mode::Dynamic {
        let (lo, hi) = (scenario.controller.u_min, scenario.controller.u_max);
        for (t, spec) in cluster.tiers().iter().zip(cluster.specs()) {
            if t.capacity() < lo || t.capacity() > hi {
                return Err(fail(format!("{} capacity {} outside [{lo}, {hi}]", spec.node_id, t.capacity())));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub timeline: Vec<TimelineRecord>,
    pub intervals: Vec<IntervalRecord>,
    pub iterations: Vec<IterationReport>,
    pub events: Vec<Event>,
    pub samples: Vec<MemorySample>,
    pub commands: Vec<CapacityCommand>,
}

pub fn run(scenario: &Scenario) -> Result<RunOutput, RunError> {
    run_with(scenario, RunOptions::default())
}

pub fn run_with(scenario: &Scenario, opts: RunOptions) -> Result<RunOutput, RunError> {
    scenario.validate()?;
    let mut cfg = scenario.cluster_config()?;
    cfg.record_timeline = opts.timeline;
    let mut cluster = Cluster::new(cfg)?;
    let hosts = scenario.node_ids();
    let interval = scenario.controller.interval_ms;
    let mut controller = match scenario.controller.mode {
        Mode::Dynamic => Some(MemoryController::new(scenario.control_params(), scenario.controller_options(), &hosts)?),
        _ => None,
    };
    let aging = scenario.analytics.as_ref().and_then(|a| a.aging_interval_ms);
    let mut bus = Bus::default();
    let mut agent = MonitoringAgent::default();
    let mut samples = Vec::new();
    let mut commands = Vec::new();
    let mut intervals = Vec::new();
    let n = hosts.len();
    let mut util_sum = vec![0.0; n];
    let mut util_peak = vec![0.0f64; n];
    let mut ticks = 0u64;
    let mut log = Vec::new();

    while cluster.clock().now_ms < scenario.duration_ms && !cluster.is_done() {
        cluster.step()?;
        if opts.check_invariants {
            check(&cluster, scenario)?;
        }
        let now = cluster.clock().now_ms;
        ticks += 1;
        for i in 0..n {
            let r = cluster.utilization(i);
            util_sum[i] += r;
            util_peak[i] = util_peak[i].max(r);
            let s = sample_node(&cluster.states()[i], &cluster.specs()[i], now);
            if opts.samples {
                samples.push(s.clone());
            }
            agent.publish(&mut bus.metrics, s)?;
        }
        if let Some(period) = aging {
            if now % period == 0 {
                cluster.age_tiers();
            }
        }
        if now % interval != 0 {
            continue;
        }
        let window: Vec<MemorySample> = bus.metrics.drain().into_iter().map(|e| e.payload).collect();
        if let Some(ctl) = controller.as_mut() {
            let aggs: Vec<_> = hosts.iter().map(|h| aggregate_latest(&window, h, now, interval)).collect();
            for c in ctl.control_cycle(now, &aggs, &mut log)? {
                bus.commands.publish(c);
            }
            for c in log.drain(..) {
                cluster.push_event(c);
            }
            while let Some(env) = bus.commands.poll() {
                let c = env.payload;
                if opts.check_invariants
                    && (c.target_capacity < ctl.params().u_min || c.target_capacity > ctl.params().u_max)
                {
                    return Err(RunError::Invariant {
                        t_ms: now,
                        reason: format!("command {} out of range", c.target_capacity),
                    });
                }
                cluster.apply_capacity(&c)?;
                if opts.check_invariants {
                    check(&cluster, scenario)?;
                }
                commands.push(c);
            }
        }
        for (i, t) in cluster.tiers().iter().enumerate() {
            let s = t.stats();
            intervals.push(IntervalRecord {
                timestamp_ms: now,
                node_id: hosts[i].clone(),
                hits_local: s.hits_local,
                hits_remote_cache: s.hits_remote_cache,
                hits_remote_disk: s.hits_remote_disk,
                storage_used: t.used(),
                storage_capacity: t.capacity(),
                evicted_bytes: t.evicted_bytes(),
            });
        }
    }

    let stats = cluster.total_stats();
    let report = RunReport {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        workload: scenario.job().map(|j| (j.dataset_bytes, j.iterations)),
        simulated_ms: cluster.clock().now_ms,
        job_completion_ms: match cluster.job_status() {
            Some(JobStatus::Finished) => cluster.job_completion_ms(),
            _ => None,
        },
        job_aborted: cluster.job_status() == Some(JobStatus::Aborted),
        per_iteration_ms: cluster.iteration_reports().iter().map(|r| r.duration_ms).collect(),
        hit_ratio: hit_ratio(&stats).ok(),
        byte_hit_ratio: byte_hit_ratio(&stats).ok(),
        access_counts: stats,
        nodes: hosts.clone(),
        mean_utilization: util_sum.iter().map(|s| if ticks > 0 { s / ticks as f64 } else { 0.0 }).collect(),
        peak_utilization: util_peak,
        command_count: commands.len() as u64,
        eviction_bytes: cluster.tiers().iter().map(|t| t.evicted_bytes()).sum(),
        node_failures: hosts.iter().zip(cluster.states()).filter(|(_, s)| s.failed).map(|(h, _)| h.clone()).collect(),
    };
    Ok(RunOutput {
        report,
        timeline: cluster.take_timeline(),
        intervals,
        iterations: cluster.iteration_reports().to_vec(),
        events: cluster.events().to_vec(),
        samples,
        commands,
    })
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn write_timeline_csv<W: Write>(records: &[TimelineRecord], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| RunError::Output(e.to_string());
    w.write_record(TimelineRecord::HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.timestamp_ms.to_string(),
            r.node_id.clone(),
            r.exec_used.to_string(),
            r.storage_capacity.to_string(),
            r.storage_used.to_string(),
            r.free.to_string(),
            r.swap_used.to_string(),
            f6(r.slowdown),
            f6(r.utilization),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| RunError::Output(e.to_string()))
}

pub fn write_intervals_csv<W: Write>(records: &[IntervalRecord], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| RunError::Output(e.to_string()))?;
    }
    w.flush().map_err(|e| RunError::Output(e.to_string()))
}

pub fn write_iterations_csv<W: Write>(report: &RunReport, out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| RunError::Output(e.to_string());
    w.write_record(["iteration", "duration_ms"]).map_err(err)?;
    for (i, d) in report.per_iteration_ms.iter().enumerate() {
        w.write_record([(i + 1).to_string(), f6(*d)]).map_err(err)?;
    }
    w.flush().map_err(|e| RunError::Output(e.to_string()))
}

/// One JSON document per line.
pub fn write_jsonl<W: Write, T: Serialize>(items: &[T], mut out: W) -> Result<(), RunError> {
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| RunError::Output(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| RunError::Output(e.to_string()))?;
    }
    Ok(())
}

pub fn report_json(report: &RunReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub completion_ms: Option<f64>,
    /// Slowest completion time over this one.
    pub speedup: Option<f64>,
    pub hit_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub warnings: Vec<String>,
}

pub fn compare(reports: &[RunReport]) -> Result<Comparison, RunError> {
    if reports.len() < 2 {
        return Err(RunError::Usage("compare needs at least two reports".into()));
    }
    let mut warnings = Vec::new();
    let first = reports[0].workload;
    for r in &reports[1..] {
        if r.workload != first {
            warnings.push(format!("{}: workload differs from {}", r.scenario, reports[0].scenario));
        }
    }
    for r in reports.iter().filter(|r| r.job_completion_ms.is_none()) {
        warnings.push(format!("{}: job did not complete", r.scenario));
    }
    let slowest = reports.iter().filter_map(|r| r.job_completion_ms).fold(f64::NAN, f64::max);
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            scenario: r.scenario.clone(),
            completion_ms: r.job_completion_ms,
            speedup: r.job_completion_ms.filter(|&t| t > 0.0).map(|t| slowest / t),
            hit_ratio: r.hit_ratio,
        })
        .collect();
    Ok(Comparison { rows, warnings })
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<24} {:>14} {:>8} {:>9}\n", "scenario", "completion_s", "speedup", "hit_ratio");
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>14} {:>8} {:>9}\n",
                r.scenario,
                opt(r.completion_ms.map(|t| t / 1000.0), 3),
                opt(r.speedup, 3),
                opt(r.hit_ratio, 3)
            ));
        }
        for w in &self.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    DatasetBytes,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "dataset" | "dataset_bytes" => Ok(SweepAxis::DatasetBytes),
            other => Err(format!("unknown sweep axis `{other}` (lambda, dataset_bytes)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: RunReport,
    pub stability: Option<StabilitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<(f64, String)>,
}

/// Scenario with one axis value applied.
pub fn apply_axis(base: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario, ScenarioError> {
    let mut s = base.clone();
    match axis {
        SweepAxis::Lambda => s.controller.lambda = value,
        SweepAxis::DatasetBytes => {
            let a = s.analytics.as_mut().ok_or_else(|| ScenarioError::Invalid {
                field: "analytics".into(),
                reason: "dataset sweep needs an analytics section".into(),
            })?;
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::Invalid {
                    field: "analytics.dataset".into(),
                    reason: format!("bad size {value}"),
                });
            }
            a.dataset = value as u64;
        }
    }
    s.validate()?;
    Ok(s)
}

/// Closed-loop summary for the scenario's heaviest steady load: reserved
/// memory, HPC peak and executor all resident.
pub fn lambda_stability(s: &Scenario) -> Result<StabilitySummary, RunError> {
    let p = s.control_params();
    let exec =
        s.cluster.reserved + s.hpc.as_ref().map_or(0, |h| h.peak) + s.analytics.as_ref().map_or(0, |a| a.exec_memory);
    let tol = s.cluster.total_memory / 100;
    stability_summary(&p, exec, p.u_max, 200, tol).map_err(|e| RunError::Usage(e.to_string()))
}

fn sweep_one(base: &Scenario, axis: SweepAxis, value: f64) -> Result<SweepRow, String> {
    let s = apply_axis(base, axis, value).map_err(|e| e.to_string())?;
    let out = run_with(&s, RunOptions { timeline: false, ..RunOptions::default() }).map_err(|e| e.to_string())?;
    let stability = match axis {
        SweepAxis::Lambda => Some(lambda_stability(&s).map_err(|e| e.to_string())?),
        SweepAxis::DatasetBytes => None,
    };
    Ok(SweepRow { value, report: out.report, stability })
}

/// Runs one scenario per value. Rows come back sorted by value whatever
/// the input order; values that fail validation are skipped and listed.
pub fn sweep(base: &Scenario, axis: SweepAxis, values: &[f64]) -> Result<SweepResult, RunError> {
    if values.is_empty() {
        return Err(RunError::Usage("sweep needs at least one value".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        sorted.par_iter().map(|&v| (v, sweep_one(base, axis, v))).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = sorted.iter().map(|&v| (v, sweep_one(base, axis, v))).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (v, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => skipped.push((v, e)),
        }
    }
    Ok(SweepResult { axis, rows, skipped })
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RunError> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| RunError::Output(e.to_string());
        w.write_record([
            "value",
            "completion_ms",
            "hit_ratio",
            "iterations",
            "command_count",
            "eviction_bytes",
            "settling_intervals",
            "max_overshoot",
        ])
        .map_err(err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), f6);
        for row in &self.rows {
            let r = &row.report;
            w.write_record([
                f6(row.value),
                opt(r.job_completion_ms),
                opt(r.hit_ratio),
                r.per_iteration_ms.len().to_string(),
                r.command_count.to_string(),
                r.eviction_bytes.to_string(),
                row.stability.as_ref().and_then(|s| s.settling_intervals).map_or(String::new(), |v| v.to_string()),
                row.stability.as_ref().map_or(String::new(), |s| s.max_overshoot.to_string()),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| RunError::Output(e.to_string()))
    }
}
