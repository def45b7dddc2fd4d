//! Browser bindings for the demo page in `www/`. Every export returns a JSON
//! string; errors come back as `{"error": "..."}`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dynims::control::{fixed_point_capacity, ClosedLoop, ControlParams};
use dynims::runner::run;
use dynims::scenario::preset;
use dynims::sim::{slowdown_factor, SlowdownModel};
use dynims::units::{gb_f, to_gb, GIB};

fn to_json<T: Serialize>(r: Result<T, String>) -> String {
    match r {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| format!("{{\"error\":\"{e}\"}}")),
        Err(e) => serde_json::json!({ "error": e }).to_string(),
    }
}

#[derive(Serialize)]
struct Trajectory {
    fixed_point_gb: f64,
    capacity_gb: Vec<f64>,
}

fn trajectory(lambda: f64, exec_gb: f64, u0_gb: f64, steps: usize) -> Result<impl Serialize, String> {
    let p = ControlParams { lambda, ..ControlParams::default() };
    if !(exec_gb >= 0.0 && u0_gb >= 0.0) {
        return Err("sizes must be non-negative".into());
    }
    let exec = gb_f(exec_gb);
    let fp = fixed_point_capacity(&p, exec).map_err(|e| e.to_string())?;
    let walk = ClosedLoop::new(p, exec, gb_f(u0_gb)).map_err(|e| e.to_string())?;
    Ok(Trajectory { fixed_point_gb: to_gb(fp), capacity_gb: walk.take(steps.min(1000) + 1).map(to_gb).collect() })
}

/// Capacity per control interval for the closed loop `v = exec + u`, with
/// the other parameters at their defaults.
#[wasm_bindgen]
pub fn control_trajectory(lambda: f64, exec_gb: f64, u0_gb: f64, steps: usize) -> String {
    to_json(trajectory(lambda, exec_gb, u0_gb, steps))
}

#[derive(Serialize)]
struct Curve {
    utilization: Vec<f64>,
    slowdown: Vec<f64>,
}

fn curve(swap_pct: f64) -> Curve {
    let m = SlowdownModel::default();
    let utilization: Vec<f64> = (0..=120).map(|k| 0.80 + k as f64 * 0.002).collect();
    let slowdown = utilization.iter().map(|&r| slowdown_factor(&m, r, swap_pct / 100.0)).collect();
    Curve { utilization, slowdown }
}

/// Slowdown factor over utilization 0.80 to 1.04 at a given swap share.
#[wasm_bindgen]
pub fn slowdown_curve(swap_pct: f64) -> String {
    to_json(Ok(curve(swap_pct)))
}

#[derive(Serialize)]
struct PresetRun {
    name: String,
    completion_s: Option<f64>,
    hit_ratio: Option<f64>,
    iterations_s: Vec<f64>,
    t_s: Vec<f64>,
    exec_gb: Vec<f64>,
    storage_gb: Vec<f64>,
    capacity_gb: Vec<f64>,
    total_gb: f64,
}

fn preset_run(name: &str, dataset_gb: f64) -> Result<impl Serialize, String> {
    let mut s = preset(name).map_err(|e| e.to_string())?;
    if let Some(a) = s.analytics.as_mut() {
        if !(dataset_gb > 0.0 && dataset_gb <= 2000.0) {
            return Err("dataset must be in (0, 2000] GB".into());
        }
        a.dataset = gb_f(dataset_gb);
    }
    let out = run(&s).map_err(|e| e.to_string())?;
    let first = out.report.nodes.first().cloned().unwrap_or_default();
    let rows: Vec<_> = out.timeline.iter().filter(|r| r.node_id == first).collect();
    let step = rows.len().div_ceil(400).max(1);
    let pick: Vec<_> = rows.iter().step_by(step).collect();
    Ok(PresetRun {
        name: s.name.clone(),
        completion_s: out.report.job_completion_ms.map(|t| t / 1000.0),
        hit_ratio: out.report.hit_ratio,
        iterations_s: out.report.per_iteration_ms.iter().map(|t| t / 1000.0).collect(),
        t_s: pick.iter().map(|r| r.timestamp_ms as f64 / 1000.0).collect(),
        exec_gb: pick.iter().map(|r| to_gb(r.exec_used)).collect(),
        storage_gb: pick.iter().map(|r| to_gb(r.storage_used)).collect(),
        capacity_gb: pick.iter().map(|r| to_gb(r.storage_capacity)).collect(),
        total_gb: s.cluster.total_memory as f64 / GIB as f64,
    })
}

/// Runs a built-in preset with the given dataset size and returns the
/// summary plus a downsampled timeline of the first node.
#[wasm_bindgen]
pub fn run_preset(name: &str, dataset_gb: f64) -> String {
    to_json(preset_run(name, dataset_gb))
}
