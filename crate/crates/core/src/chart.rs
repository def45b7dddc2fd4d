//! Stacked-area SVG of a timeline CSV: execution, storage and free memory
//! for each node, one panel per node.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::sim::TimelineRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChartError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Point {
    t: u64,
    exec: u64,
    storage: u64,
    free: u64,
}

/// Parses a timeline CSV. The header row is required.
pub fn parse_timeline_csv(text: &str) -> Result<Vec<TimelineRecord>, ChartError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let bad = |reason: String| ChartError::Malformed { line, reason };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if i == 0 {
            let header: Vec<&str> = rec.iter().collect();
            if header != TimelineRecord::HEADER {
                return Err(bad(format!("expected header {}", TimelineRecord::HEADER.join(","))));
            }
            continue;
        }
        if rec.len() != TimelineRecord::HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", TimelineRecord::HEADER.len(), rec.len())));
        }
        let int = |k: usize| {
            rec[k]
                .parse::<u64>()
                .map_err(|_| bad(format!("{}: not an integer: {:?}", TimelineRecord::HEADER[k], &rec[k])))
        };
        let float = |k: usize| {
            rec[k]
                .parse::<f64>()
                .map_err(|_| bad(format!("{}: not a number: {:?}", TimelineRecord::HEADER[k], &rec[k])))
        };
        out.push(TimelineRecord {
            timestamp_ms: int(0)?,
            node_id: rec[1].to_string(),
            exec_used: int(2)?,
            storage_capacity: int(3)?,
            storage_used: int(4)?,
            free: int(5)?,
            swap_used: int(6)?,
            slowdown: float(7)?,
            utilization: float(8)?,
        });
    }
    if out.is_empty() && text.trim().is_empty() {
        return Err(ChartError::Malformed { line: 1, reason: "missing header".into() });
    }
    Ok(out)
}

const WIDTH: f64 = 800.0;
const PANEL_H: f64 = 160.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 110.0;
const GAP: f64 = 40.0;
const MAX_POINTS: usize = 600;
const COLORS: [(&str, &str); 3] = [("exec", "#d9534f"), ("storage", "#337ab7"), ("free", "#cfd8dc")];

fn downsample(points: &[Point]) -> Vec<Point> {
    if points.len() <= MAX_POINTS {
        return points.to_vec();
    }
    let step = points.len().div_ceil(MAX_POINTS);
    let mut out: Vec<Point> = points.iter().step_by(step).copied().collect();
    if out.last() != points.last() {
        out.push(*points.last().unwrap());
    }
    out
}

/// Renders records as a standalone SVG document. An empty timeline gives
/// a single panel with axes only.
pub fn render_svg(records: &[TimelineRecord]) -> String {
    let mut by_node: BTreeMap<&str, Vec<Point>> = BTreeMap::new();
    for r in records {
        by_node.entry(&r.node_id).or_default().push(Point {
            t: r.timestamp_ms,
            exec: r.exec_used,
            storage: r.storage_used,
            free: r.free,
        });
    }
    let t_max = records.iter().map(|r| r.timestamp_ms).max().unwrap_or(0).max(1) as f64;
    let y_max = records.iter().map(|r| r.exec_used + r.storage_used + r.free).max().unwrap_or(0).max(1) as f64;
    let panels = by_node.len().max(1);
    let height = GAP + panels as f64 * (PANEL_H + GAP);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let names: Vec<&str> = if by_node.is_empty() { vec![""] } else { by_node.keys().copied().collect() };
    for (k, name) in names.iter().enumerate() {
        let top = GAP + k as f64 * (PANEL_H + GAP);
        let bottom = top + PANEL_H;
        let x = |t: u64| MARGIN_L + t as f64 / t_max * plot_w;
        let y = |b: u64| bottom - b as f64 / y_max * PANEL_H;
        if let Some(points) = by_node.get(name) {
            let pts = downsample(points);
            let layers: [fn(&Point) -> u64; 3] = [|p| p.exec, |p| p.exec + p.storage, |p| p.exec + p.storage + p.free];
            for (layer, (label, color)) in COLORS.iter().enumerate().rev() {
                let top_of = layers[layer];
                let mut d = String::new();
                for (i, p) in pts.iter().enumerate() {
                    let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, x(p.t), y(top_of(p)));
                }
                for p in pts.iter().rev() {
                    let base = if layer == 0 { 0 } else { layers[layer - 1](p) };
                    let _ = write!(d, "L{:.2},{:.2} ", x(p.t), y(base));
                }
                d.push('Z');
                let _ = writeln!(svg, r#"<path d="{d}" fill="{color}" stroke="none"><title>{label}</title></path>"#);
            }
        }
        let _ = writeln!(
            svg,
            r#"<path d="M{MARGIN_L},{top} V{bottom} H{:.2}" fill="none" stroke="black"/>"#,
            MARGIN_L + plot_w
        );
        let _ = writeln!(svg, r#"<text x="{MARGIN_L}" y="{:.2}">{}</text>"#, top - 6.0, escape(name));
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.0} GB</text>"#,
            MARGIN_L - 4.0,
            top + 4.0,
            y_max / crate::units::GIB as f64
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">0</text>"#, MARGIN_L - 4.0, bottom);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.1} s</text>"#,
            MARGIN_L + plot_w,
            bottom + 14.0,
            t_max / 1000.0
        );
        for (i, (label, color)) in COLORS.iter().enumerate() {
            let ly = top + 12.0 + i as f64 * 16.0;
            let lx = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(svg, r#"<rect x="{lx}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, ly - 9.0);
            let _ = writeln!(svg, r#"<text x="{}" y="{ly:.2}">{label}</text>"#, lx + 14.0);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
