use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dynims(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynims")).current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const SMALL: &str = r#"
name = "small"
seed = 3
duration_ms = 60000

[cluster]
compute_nodes = 2
total_memory = "32GB"
reserved = "2GB"
ramdisk_max = "12GB"
data_nodes = 1
buffer_cache = "4GB"

[controller]
mode = "dynamic"
u_max = "12GB"

[hpc]
baseline = "8GB"
peak = "20GB"
jitter = 0.02

[[hpc.bursts]]
start_ms = 2000
ramp_ms = 1000
hold_ms = 3000
fall_ms = 1000

[analytics]
dataset = "8GB"
iterations = 3
exec_memory = "2GB"
"#;

fn small(dir: &Path) -> String {
    let p = dir.join("small.toml");
    fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&dynims(d.path(), &["--help"])), 0);
    assert_eq!(code(&dynims(d.path(), &["--version"])), 0);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&dynims(d.path(), &[])), 1);
    assert_eq!(code(&dynims(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&dynims(d.path(), &["run", "no-such-scenario"])), 1);
    assert_eq!(code(&dynims(d.path(), &["run", "config3-dynims", "--tick-ms", "7"])), 1);
    assert_eq!(code(&dynims(d.path(), &["compare", "config3-dynims"])), 1);
    fs::write(d.path().join("bad.toml"), "name = \"x\"\nbogus = 1\n").unwrap();
    let o = dynims(d.path(), &["run", "bad.toml"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn run_writes_outputs_and_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    let s = small(d.path());
    for out in ["a", "b"] {
        let o = dynims(d.path(), &["run", &s, "--out-dir", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["timeline.csv", "intervals.csv", "iterations.csv", "events.jsonl", "report.json"] {
        let a = fs::read(d.path().join("a").join(format!("small.{f}"))).unwrap();
        let b = fs::read(d.path().join("b").join(format!("small.{f}"))).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f}");
    }
    let timeline = fs::read_to_string(d.path().join("a/small.timeline.csv")).unwrap();
    assert_eq!(
        timeline.lines().next().unwrap(),
        "timestamp_ms,node_id,exec_used,storage_capacity,storage_used,free,swap_used,slowdown,utilization"
    );
    let leftovers = fs::read_dir(d.path().join("a"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains(".tmp"));
    assert_eq!(leftovers.count(), 0);
}

#[test]
fn seed_flag_changes_the_run() {
    let d = tempfile::tempdir().unwrap();
    let s = small(d.path());
    dynims(d.path(), &["run", &s, "--out-dir", "a"]);
    dynims(d.path(), &["run", &s, "--out-dir", "b", "--seed", "4"]);
    let a = fs::read(d.path().join("a/small.timeline.csv")).unwrap();
    let b = fs::read(d.path().join("b/small.timeline.csv")).unwrap();
    assert!(a != b);
}

#[test]
fn jsonl_format() {
    let d = tempfile::tempdir().unwrap();
    let s = small(d.path());
    assert_eq!(code(&dynims(d.path(), &["run", &s, "--format", "jsonl"])), 0);
    let text = fs::read_to_string(d.path().join("out/small.timeline.jsonl")).unwrap();
    let first = text.lines().next().unwrap();
    assert!(first.starts_with('{') && first.contains("\"utilization\":"), "{first}");
}

#[test]
fn node_failure_is_exit_two_only_when_strict() {
    let d = tempfile::tempdir().unwrap();
    let heavy = SMALL.replace("peak = \"20GB\"", "peak = \"31GB\"").replace("start_ms = 2000", "start_ms = 0");
    fs::write(d.path().join("heavy.toml"), heavy).unwrap();
    let lax = dynims(d.path(), &["run", "heavy.toml"]);
    assert_eq!(code(&lax), 0, "{}", String::from_utf8_lossy(&lax.stderr));
    assert!(String::from_utf8_lossy(&lax.stderr).contains("node failures"));
    assert_eq!(code(&dynims(d.path(), &["run", "heavy.toml", "--strict"])), 2);
    assert!(d.path().join("out/small.report.json").exists());
}

#[test]
fn compare_and_sweep() {
    let d = tempfile::tempdir().unwrap();
    let s = small(d.path());
    let o = dynims(d.path(), &["compare", &s, &s]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(table.matches(" 1.000 ").count(), 2, "{table}");
    assert!(d.path().join("out/compare.csv").exists());

    let o = dynims(d.path(), &["sweep", "--axis", "dataset_bytes", "--values", "8GB,4GB", &s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.path().join("out/small.sweep-dataset_bytes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("4294967296"));

    let o = dynims(d.path(), &["sweep", "--axis", "lambda", "--values", "0.5,-2", &s]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipped -2"));
    assert_eq!(code(&dynims(d.path(), &["sweep", "--axis", "speed", "--values", "1", &s])), 1);
    assert_eq!(code(&dynims(d.path(), &["sweep", "--axis", "dataset", "--values", "lots", &s])), 1);
}

#[test]
fn chart_from_run_output() {
    let d = tempfile::tempdir().unwrap();
    let s = small(d.path());
    dynims(d.path(), &["run", &s]);
    let o = dynims(d.path(), &["chart", "out/small.timeline.csv", "-o", "chart.svg"]);
    assert_eq!(code(&o), 0);
    let svg = fs::read_to_string(d.path().join("chart.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<title>").count(), 6);

    fs::write(d.path().join("broken.csv"), "timestamp_ms\n1\n").unwrap();
    let o = dynims(d.path(), &["chart", "broken.csv"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn replay_reproduces_online_decisions() {
    let d = tempfile::tempdir().unwrap();
    let s = small(d.path());
    assert_eq!(code(&dynims(d.path(), &["run", &s, "--samples"])), 0);
    let o = dynims(d.path(), &["replay", "out/small.samples.jsonl", "--scenario", &s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let online: Vec<String> = fs::read_to_string(d.path().join("out/small.events.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"kind\":\"decision\""))
        .map(String::from)
        .collect();
    let replayed: Vec<String> = fs::read_to_string(d.path().join("out/small.samples.decisions.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"kind\":\"decision\""))
        .map(String::from)
        .collect();
    assert!(!online.is_empty());
    assert_eq!(online[..], replayed[..online.len()]);

    fs::write(d.path().join("bad.jsonl"), "{\"host\":\"a\",\"timestamp_ms\":-1}\n").unwrap();
    let o = dynims(d.path(), &["replay", "bad.jsonl"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("timestamp_ms"));
}

#[test]
fn presets_listed_and_printed() {
    let d = tempfile::tempdir().unwrap();
    let o = dynims(d.path(), &["presets"]);
    let names = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(names.lines().count(), 4);
    let o = dynims(d.path(), &["presets", "config3-dynims"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mode = \"dynamic\""));
    assert_eq!(code(&dynims(d.path(), &["presets", "nope"])), 1);
}
