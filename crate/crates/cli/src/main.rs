//! `dynims` command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use dynims::chart::{parse_timeline_csv, render_svg};
use dynims::runner::{
    compare, report_json, run_with, sweep, write_intervals_csv, write_iterations_csv, write_jsonl, write_timeline_csv,
    RunError, RunOptions, SweepAxis,
};
use dynims::scenario::{load_scenario, preset_names, preset_source, Scenario};
use dynims::telemetry::{encode_sample, parse_samples_jsonl, replay};
use dynims::units::parse_size;

#[derive(Parser, Debug)]
#[command(name = "dynims", version, about = "Feedback-controlled in-memory storage on a simulated HPC cluster")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Override the simulation tick in milliseconds.
    #[arg(long, global = true)]
    tick_ms: Option<u64>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Exit with status 2 when a node fails.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Jsonl,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario file or preset name.
    Run {
        scenario: String,
        /// Also write every published memory sample as JSON lines.
        #[arg(long)]
        samples: bool,
    },
    /// Run several scenarios and tabulate completion times and speedups.
    Compare {
        #[arg(required = true, num_args = 2..)]
        scenarios: Vec<String>,
    },
    /// Run a scenario once per axis value.
    Sweep {
        /// `lambda` or `dataset_bytes`.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values. Dataset sizes take units, e.g. 80GB.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        scenario: String,
    },
    /// Render a timeline CSV as an SVG chart.
    Chart {
        csv: PathBuf,
        /// Output path; defaults to the input with an .svg extension.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Feed recorded samples through the controller and emit its commands.
    Replay {
        samples: PathBuf,
        /// Scenario supplying the controller parameters.
        #[arg(long, default_value = "config3-dynims")]
        scenario: String,
    },
    /// List built-in presets, or print one.
    Presets { name: Option<String> },
}

/// Exit status 1.
#[derive(Debug)]
struct ConfigError(anyhow::Error);

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Scenario(_) | RunError::Usage(_) => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn config(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Run { scenario, samples } => cmd_run(c, scenario, *samples),
        Command::Compare { scenarios } => cmd_compare(c, scenarios),
        Command::Sweep { axis, values, scenario } => cmd_sweep(c, *axis, values, scenario),
        Command::Chart { csv, output } => cmd_chart(csv, output.as_deref()),
        Command::Replay { samples, scenario } => cmd_replay(c, samples, scenario),
        Command::Presets { name } => cmd_presets(name.as_deref()),
    }
}

fn load(c: &Common, spec: &str) -> Result<Scenario, Failure> {
    let mut s = load_scenario(spec).map_err(config)?;
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    if let Some(t) = c.tick_ms {
        s.tick_ms = t;
    }
    s.validate().map_err(config)?;
    Ok(s)
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().ok_or_else(|| anyhow!("bad output path {}", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.with_context(|| format!("writing {}", path.display()))
}

fn buffer(f: impl FnOnce(&mut Vec<u8>) -> Result<(), RunError>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn cmd_run(c: &Common, spec: &str, samples: bool) -> Result<(), Failure> {
    let s = load(c, spec)?;
    let out = run_with(&s, RunOptions { samples, ..RunOptions::default() })?;
    let dir = &c.out_dir;
    let stem = &s.name;
    let (timeline_name, timeline) = match c.format {
        Format::Csv => ("timeline.csv", buffer(|b| write_timeline_csv(&out.timeline, b))?),
        Format::Jsonl => ("timeline.jsonl", buffer(|b| write_jsonl(&out.timeline, b))?),
    };
    write_atomic(&dir.join(format!("{stem}.{timeline_name}")), &timeline)?;
    let (intervals_name, intervals) = match c.format {
        Format::Csv => ("intervals.csv", buffer(|b| write_intervals_csv(&out.intervals, b))?),
        Format::Jsonl => ("intervals.jsonl", buffer(|b| write_jsonl(&out.intervals, b))?),
    };
    write_atomic(&dir.join(format!("{stem}.{intervals_name}")), &intervals)?;
    write_atomic(&dir.join(format!("{stem}.iterations.csv")), &buffer(|b| write_iterations_csv(&out.report, b))?)?;
    write_atomic(&dir.join(format!("{stem}.events.jsonl")), &buffer(|b| write_jsonl(&out.events, b))?)?;
    write_atomic(&dir.join(format!("{stem}.report.json")), report_json(&out.report).as_bytes())?;
    if samples {
        let text: String = out.samples.iter().map(|m| encode_sample(m) + "\n").collect();
        write_atomic(&dir.join(format!("{stem}.samples.jsonl")), text.as_bytes())?;
    }

    let r = &out.report;
    match r.job_completion_ms {
        Some(t) => println!("{stem}: job finished in {:.3} s", t / 1000.0),
        None if r.job_aborted => println!("{stem}: job aborted after {} ms", r.simulated_ms),
        None => println!("{stem}: simulated {} ms", r.simulated_ms),
    }
    if let Some(h) = r.hit_ratio {
        println!("local hit ratio {h:.3}");
    }
    println!("outputs in {}", dir.display());
    if !r.node_failures.is_empty() {
        eprintln!("node failures: {}", r.node_failures.join(", "));
        if c.strict {
            return Err(Failure::Runtime(anyhow!("node failure under --strict")));
        }
    }
    Ok(())
}

fn cmd_compare(c: &Common, specs: &[String]) -> Result<(), Failure> {
    let scenarios = specs.iter().map(|s| load(c, s)).collect::<Result<Vec<_>, _>>()?;
    let opts = RunOptions { timeline: false, ..RunOptions::default() };
    let mut reports = Vec::new();
    for s in &scenarios {
        reports.push(run_with(s, opts)?.report);
    }
    let cmp = compare(&reports)?;
    print!("{}", cmp.to_table());
    let body = match c.format {
        Format::Csv => {
            let mut s = String::from("scenario,completion_ms,speedup,hit_ratio\n");
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
            for r in &cmp.rows {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    r.scenario,
                    opt(r.completion_ms),
                    opt(r.speedup),
                    opt(r.hit_ratio)
                ));
            }
            s.into_bytes()
        }
        Format::Jsonl => buffer(|b| write_jsonl(&cmp.rows, b))?,
    };
    let ext = if c.format == Format::Csv { "csv" } else { "jsonl" };
    write_atomic(&c.out_dir.join(format!("compare.{ext}")), &body)?;
    strict_failures(c, &reports.iter().flat_map(|r| r.node_failures.clone()).collect::<Vec<_>>())
}

fn strict_failures(c: &Common, failed: &[String]) -> Result<(), Failure> {
    if !failed.is_empty() {
        eprintln!("node failures: {}", failed.join(", "));
        if c.strict {
            return Err(Failure::Runtime(anyhow!("node failure under --strict")));
        }
    }
    Ok(())
}

fn parse_value(axis: SweepAxis, text: &str) -> Result<f64, ConfigError> {
    let text = text.trim();
    match axis {
        SweepAxis::Lambda => text.parse::<f64>().map_err(|_| ConfigError(anyhow!("bad lambda value `{text}`"))),
        SweepAxis::DatasetBytes => {
            parse_size(text).map(|b| b as f64).map_err(|e| ConfigError(anyhow!("bad dataset size `{text}`: {e}")))
        }
    }
}

fn cmd_sweep(c: &Common, axis: SweepAxis, values: &[String], spec: &str) -> Result<(), Failure> {
    let s = load(c, spec)?;
    let values = values.iter().map(|v| parse_value(axis, v)).collect::<Result<Vec<_>, _>>()?;
    let result = sweep(&s, axis, &values)?;
    for (v, why) in &result.skipped {
        eprintln!("skipped {v}: {why}");
    }
    if result.rows.is_empty() {
        return Err(config(anyhow!("no valid sweep values")));
    }
    for row in &result.rows {
        let r = &row.report;
        println!(
            "{:>16} completion {:>10} hit {:>6}",
            row.value,
            r.job_completion_ms.map_or("-".into(), |t| format!("{:.3} s", t / 1000.0)),
            r.hit_ratio.map_or("-".into(), |h| format!("{h:.3}"))
        );
    }
    let axis_name = match axis {
        SweepAxis::Lambda => "lambda",
        SweepAxis::DatasetBytes => "dataset_bytes",
    };
    let (ext, body) = match c.format {
        Format::Csv => ("csv", buffer(|b| result.write_csv(b))?),
        Format::Jsonl => ("jsonl", buffer(|b| write_jsonl(&result.rows, b))?),
    };
    write_atomic(&c.out_dir.join(format!("{}.sweep-{axis_name}.{ext}", s.name)), &body)?;
    strict_failures(c, &result.rows.iter().flat_map(|r| r.report.node_failures.clone()).collect::<Vec<_>>())
}

fn cmd_chart(csv: &Path, output: Option<&Path>) -> Result<(), Failure> {
    let text = fs::read_to_string(csv).with_context(|| format!("reading {}", csv.display())).map_err(config)?;
    let records = parse_timeline_csv(&text).map_err(|e| config(anyhow!("{}: {e}", csv.display())))?;
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("svg"));
    write_atomic(&out, render_svg(&records).as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_replay(c: &Common, samples: &Path, spec: &str) -> Result<(), Failure> {
    let s = load(c, spec)?;
    let text = fs::read_to_string(samples).with_context(|| format!("reading {}", samples.display())).map_err(config)?;
    let parsed =
        parse_samples_jsonl(&text).map_err(|(line, e)| config(anyhow!("{}:{line}: {e}", samples.display())))?;
    let mut log = Vec::new();
    let commands = replay(&s.control_params(), &s.controller_options(), &parsed, &mut log).map_err(config)?;
    let stem = samples.file_stem().map_or("replay".into(), |n| n.to_string_lossy().into_owned());
    write_atomic(&c.out_dir.join(format!("{stem}.commands.jsonl")), &buffer(|b| write_jsonl(&commands, b))?)?;
    write_atomic(&c.out_dir.join(format!("{stem}.decisions.jsonl")), &buffer(|b| write_jsonl(&log, b))?)?;
    println!("{} samples, {} commands", parsed.len(), commands.len());
    Ok(())
}

fn cmd_presets(name: Option<&str>) -> Result<(), Failure> {
    match name {
        None => preset_names().for_each(|n| println!("{n}")),
        Some(n) => print!("{}", preset_source(n).ok_or_else(|| config(anyhow!("unknown preset `{n}`")))?),
    }
    Ok(())
}
