// SPDX-License-Identifier: Apache-2.0

//! `scmmi` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 solver error, 4 analysis
//! error. `MMI_THREADS` caps the worker count for parallel work.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scmmi::analysis::{metrics_report, AnalysisOptions};
use scmmi::exec::{self, ExecMode};
use scmmi::scenario::{self, evaluate, ScenarioError, ScenarioOutcome, ScenarioPreset, PRESET_NAMES};
use scmmi::solver::{run, RecorderSpec, RunSummary};
use scmmi::switching::{CapacitorRole, LadderSubModule, Polarity, StateClass, SwitchVector};
use scmmi::topology::{component_counts, device_ratings, is_boosting, LevelCount};
use scmmi::{SystemConfig, WaveformRecord};

mod plot;

#[derive(Parser)]
#[command(name = "scmmi", version, about = "Switched-capacitor modular multilevel inverter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print component counts, ratings, levels and the switching table.
    Design {
        #[arg(long)]
        levels: u32,
        #[arg(long)]
        phases: usize,
        #[arg(long)]
        vdc: f64,
        /// Also classify every raw gate vector.
        #[arg(long)]
        states: bool,
    },
    /// Run a transient simulation and write its waveforms as CSV.
    Simulate {
        /// Sectioned config file, applied on top of the scenario if both are given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
        scenario: Option<String>,
        /// Run every preset; `--out` names a directory.
        #[arg(long, conflicts_with_all = ["config", "scenario"])]
        all_scenarios: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a metrics report from a CSV waveform file.
    Analyze {
        csv: PathBuf,
        #[arg(long)]
        fundamental_f: f64,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write SVG plots into this directory.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Settling target in volts; defaults to the mean capacitor voltage.
        #[arg(long)]
        settle_target: Option<f64>,
    },
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Solver(String),
    Analysis(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Analysis(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Solver(m) | CliError::Analysis(m) => m,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Solver(e) => CliError::Solver(e.to_string()),
            ScenarioError::Analysis(e) => CliError::Analysis(e.to_string()),
        }
    }
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("MMI_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("MMI_THREADS must be a positive integer, got `{s}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn count_of(n: usize, one: &str, many: &str) -> String {
    format!("{n} {}", if n == 1 { one } else { many })
}

fn role_name(r: CapacitorRole) -> &'static str {
    match r {
        CapacitorRole::OnBus => "bus",
        CapacitorRole::Series => "series",
        CapacitorRole::Parallel => "parallel",
        CapacitorRole::Disconnected => "open",
    }
}

fn gate_bits(v: &SwitchVector) -> String {
    v.states().iter().map(|&on| if on { " 1" } else { " 0" }).collect::<Vec<_>>().join(" ")
}

fn design(levels: u32, phases: usize, v_dc: f64, states: bool) -> Result<(), CliError> {
    let cfg_err = |e: scmmi::TopologyError| CliError::Config(e.to_string());
    let spec = component_counts(levels).map_err(cfg_err)?;
    let ratings = device_ratings(levels, phases, v_dc).map_err(cfg_err)?;
    let boost = is_boosting(levels, phases).map_err(cfg_err)?;
    let sm = LadderSubModule::new(LevelCount::new(levels).map_err(cfg_err)?);

    println!(
        "sub-module: {} levels, {}, {}",
        spec.levels,
        count_of(spec.n_switches, "switch", "switches"),
        count_of(spec.n_capacitors, "capacitor", "capacitors")
    );
    println!("diodes: {} without, {} with, {} either", spec.n_no_diode, spec.n_with_diode, spec.n_any_diode);
    println!("stack: {} on {v_dc} V", count_of(phases, "phase", "phases"));
    println!(
        "ratings: capacitors {} V, ladder switches {} V, bridge switches {} V",
        ratings.capacitor_rating, ratings.inner_switch_rating, ratings.outer_switch_rating
    );
    let lv: Vec<String> = ratings.level_set.iter().map(|v| format!("{v}")).collect();
    println!("levels: {} V", lv.join(" "));
    println!("boost: {}", if boost { "yes" } else { "no" });

    println!();
    let header: Vec<String> = (1..=spec.n_switches).map(|k| format!("S{k}")).collect();
    let caps: Vec<String> = (1..=spec.n_capacitors).map(|k| format!("{:<8}", format!("C{k}"))).collect();
    println!("level  ref  {}   {}", header.join(" "), caps.join(" ").trim_end());
    for (cmd, v) in sm.enumerate_legal_states() {
        let conn = sm.switch_vector_to_connection(&v).map_err(|e| CliError::Config(e.to_string()))?;
        let hint = match cmd.polarity_hint {
            Polarity::Positive => "+",
            Polarity::Negative => "-",
        };
        let roles: Vec<String> = conn.roles.iter().map(|r| format!("{:<8}", role_name(*r))).collect();
        println!("{:>5}  {:>3}  {}   {}", cmd.level, hint, gate_bits(&v), roles.join(" ").trim_end());
    }

    if states {
        let ns = spec.n_switches;
        let classes = exec::map_range(ExecMode::default(), 1 << ns, |bits| {
            match sm.classify(&SwitchVector::from_bits(bits as u64, ns)) {
                Ok(StateClass::Legal(_)) => 0,
                Ok(StateClass::InvariantViolating(_)) => 1,
                _ => 2,
            }
        });
        let count = |k| classes.iter().filter(|&&c| c == k).count();
        println!();
        println!(
            "{} raw vectors: {} legal, {} invariant-violating, {} shorting",
            classes.len(),
            count(0),
            count(1),
            count(2)
        );
    }
    Ok(())
}

fn write_record(rec: &WaveformRecord, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    rec.write_csv(BufWriter::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn print_summary(name: &str, s: &RunSummary) {
    println!(
        "{name}: {:.3} s simulated, {} steps, {} rebuilds, energy residual {:.4} %",
        s.duration,
        s.steps,
        s.rebuilds,
        100.0 * s.energy_residual
    );
}

fn print_checks(o: &ScenarioOutcome) {
    for c in &o.checks {
        println!("  {} {}", if c.passed { "ok  " } else { "miss" }, c.detail);
    }
}

fn simulate(config: Option<PathBuf>, scenario_name: Option<String>, all: bool, out: PathBuf) -> Result<(), CliError> {
    let threads = thread_cap()?;
    if all {
        fs::create_dir_all(&out).map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;
        let presets = scenario::presets();
        let results = exec::with_threads(threads, || scenario::run_presets(&presets, ExecMode::default()));
        for (p, r) in presets.iter().zip(results) {
            let o = r?;
            write_record(&o.record, &out.join(format!("{}.csv", p.name)))?;
            print_summary(p.name, &o.summary);
            print_checks(&o);
        }
        return Ok(());
    }

    let preset: Option<ScenarioPreset> = scenario_name.as_deref().and_then(scenario::preset);
    let mut cfg = preset.as_ref().map_or_else(SystemConfig::default, |p| p.config.clone());
    if let Some(path) = &config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    }
    let name = scenario_name.as_deref().unwrap_or("custom");
    match (&preset, config.is_none()) {
        (Some(p), true) => {
            let o = exec::with_threads(threads, || evaluate(p.name, &p.config, &p.analysis, &p.expected))?;
            write_record(&o.record, &out)?;
            print_summary(name, &o.summary);
            print_checks(&o);
        }
        _ => {
            let o = exec::with_threads(threads, || run(&cfg, &RecorderSpec::from_config(&cfg)))
                .map_err(|e| CliError::Solver(e.to_string()))?;
            write_record(&o.record, &out)?;
            print_summary(name, &o.summary);
        }
    }
    Ok(())
}

fn analyze(
    csv: PathBuf,
    f: f64,
    report: Option<PathBuf>,
    plot_dir: Option<PathBuf>,
    settle_target: Option<f64>,
) -> Result<(), CliError> {
    let threads = thread_cap()?;
    let file = File::open(&csv).map_err(|e| CliError::Analysis(format!("{}: {e}", csv.display())))?;
    let rec = WaveformRecord::read_csv(BufReader::new(file))
        .map_err(|e| CliError::Analysis(format!("{}: {e}", csv.display())))?;
    let opts = AnalysisOptions { settle_target, ..AnalysisOptions::default() };
    let metrics = exec::with_threads(threads, || metrics_report(&rec, f, &opts))
        .map_err(|e| CliError::Analysis(e.to_string()))?;
    let json = metrics.to_json();
    match &report {
        Some(path) => {
            fs::write(path, json + "\n").map_err(|e| CliError::Analysis(format!("{}: {e}", path.display())))?
        }
        None => println!("{json}"),
    }
    if let Some(dir) = plot_dir {
        let written = plot::write_plots(&rec, f, opts.cycles, &dir).map_err(CliError::Analysis)?;
        for p in written {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Design { levels, phases, vdc, states } => design(levels, phases, vdc, states),
        Command::Simulate { config, scenario, all_scenarios, out } => simulate(config, scenario, all_scenarios, out),
        Command::Analyze { csv, fundamental_f, report, plot, settle_target } => {
            analyze(csv, fundamental_f, report, plot, settle_target)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
