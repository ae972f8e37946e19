// SPDX-License-Identifier: Apache-2.0

//! Named scenario presets and the metrics each one is expected to meet.

use serde::Serialize;

use crate::analysis::{cycle_average, metrics_report, samples_per_period, AnalysisOptions, MetricsReport};
use crate::config::{LoadModel, LoadVariant, Perturbation, SystemConfig};
use crate::error::{AnalysisError, SolverError};
use crate::exec::{self, ExecMode};
use crate::record::WaveformRecord;
use crate::solver::{run, RecorderSpec, RunSummary};
use crate::topology::{voltage_levels, LevelCount};

pub const PRESET_NAMES: [&str; 4] = ["five-level-steady", "seven-level-steady", "perturbation", "imbalanced-load"];

/// A check a preset's output must pass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expectation {
    /// Every capacitor's window mean within `tol_percent` of `target` volts.
    CapMean {
        target: f64,
        tol_percent: f64,
    },
    /// Every capacitor's peak-to-peak ripple at most `max_percent` of its mean.
    CapRipple {
        max_percent: f64,
    },
    /// Each phase voltage dwells on exactly these levels, each within `tol` volts.
    PhaseLevels {
        levels: Vec<f64>,
        tol: f64,
    },
    /// Cycle-averaged capacitors settle within the band by `max_seconds`.
    SettlesWithin {
        max_seconds: f64,
    },
    EnergyResidual {
        max_percent: f64,
    },
    /// Cycle-averaged capacitors move less than `max_drift` volts over the
    /// final `window` seconds.
    Stationary {
        window: f64,
        max_drift: f64,
    },
    /// Triplen content of every phase voltage below `max`.
    Triplen {
        max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub expectation: Expectation,
    pub passed: bool,
    pub detail: String,
}

impl Expectation {
    pub fn check(&self, report: &MetricsReport, rec: &WaveformRecord) -> CheckResult {
        let (passed, detail) = match self.evaluate(report, rec) {
            Ok(r) => r,
            Err(e) => (false, e.to_string()),
        };
        CheckResult { expectation: self.clone(), passed, detail }
    }

    fn evaluate(&self, report: &MetricsReport, rec: &WaveformRecord) -> Result<(bool, String), AnalysisError> {
        Ok(match self {
            Expectation::CapMean { target, tol_percent } => {
                let worst =
                    report.capacitors().map(|c| 100.0 * (c.mean.value - target).abs() / target).fold(0.0, f64::max);
                (worst <= *tol_percent, format!("worst mean deviation {worst:.3} % of {target:.2} V"))
            }
            Expectation::CapRipple { max_percent } => {
                let worst = report.capacitors().map(|c| c.ripple_percent.value).fold(0.0, f64::max);
                (worst <= *max_percent, format!("worst ripple {worst:.3} %"))
            }
            Expectation::PhaseLevels { levels, tol } => {
                let mut ok = !report.phases.is_empty();
                let mut worst = 0.0f64;
                for p in &report.phases {
                    let got = &report.channel(&p.channel).expect("phase channel has metrics").levels;
                    ok &= got.len() == levels.len();
                    for (g, want) in got.iter().zip(levels) {
                        worst = worst.max((g.value - want).abs());
                    }
                }
                ok &= worst <= *tol;
                (ok, format!("{} levels expected, worst offset {worst:.2} V", levels.len()))
            }
            Expectation::SettlesWithin { max_seconds } => match &report.settling {
                Some(s) => match s.time {
                    Some(t) => (t.value <= *max_seconds, format!("{} settles at {:.1} ms", s.channel, 1e3 * t.value)),
                    None => (false, format!("{} never settles", s.channel)),
                },
                None => (false, "no settling event in record".into()),
            },
            Expectation::EnergyResidual { max_percent } => match report.energy_residual {
                Some(r) => (r.value < *max_percent, format!("residual {:.4} %", r.value)),
                None => (false, "energy channels missing".into()),
            },
            Expectation::Stationary { window, max_drift } => {
                let drift = stationary_drift(rec, report.fundamental_f.value, *window)?;
                (drift < *max_drift, format!("drift {drift:.4} V over {window} s"))
            }
            Expectation::Triplen { max } => {
                let worst = report.phases.iter().map(|p| p.triplen.value).fold(0.0, f64::max);
                (!report.phases.is_empty() && worst < *max, format!("worst triplen {worst:.4}"))
            }
        })
    }
}

/// Largest change of any cycle-averaged capacitor voltage over the final
/// `window` seconds.
pub fn stationary_drift(rec: &WaveformRecord, f: f64, window: f64) -> Result<f64, AnalysisError> {
    let per = samples_per_period(rec.sample_period, f)?;
    let span = (window / rec.sample_period).round() as usize;
    let mut worst = 0.0f64;
    for ch in rec.channels.iter().filter(|c| c.name.starts_with("V_C")) {
        let avg = cycle_average(&ch.samples, per);
        if span + per > avg.len() {
            return Err(AnalysisError::Window(format!("record too short for a {window} s drift window")));
        }
        let tail = &avg[avg.len() - span..];
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        worst = worst.max(hi - lo);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: SystemConfig,
    pub analysis: AnalysisOptions,
    pub expected: Vec<Expectation>,
}

fn five_level() -> SystemConfig {
    SystemConfig::default()
}

fn seven_level() -> SystemConfig {
    SystemConfig {
        levels: LevelCount::new(7).expect("7 is a valid level count"),
        v_dc: 400.0,
        ..SystemConfig::default()
    }
}

pub fn preset(name: &str) -> Option<ScenarioPreset> {
    let residual = Expectation::EnergyResidual { max_percent: 0.5 };
    Some(match name {
        "five-level-steady" => ScenarioPreset {
            name: "five-level-steady",
            description: "600 V source, three five-level sub-modules, coupled RL load",
            config: five_level(),
            analysis: AnalysisOptions::default(),
            expected: vec![
                Expectation::CapMean { target: 200.0, tol_percent: 2.0 },
                Expectation::CapRipple { max_percent: 5.0 },
                Expectation::PhaseLevels { levels: voltage_levels(5, 3, 600.0).expect("valid"), tol: 15.0 },
                Expectation::Triplen { max: 0.03 },
                residual,
            ],
        },
        "seven-level-steady" => ScenarioPreset {
            name: "seven-level-steady",
            description: "400 V source, three seven-level sub-modules, coupled RL load",
            config: seven_level(),
            analysis: AnalysisOptions::default(),
            expected: vec![
                Expectation::CapMean { target: 400.0 / 3.0, tol_percent: 2.0 },
                Expectation::CapRipple { max_percent: 4.0 },
                Expectation::PhaseLevels { levels: voltage_levels(7, 3, 400.0).expect("valid"), tol: 15.0 },
                residual,
            ],
        },
        "perturbation" => ScenarioPreset {
            name: "perturbation",
            description: "five-level stack with phase 1 capacitors starting at 300 V",
            config: SystemConfig {
                duration: 0.4,
                perturbation: Some(Perturbation { phase: 1, delta_v: 100.0 }),
                ..five_level()
            },
            analysis: AnalysisOptions { settle_target: Some(200.0), ..Default::default() },
            expected: vec![
                Expectation::SettlesWithin { max_seconds: 0.2 },
                Expectation::CapMean { target: 200.0, tol_percent: 2.0 },
                residual,
            ],
        },
        "imbalanced-load" => ScenarioPreset {
            name: "imbalanced-load",
            description: "five-level stack on unequal independent resistors, phase 1 starting 10 % high",
            config: SystemConfig {
                duration: 0.5,
                modulation_index: 0.8,
                load: LoadModel {
                    variant: LoadVariant::IndependentR,
                    r_phase: vec![100.0, 120.0, 140.0],
                    l_self: 0.0,
                    coupling_k: 0.0,
                },
                perturbation: Some(Perturbation { phase: 1, delta_v: 20.0 }),
                ..five_level()
            },
            analysis: AnalysisOptions::default(),
            expected: vec![Expectation::Stationary { window: 0.1, max_drift: 1.0 }, residual],
        },
        _ => return None,
    })
}

pub fn presets() -> Vec<ScenarioPreset> {
    PRESET_NAMES.iter().map(|n| preset(n).expect("listed preset exists")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub name: String,
    pub record: WaveformRecord,
    pub summary: RunSummary,
    pub report: MetricsReport,
    pub checks: Vec<CheckResult>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Simulates `config`, analyzes the record and checks `expected`.
pub fn evaluate(
    name: &str,
    config: &SystemConfig,
    analysis: &AnalysisOptions,
    expected: &[Expectation],
) -> Result<ScenarioOutcome, ScenarioError> {
    let out = run(config, &RecorderSpec::from_config(config))?;
    let report = metrics_report(&out.record, config.fundamental_f, analysis)?;
    let checks = expected.iter().map(|e| e.check(&report, &out.record)).collect();
    Ok(ScenarioOutcome { name: name.to_string(), record: out.record, summary: out.summary, report, checks })
}

pub fn run_preset(p: &ScenarioPreset) -> Result<ScenarioOutcome, ScenarioError> {
    evaluate(p.name, &p.config, &p.analysis, &p.expected)
}

/// Runs independent presets, in parallel when `mode` allows.
pub fn run_presets(presets: &[ScenarioPreset], mode: ExecMode) -> Vec<Result<ScenarioOutcome, ScenarioError>> {
    // Each run already parallelizes its channel analysis; keep that sequential here.
    exec::map(mode, presets, |p| {
        let analysis = AnalysisOptions { mode: ExecMode::Sequential, ..p.analysis.clone() };
        evaluate(p.name, &p.config, &analysis, &p.expected)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_named() {
        for p in presets() {
            p.config.validate().unwrap();
            assert!(PRESET_NAMES.contains(&p.name));
            assert!(!p.expected.is_empty());
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn presets_keep_reference_parameters() {
        for p in presets() {
            let c = &p.config;
            assert_eq!(c.capacitance, 220e-6);
            assert_eq!(c.cap_esr, 10e-3);
            assert_eq!(c.r_on, 10e-3);
            assert_eq!(c.phases, 3);
        }
        let s = preset("seven-level-steady").unwrap().config;
        assert_eq!((s.levels.get(), s.v_dc), (7, 400.0));
        let f = preset("five-level-steady").unwrap().config;
        assert_eq!((f.levels.get(), f.v_dc), (5, 600.0));
    }
}
