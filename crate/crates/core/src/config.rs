// SPDX-License-Identifier: Apache-2.0

//! System parameterization and its flat sectioned text format.
//!
//! ```text
//! [system]
//! phases = 3
//! v_dc = 600
//!
//! [load]
//! model = coupled-rl
//! r_phase = 110
//! ```
//!
//! `#` starts a comment. List values are comma separated.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::LimiterConfig;
use crate::error::ConfigError;
use crate::modulation::ModulationMode;
use crate::topology::LevelCount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadVariant {
    /// Windings sharing one mutual inductance `coupling_k * l_self`.
    CoupledRL,
    IndependentRL,
    IndependentR,
}

impl LoadVariant {
    fn as_str(self) -> &'static str {
        match self {
            LoadVariant::CoupledRL => "coupled-rl",
            LoadVariant::IndependentRL => "independent-rl",
            LoadVariant::IndependentR => "independent-r",
        }
    }
}

impl FromStr for LoadVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coupled-rl" => Ok(LoadVariant::CoupledRL),
            "independent-rl" => Ok(LoadVariant::IndependentRL),
            "independent-r" => Ok(LoadVariant::IndependentR),
            other => Err(format!("unknown load model `{other}`")),
        }
    }
}

/// Per-phase load, one winding across each sub-module output.
///
/// Every winding is connected only to its own sub-module; a shared neutral
/// would tie the stacked capacitor buses together through the output
/// bridges. Coupling is magnetic only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadModel {
    pub variant: LoadVariant,
    /// Resistance per phase. A single entry applies to every phase.
    pub r_phase: Vec<f64>,
    pub l_self: f64,
    /// Off-diagonal mutual inductance as a fraction of `l_self`. Negative
    /// values give machine-like windings whose zero-sequence inductance
    /// `l_self * (1 + (n - 1) k)` is small.
    pub coupling_k: f64,
}

impl LoadModel {
    pub fn resistance(&self, phase: usize) -> f64 {
        if self.r_phase.len() == 1 {
            self.r_phase[0]
        } else {
            self.r_phase[phase]
        }
    }

    /// Row-major `n x n` inductance matrix.
    pub fn inductance_matrix(&self, n: usize) -> Vec<f64> {
        let (l, m) = match self.variant {
            LoadVariant::IndependentR => (0.0, 0.0),
            LoadVariant::IndependentRL => (self.l_self, 0.0),
            LoadVariant::CoupledRL => (self.l_self, self.coupling_k * self.l_self),
        };
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                out[r * n + c] = if r == c { l } else { m };
            }
        }
        out
    }

    pub fn validate(&self, phases: usize) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::Invalid { key: key.into(), msg });
        if self.r_phase.is_empty() || (self.r_phase.len() != 1 && self.r_phase.len() != phases) {
            return bad("load.r_phase", format!("expected 1 or {phases} values, got {}", self.r_phase.len()));
        }
        if self.r_phase.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad("load.r_phase", "resistances must be finite and >= 0".into());
        }
        match self.variant {
            LoadVariant::IndependentR => {
                if self.r_phase.iter().any(|r| *r <= 0.0) {
                    return bad("load.r_phase", "a purely resistive load needs r_phase > 0".into());
                }
            }
            LoadVariant::IndependentRL | LoadVariant::CoupledRL => {
                if !(self.l_self.is_finite() && self.l_self > 0.0) {
                    return bad("load.l_self", "self inductance must be positive".into());
                }
            }
        }
        if self.variant == LoadVariant::CoupledRL {
            // Equal off-diagonals: eigenvalues l(1 - k) and l(1 + (n - 1) k).
            let k = self.coupling_k;
            let lower = if phases > 1 { -1.0 / (phases as f64 - 1.0) } else { f64::NEG_INFINITY };
            if !(k.is_finite() && k < 1.0 && k > lower) {
                return bad(
                    "load.coupling_k",
                    format!("inductance matrix not positive definite for k = {k} with {phases} phases"),
                );
            }
        }
        Ok(())
    }
}

impl Default for LoadModel {
    fn default() -> Self {
        Self { variant: LoadVariant::CoupledRL, r_phase: vec![110.0], l_self: 1.9, coupling_k: -0.47 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ControlConfig {
    pub mi_limiter: bool,
    pub current_limiter: bool,
    pub torque_limiter: bool,
    pub limiter: LimiterConfig,
}

impl ControlConfig {
    pub fn any_enabled(&self) -> bool {
        self.mi_limiter || self.current_limiter || self.torque_limiter
    }
}

/// A capacitor offset applied before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    /// 1-based phase index.
    pub phase: usize,
    pub delta_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub phases: usize,
    pub levels: LevelCount,
    pub v_dc: f64,
    pub capacitance: f64,
    pub cap_esr: f64,
    pub r_on: f64,
    pub g_off: f64,
    pub source_r: f64,
    pub balance_in_zero: bool,
    pub fundamental_f: f64,
    pub carrier_f: f64,
    pub carrier_phase: f64,
    pub modulation_index: f64,
    pub mode: ModulationMode,
    pub dt: f64,
    pub duration: f64,
    /// Recorder sample period; rounded to a whole number of steps.
    pub sample_period: f64,
    /// Record every step, ignoring `sample_period`.
    pub full_rate: bool,
    pub load: LoadModel,
    pub control: ControlConfig,
    /// Row-major (phase, capacitor) initial voltages; `None` means `v_dc / n`.
    pub initial_cap_voltages: Option<Vec<f64>>,
    pub perturbation: Option<Perturbation>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            phases: 3,
            levels: LevelCount::new(5).expect("5 is a valid level count"),
            v_dc: 600.0,
            capacitance: 220e-6,
            cap_esr: 10e-3,
            r_on: 10e-3,
            g_off: 1e-9,
            source_r: 10e-3,
            balance_in_zero: false,
            fundamental_f: 50.0,
            carrier_f: 10e3,
            carrier_phase: 0.0,
            modulation_index: 1.0,
            mode: ModulationMode::Pwm,
            dt: 1e-6,
            duration: 0.2,
            sample_period: 10e-6,
            full_rate: false,
            load: LoadModel::default(),
            control: ControlConfig::default(),
            initial_cap_voltages: None,
            perturbation: None,
        }
    }
}

impl SystemConfig {
    pub fn nominal_cap_voltage(&self) -> f64 {
        self.v_dc / self.phases as f64
    }

    pub fn capacitors_per_sm(&self) -> usize {
        self.levels.capacitors()
    }

    /// Steps between recorded samples.
    pub fn decimation(&self) -> usize {
        if self.full_rate {
            1
        } else {
            ((self.sample_period / self.dt).round() as usize).max(1)
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: &str| Err(ConfigError::Invalid { key: key.into(), msg: msg.into() });
        if self.phases == 0 {
            return bad("system.phases", "must be at least 1");
        }
        if !(self.v_dc.is_finite() && self.v_dc > 0.0) {
            return bad("system.v_dc", "must be positive");
        }
        if !(self.capacitance.is_finite() && self.capacitance > 0.0) {
            return bad("submodule.capacitance", "must be positive");
        }
        for (key, r) in
            [("submodule.cap_esr", self.cap_esr), ("submodule.r_on", self.r_on), ("system.source_r", self.source_r)]
        {
            if !(r.is_finite() && r >= 0.0) {
                return bad(key, "must be finite and >= 0");
            }
        }
        if self.r_on <= 0.0 {
            return bad("submodule.r_on", "closed switches need a nonzero resistance");
        }
        if !(self.g_off.is_finite() && self.g_off > 0.0) {
            return bad("submodule.g_off", "must be positive");
        }
        if !(self.fundamental_f > 0.0 && self.fundamental_f.is_finite()) {
            return bad("modulation.fundamental_f", "must be positive");
        }
        if self.mode == ModulationMode::Pwm && self.carrier_f < 10.0 * self.fundamental_f {
            return bad("modulation.carrier_f", "must be at least 10x the fundamental");
        }
        if !(self.modulation_index > 0.0 && self.modulation_index <= 1.0) {
            return bad("modulation.modulation_index", "must lie in (0, 1]");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("simulation.dt", "must be positive");
        }
        if self.mode == ModulationMode::Pwm && self.dt > 1.0 / (20.0 * self.carrier_f) * (1.0 + 1e-9) {
            return bad("simulation.dt", "needs at least 20 steps per carrier period");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("simulation.duration", "must be positive");
        }
        if !(self.sample_period > 0.0) {
            return bad("simulation.sample_period", "must be positive");
        }
        self.load.validate(self.phases)?;
        self.control.limiter.validate()?;
        if let Some(v) = &self.initial_cap_voltages {
            let want = self.phases * self.capacitors_per_sm();
            if v.len() != want {
                return Err(ConfigError::Invalid {
                    key: "submodule.initial_cap_voltages".into(),
                    msg: format!("expected {want} values, got {}", v.len()),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad("submodule.initial_cap_voltages", "values must be finite");
            }
        }
        if let Some(p) = &self.perturbation {
            if p.phase == 0 || p.phase > self.phases {
                return bad("simulation.perturb_phase", "phase index out of range");
            }
        }
        Ok(())
    }

    /// Parses the sectioned text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SystemConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies every key found in `text` on top of `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section = String::new();
        let mut perturb_phase: Option<(usize, usize)> = None;
        let mut perturb_dv: Option<(f64, usize)> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                    line: line_no,
                    msg: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Parse { line: line_no, msg: format!("unknown section `[{name}]`") });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if section.is_empty() {
                return Err(ConfigError::Parse { line: line_no, msg: format!("key `{key}` outside any section") });
            }
            let err = |msg: String| ConfigError::Parse { line: line_no, msg };
            let num = || parse_f64(value).map_err(|m| err(format!("{section}.{key}: {m}")));
            let uint = || {
                value
                    .parse::<usize>()
                    .map_err(|_| err(format!("{section}.{key}: expected a non-negative integer, got `{value}`")))
            };
            let boolean = || parse_bool(value).map_err(|m| err(format!("{section}.{key}: {m}")));
            let list = || parse_list(value).map_err(|m| err(format!("{section}.{key}: {m}")));
            match (section.as_str(), key) {
                ("system", "phases") => self.phases = uint()?,
                ("system", "v_dc") => self.v_dc = num()?,
                ("system", "source_r") => self.source_r = num()?,
                ("submodule", "levels") => {
                    let n = uint()?;
                    self.levels = LevelCount::new(n as u32).map_err(|e| err(e.to_string()))?;
                }
                ("submodule", "capacitance") => self.capacitance = num()?,
                ("submodule", "cap_esr") => self.cap_esr = num()?,
                ("submodule", "r_on") => self.r_on = num()?,
                ("submodule", "g_off") => self.g_off = num()?,
                ("submodule", "balance_in_zero") => self.balance_in_zero = boolean()?,
                ("submodule", "initial_cap_voltages") => self.initial_cap_voltages = Some(list()?),
                ("load", "model") => self.load.variant = value.parse().map_err(err)?,
                ("load", "r_phase") => self.load.r_phase = list()?,
                ("load", "l_self") => self.load.l_self = num()?,
                ("load", "coupling_k") => self.load.coupling_k = num()?,
                ("modulation", "mode") => {
                    self.mode = match value {
                        "pwm" => ModulationMode::Pwm,
                        "staircase" => ModulationMode::Staircase,
                        other => return Err(err(format!("unknown modulation mode `{other}`"))),
                    }
                }
                ("modulation", "fundamental_f") => self.fundamental_f = num()?,
                ("modulation", "carrier_f") => self.carrier_f = num()?,
                ("modulation", "carrier_phase") => self.carrier_phase = num()?,
                ("modulation", "modulation_index") => self.modulation_index = num()?,
                ("control", "mi_limiter") => self.control.mi_limiter = boolean()?,
                ("control", "current_limiter") => self.control.current_limiter = boolean()?,
                ("control", "torque_limiter") => self.control.torque_limiter = boolean()?,
                ("control", "deadband") => self.control.limiter.deadband = num()?,
                ("control", "gain") => self.control.limiter.gain = num()?,
                ("control", "floor") => self.control.limiter.floor = num()?,
                ("control", "ceiling") => self.control.limiter.ceiling = num()?,
                ("simulation", "dt") => self.dt = num()?,
                ("simulation", "duration") => self.duration = num()?,
                ("simulation", "sample_period") => self.sample_period = num()?,
                ("simulation", "full_rate") => self.full_rate = boolean()?,
                ("simulation", "perturb_phase") => perturb_phase = Some((uint()?, line_no)),
                ("simulation", "perturb_delta_v") => perturb_dv = Some((num()?, line_no)),
                _ => return Err(err(format!("unknown key `{key}` in [{section}]"))),
            }
        }
        match (perturb_phase, perturb_dv) {
            (Some((phase, _)), Some((delta_v, _))) => self.perturbation = Some(Perturbation { phase, delta_v }),
            (None, None) => {}
            (Some((_, line)), None) | (None, Some((_, line))) => {
                return Err(ConfigError::Parse {
                    line,
                    msg: "perturb_phase and perturb_delta_v must be given together".into(),
                })
            }
        }
        self.validate()
    }

    /// Serializes every field in the sectioned format; `parse` of the output
    /// reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[system]");
        let _ = writeln!(s, "phases = {}", self.phases);
        let _ = writeln!(s, "v_dc = {:?}", self.v_dc);
        let _ = writeln!(s, "source_r = {:?}", self.source_r);
        let _ = writeln!(s, "\n[submodule]");
        let _ = writeln!(s, "levels = {}", self.levels.get());
        let _ = writeln!(s, "capacitance = {:?}", self.capacitance);
        let _ = writeln!(s, "cap_esr = {:?}", self.cap_esr);
        let _ = writeln!(s, "r_on = {:?}", self.r_on);
        let _ = writeln!(s, "g_off = {:?}", self.g_off);
        let _ = writeln!(s, "balance_in_zero = {}", self.balance_in_zero);
        if let Some(v) = &self.initial_cap_voltages {
            let _ = writeln!(s, "initial_cap_voltages = {}", list(v));
        }
        let _ = writeln!(s, "\n[load]");
        let _ = writeln!(s, "model = {}", self.load.variant.as_str());
        let _ = writeln!(s, "r_phase = {}", list(&self.load.r_phase));
        let _ = writeln!(s, "l_self = {:?}", self.load.l_self);
        let _ = writeln!(s, "coupling_k = {:?}", self.load.coupling_k);
        let _ = writeln!(s, "\n[modulation]");
        let mode = match self.mode {
            ModulationMode::Pwm => "pwm",
            ModulationMode::Staircase => "staircase",
        };
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "fundamental_f = {:?}", self.fundamental_f);
        let _ = writeln!(s, "carrier_f = {:?}", self.carrier_f);
        let _ = writeln!(s, "carrier_phase = {:?}", self.carrier_phase);
        let _ = writeln!(s, "modulation_index = {:?}", self.modulation_index);
        let _ = writeln!(s, "\n[control]");
        let _ = writeln!(s, "mi_limiter = {}", self.control.mi_limiter);
        let _ = writeln!(s, "current_limiter = {}", self.control.current_limiter);
        let _ = writeln!(s, "torque_limiter = {}", self.control.torque_limiter);
        let _ = writeln!(s, "deadband = {:?}", self.control.limiter.deadband);
        let _ = writeln!(s, "gain = {:?}", self.control.limiter.gain);
        let _ = writeln!(s, "floor = {:?}", self.control.limiter.floor);
        let _ = writeln!(s, "ceiling = {:?}", self.control.limiter.ceiling);
        let _ = writeln!(s, "\n[simulation]");
        let _ = writeln!(s, "dt = {:?}", self.dt);
        let _ = writeln!(s, "duration = {:?}", self.duration);
        let _ = writeln!(s, "sample_period = {:?}", self.sample_period);
        let _ = writeln!(s, "full_rate = {}", self.full_rate);
        if let Some(p) = &self.perturbation {
            let _ = writeln!(s, "perturb_phase = {}", p.phase);
            let _ = writeln!(s, "perturb_delta_v = {:?}", p.delta_v);
        }
        s
    }

    /// FNV-1a digest of the serialized config, recorded with waveforms.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

const SECTIONS: [&str; 6] = ["system", "submodule", "load", "modulation", "control", "simulation"];

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got `{s}`"))?;
    if !v.is_finite() {
        return Err(format!("value `{s}` is not finite"));
    }
    Ok(v)
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{s}`")),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|p| parse_f64(p.trim())).collect()
}
