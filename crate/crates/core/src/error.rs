// SPDX-License-Identifier: Apache-2.0

//! Error types shared across the crate.

use thiserror::Error;

use crate::switching::{InvariantViolation, ShortReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid level count {0}: must be odd and at least 3")]
    InvalidLevelCount(u32),
    #[error("phase count must be at least 1")]
    InvalidPhaseCount,
    #[error("dc source voltage must be positive and finite, got {0}")]
    InvalidSourceVoltage(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwitchingError {
    #[error("level {level} is outside +/-{max} for this sub-module")]
    InvalidLevel { level: i32, max: i32 },
    #[error("switch vector has {got} entries, expected {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("switch vector violates an invariant: {0}")]
    Invariant(InvariantViolation),
    #[error("switch vector shorts the sub-module: {0}")]
    Short(ShortReport),
    #[error("switch vector does not map to a ladder connection state: {0}")]
    InvalidState(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid parameter `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("singular network at t = {time:.9} s: {detail}")]
    Singular { time: f64, detail: String },
    #[error("invalid perturbation: {0}")]
    InvalidPerturbation(String),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("state dimensions do not match the network: {0}")]
    Dimension(String),
    #[error("at t = {time:.9} s: {source}")]
    Switching {
        time: f64,
        #[source]
        source: SwitchingError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("channel `{0}` not found")]
    MissingChannel(String),
    #[error("analysis window error: {0}")]
    Window(String),
    #[error("fundamental magnitude is zero; ratio undefined")]
    ZeroFundamental,
    #[error("channel never settles; final deviation {final_deviation:.4} ({final_percent:.3} %)")]
    NoSettling { final_deviation: f64, final_percent: f64 },
    #[error("row {row}: {msg}")]
    Csv { row: usize, msg: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<InvariantViolation> for SwitchingError {
    fn from(v: InvariantViolation) -> Self {
        SwitchingError::Invariant(v)
    }
}

impl From<ShortReport> for SwitchingError {
    fn from(r: ShortReport) -> Self {
        SwitchingError::Short(r)
    }
}
