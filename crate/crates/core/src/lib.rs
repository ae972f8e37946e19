// SPDX-License-Identifier: Apache-2.0

//! Simulation and analysis of a series-stacked multiphase multilevel
//! inverter whose sub-modules are switched-capacitor ladders.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod control;
pub mod error;
pub mod exec;
pub mod modulation;
pub mod record;
pub mod scenario;
pub mod solver;
pub mod switching;
pub mod topology;

pub use config::{LoadModel, LoadVariant, SystemConfig};
pub use error::{AnalysisError, ConfigError, SolverError, SwitchingError, TopologyError};
pub use exec::ExecMode;
pub use record::WaveformRecord;
pub use topology::LevelCount;
