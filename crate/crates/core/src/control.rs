// SPDX-License-Identifier: Apache-2.0

//! Supervisory limiters for abnormal operation.
//!
//! All three limiters share one proportional law with a deadband and a
//! clamp. The per-phase deviation is `d = (v_c - v_avg) / v_avg`; outside
//! the deadband the reference is scaled by `clamp(1 + gain * d, floor,
//! ceiling)`. A phase whose capacitor sits above average is asked to draw
//! more, one below average less. The law itself is implementation-defined.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimiterConfig {
    /// Percent.
    pub deadband: f64,
    pub gain: f64,
    pub floor: f64,
    pub ceiling: f64,
}

impl Default for LimiterConfig {
    fn default() -> Self {
        Self { deadband: 2.5, gain: 1.0, floor: 0.8, ceiling: 1.2 }
    }
}

impl LimiterConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ok = self.floor > 0.0
            && self.floor <= 1.0
            && self.ceiling >= 1.0
            && self.ceiling.is_finite()
            && self.deadband >= 0.0
            && self.gain.is_finite();
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Invalid {
                key: "control".into(),
                msg: format!("need 0 < floor <= 1 <= ceiling and deadband >= 0, got {self:?}"),
            })
        }
    }

    /// Multiplicative correction for a capacitor at `v_c` against `v_avg`.
    pub fn correction(&self, v_c: f64, v_avg: f64) -> f64 {
        let d = (v_c - v_avg) / v_avg;
        if d.abs() <= self.deadband / 100.0 {
            1.0
        } else {
            (1.0 + self.gain * d).clamp(self.floor, self.ceiling)
        }
    }
}

/// Per-phase modulation index from the bus capacitor voltages.
pub fn mi_limiter(cap_voltages: &[f64], v_avg: f64, mi_nominal: f64, cfg: &LimiterConfig) -> Vec<f64> {
    cap_voltages.iter().map(|&v| mi_nominal * cfg.correction(v, v_avg)).collect()
}

pub fn current_ref_limiter(i_ref: f64, v_c: f64, v_avg: f64, cfg: &LimiterConfig) -> f64 {
    i_ref * cfg.correction(v_c, v_avg)
}

pub fn torque_ref_limiter(t_ref: f64, v_c: f64, v_avg: f64, cfg: &LimiterConfig) -> f64 {
    t_ref * cfg.correction(v_c, v_avg)
}

/// Sliding mean over a fixed number of samples.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    window: usize,
    buf: VecDeque<f64>,
    sum: f64,
}

impl MovingAverage {
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self { window, buf: VecDeque::with_capacity(window), sum: 0.0 }
    }

    pub fn push(&mut self, x: f64) -> f64 {
        if self.buf.len() == self.window {
            self.sum -= self.buf.pop_front().unwrap_or(0.0);
        }
        self.buf.push_back(x);
        self.sum += x;
        self.mean()
    }

    pub fn mean(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.sum / self.buf.len() as f64
        }
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.window
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn balanced_is_identity() {
        let cfg = LimiterConfig::default();
        assert_eq!(mi_limiter(&[200.0, 200.0, 200.0], 200.0, 0.9, &cfg), vec![0.9; 3]);
        assert_eq!(current_ref_limiter(5.0, 200.0, 200.0, &cfg), 5.0);
        assert_eq!(torque_ref_limiter(7.0, 200.0, 200.0, &cfg), 7.0);
    }

    #[test]
    fn high_phase_gets_larger_index() {
        let cfg = LimiterConfig { gain: 1.0, ceiling: 1.2, ..Default::default() };
        let mi = mi_limiter(&[220.0, 200.0], 200.0, 0.8, &cfg);
        assert_relative_eq!(mi[0], 0.88, epsilon = 1e-12);
        assert_eq!(mi[1], 0.8);
    }

    #[test]
    fn deadband_holds() {
        let cfg = LimiterConfig::default();
        assert_eq!(mi_limiter(&[202.0], 200.0, 0.8, &cfg), vec![0.8]);
        assert_eq!(current_ref_limiter(3.0, 198.0, 200.0, &cfg), 3.0);
        assert_eq!(torque_ref_limiter(3.0, 204.9, 200.0, &cfg), 3.0);
    }

    #[test]
    fn low_phase_reference_reduced() {
        let cfg = LimiterConfig { gain: 1.0, floor: 0.8, ..Default::default() };
        assert_relative_eq!(current_ref_limiter(10.0, 180.0, 200.0, &cfg), 9.0, epsilon = 1e-12);
        assert_relative_eq!(torque_ref_limiter(10.0, 180.0, 200.0, &cfg), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn clamps() {
        let cfg = LimiterConfig::default();
        assert_relative_eq!(cfg.correction(400.0, 200.0), 1.2);
        assert_relative_eq!(cfg.correction(10.0, 200.0), 0.8);
    }

    #[test]
    fn moving_average_window() {
        let mut m = MovingAverage::new(3);
        m.push(1.0);
        m.push(2.0);
        assert!(!m.is_full());
        assert_eq!(m.push(3.0), 2.0);
        assert_eq!(m.push(6.0), 11.0 / 3.0);
    }

    proptest! {
        #[test]
        fn correction_monotone(a in 0.0f64..600.0, b in 0.0f64..600.0, gain in 0.0f64..5.0) {
            let cfg = LimiterConfig { gain, ..Default::default() };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(cfg.correction(lo, 200.0) <= cfg.correction(hi, 200.0) + 1e-15);
        }
    }
}
