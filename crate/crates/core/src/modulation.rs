// SPDX-License-Identifier: Apache-2.0

//! Phase references and their conversion into level commands.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::switching::{LevelCommand, Polarity};
use crate::topology::LevelCount;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModulationMode {
    /// Level-shifted saw-tooth carrier comparison.
    #[default]
    Pwm,
    /// Carrier-free nearest-level quantization.
    Staircase,
}

/// Per-phase references, each in `[-MI, MI]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet(pub Vec<f64>);

impl ReferenceSet {
    /// Reference of phase `i` (1-based).
    pub fn phase(&self, i: usize) -> f64 {
        self.0[i - 1]
    }
}

/// `MI * sin(2 pi f t + 2 pi i / n)` for `i = 1..=n`.
pub fn sinusoidal_references(t: f64, f: f64, n: usize, mi: f64) -> ReferenceSet {
    ReferenceSet((1..=n).map(|i| mi * (TAU * f * t + TAU * i as f64 / n as f64).sin()).collect())
}

/// In-phase, level-shifted saw-tooth carriers. Carrier `j` (0-based) spans
/// `[j / N_C, (j + 1) / N_C]` on the magnitude axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarrierBank {
    pub count: usize,
    pub frequency: f64,
    /// Phase offset of the ramp, radians.
    pub phase: f64,
}

impl CarrierBank {
    pub fn new(levels: LevelCount, frequency: f64) -> Self {
        Self { count: levels.capacitors(), frequency, phase: 0.0 }
    }

    pub fn with_phase(mut self, phase: f64) -> Self {
        self.phase = phase;
        self
    }

    /// Ramp position in `[0, 1)`.
    pub fn ramp(&self, t: f64) -> f64 {
        let x = t * self.frequency + self.phase / TAU;
        x - x.floor()
    }

    /// Value of carrier `j` at time `t`.
    pub fn carrier(&self, j: usize, t: f64) -> f64 {
        (j as f64 + self.ramp(t)) / self.count as f64
    }
}

/// Compares `|v_ref|` with every carrier; the magnitude is the number of
/// carriers below the reference.
pub fn pwm_level(t: f64, v_ref: f64, bank: &CarrierBank, levels: LevelCount) -> LevelCommand {
    let nc = levels.capacitors();
    let mag = v_ref.abs().min(1.0);
    let m = (0..nc.min(bank.count)).filter(|&j| mag > bank.carrier(j, t)).count() as i32;
    let polarity_hint = Polarity::of(v_ref);
    let level = if polarity_hint == Polarity::Negative { -m } else { m };
    LevelCommand::new(level, polarity_hint)
}

/// Nearest-level quantization of `v_ref * N_C`; exact half steps round
/// toward zero.
pub fn staircase_level(v_ref: f64, levels: LevelCount) -> LevelCommand {
    let nc = levels.max_level();
    let x = v_ref.abs().min(1.0) * nc as f64;
    let m = ((x - 0.5).ceil() as i32).clamp(0, nc);
    let polarity_hint = Polarity::of(v_ref);
    let level = if polarity_hint == Polarity::Negative { -m } else { m };
    LevelCommand::new(level, polarity_hint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lc(n: u32) -> LevelCount {
        LevelCount::new(n).unwrap()
    }

    #[test]
    fn references() {
        let r = sinusoidal_references(0.0, 50.0, 3, 1.0);
        assert_abs_diff_eq!(r.phase(3), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.phase(1), 0.866_025_403_8, epsilon = 1e-9);
        let r = sinusoidal_references(5e-3, 50.0, 1, 0.5);
        assert_abs_diff_eq!(r.phase(1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn pwm_edge_cases() {
        let bank = CarrierBank::new(lc(5), 10e3);
        for k in 0..1000 {
            let t = k as f64 * 1.3e-6;
            assert_eq!(pwm_level(t, 0.0, &bank, lc(5)).level, 0);
            assert_eq!(pwm_level(t, 1.0, &bank, lc(5)).level, 2);
            assert_eq!(pwm_level(t, -1.0, &bank, lc(5)).level, -2);
        }
    }

    #[test]
    fn pwm_mean_half_reference() {
        // Duty arithmetic: |v| = 0.5 sits at the top of carrier 0, so level 1
        // is held for the whole ramp and the mean is exactly 1.
        let bank = CarrierBank::new(lc(5), 10e3);
        let dt = 1e-6;
        let steps = (100.0 / 10e3 / dt) as usize;
        let sum: i64 = (0..steps).map(|k| pwm_level(k as f64 * dt, 0.5, &bank, lc(5)).level as i64).sum();
        let mean = sum as f64 / steps as f64;
        assert!((mean - 1.0).abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn pwm_duty_matches_reference_fraction() {
        // Ramp sampled uniformly: level magnitude = floor-count of carriers,
        // expected mean = |v| * N_C.
        let bank = CarrierBank::new(lc(7), 10e3);
        let dt = 1e-6;
        for v in [0.1, 0.37, 0.62, 0.9] {
            let steps = 100_000;
            let sum: i64 = (0..steps).map(|k| pwm_level(k as f64 * dt, v, &bank, lc(7)).level as i64).sum();
            let mean = sum as f64 / steps as f64;
            assert!((mean - v * 3.0).abs() < 0.011, "v={v} mean={mean}");
        }
    }

    #[test]
    fn staircase_cases() {
        assert_eq!(staircase_level(0.9, lc(3)).level, 1);
        assert_eq!(staircase_level(0.2, lc(3)).level, 0);
        assert_eq!(staircase_level(0.5, lc(3)).level, 0);
        assert_eq!(staircase_level(0.5000001, lc(3)).level, 1);
        assert_eq!(staircase_level(-0.9, lc(5)).level, -2);
        assert_eq!(staircase_level(0.3, lc(5)).level, 1);
        assert_eq!(staircase_level(0.25, lc(5)).level, 0);
    }

    #[test]
    fn s1_gate_toggles_twice_per_period() {
        let f = 50.0;
        let dt = 1e-6;
        let steps = (1.0 / f / dt) as usize;
        let bank = CarrierBank::new(lc(5), 10e3);
        let sm = crate::switching::LadderSubModule::new(lc(5));
        let gate = |k: usize| {
            let t = (k as f64 + 0.5) * dt;
            let r = sinusoidal_references(t, f, 3, 0.9).phase(1);
            sm.level_to_switch_vector(pwm_level(t, r, &bank, lc(5))).unwrap()
        };
        let mut s1_toggles = 0;
        let mut s3_toggles = 0;
        let mut prev = gate(0);
        for k in 1..steps {
            let cur = gate(k);
            if cur.s(1) != prev.s(1) {
                s1_toggles += 1;
            }
            if cur.s(3) != prev.s(3) {
                s3_toggles += 1;
            }
            prev = cur;
        }
        assert_eq!(s1_toggles, 2);
        // S3 follows the carrier: on the order of two edges per carrier period.
        assert!(s3_toggles > 100, "S3 toggles {s3_toggles}");
    }

    proptest! {
        #[test]
        fn staircase_is_odd(v in -1.0f64..1.0, half in 1u32..6) {
            let l = lc(2 * half + 1);
            prop_assert_eq!(staircase_level(-v, l).level, -staircase_level(v, l).level);
        }

        #[test]
        fn no_level_skipping(phase in 0.0f64..TAU, mi in 0.1f64..1.0, half in 1u32..5) {
            let l = lc(2 * half + 1);
            let bank = CarrierBank::new(l, 10e3);
            let dt = 1e-6;
            let mut prev = pwm_level(0.0, mi * phase.sin(), &bank, l);
            for k in 1..20_000 {
                let t = k as f64 * dt;
                let r = mi * (TAU * 50.0 * t + phase).sin();
                let cur = pwm_level(t, r, &bank, l);
                if cur.polarity_hint == prev.polarity_hint {
                    prop_assert!((cur.level - prev.level).abs() <= 1);
                }
                prev = cur;
            }
        }

        #[test]
        fn volt_second_balance(mi in 0.2f64..1.0, half in 1u32..5) {
            let l = lc(2 * half + 1);
            let nc = l.capacitors() as f64;
            let bank = CarrierBank::new(l, 10e3);
            let dt = 1e-6;
            let steps = 20_000;
            let mut err = 0.0;
            for k in 0..steps {
                let t = k as f64 * dt;
                let r = sinusoidal_references(t, 50.0, 3, mi).phase(2);
                err += pwm_level(t, r, &bank, l).level as f64 - r * nc;
            }
            prop_assert!((err / steps as f64).abs() < 0.5);
        }
    }
}
