// SPDX-License-Identifier: Apache-2.0

//! Closed-form design relations for an `N_L`-level sub-module and the
//! `n`-phase series stack built from it.

use serde::{Deserialize, Serialize};

use crate::error::TopologyError;

/// Output level count of a sub-module. Always odd and at least 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct LevelCount(u32);

impl LevelCount {
    pub fn new(levels: u32) -> Result<Self, TopologyError> {
        if levels < 3 || levels.is_multiple_of(2) {
            return Err(TopologyError::InvalidLevelCount(levels));
        }
        Ok(Self(levels))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Capacitors per sub-module, which is also the largest level magnitude.
    pub fn capacitors(self) -> usize {
        ((self.0 - 1) / 2) as usize
    }

    pub fn switches(self) -> usize {
        ((3 * self.0 - 1) / 2) as usize
    }

    pub fn max_level(self) -> i32 {
        self.capacitors() as i32
    }
}

impl TryFrom<u32> for LevelCount {
    type Error = TopologyError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LevelCount> for u32 {
    fn from(l: LevelCount) -> u32 {
        l.0
    }
}

/// Component counts of one sub-module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubModuleSpec {
    pub levels: u32,
    pub n_switches: usize,
    pub n_capacitors: usize,
    /// Switches that must not carry an antiparallel diode.
    pub n_no_diode: usize,
    /// Switches that must carry an antiparallel diode.
    pub n_with_diode: usize,
    /// Switches that may be of either kind.
    pub n_any_diode: usize,
}

/// Voltage stresses for the stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReport {
    pub capacitor_rating: f64,
    /// Ladder switches (`S_5` onward).
    pub inner_switch_rating: f64,
    /// Output bridge switches `S_1`..`S_4`.
    pub outer_switch_rating: f64,
    pub level_set: Vec<f64>,
}

pub fn component_counts(levels: u32) -> Result<SubModuleSpec, TopologyError> {
    let l = LevelCount::new(levels)?;
    let nl = l.get() as usize;
    Ok(SubModuleSpec {
        levels: l.get(),
        n_switches: l.switches(),
        n_capacitors: l.capacitors(),
        n_no_diode: (nl - 3) / 2,
        n_with_diode: 2,
        n_any_diode: nl - 1,
    })
}

fn check_stack(phases: usize, v_dc: f64) -> Result<(), TopologyError> {
    if phases == 0 {
        return Err(TopologyError::InvalidPhaseCount);
    }
    if !(v_dc.is_finite() && v_dc > 0.0) {
        return Err(TopologyError::InvalidSourceVoltage(v_dc));
    }
    Ok(())
}

/// Every capacitor in the stack sits at `v_dc / n` in balanced operation.
pub fn nominal_capacitor_voltage(phases: usize, v_dc: f64) -> Result<f64, TopologyError> {
    check_stack(phases, v_dc)?;
    Ok(v_dc / phases as f64)
}

/// Reachable phase voltages, ascending: `k * v_dc / n` for `|k| <= (N_L - 1) / 2`.
pub fn voltage_levels(levels: u32, phases: usize, v_dc: f64) -> Result<Vec<f64>, TopologyError> {
    let l = LevelCount::new(levels)?;
    check_stack(phases, v_dc)?;
    let k_max = l.max_level();
    Ok((-k_max..=k_max).map(|k| k as f64 * v_dc / phases as f64).collect())
}

/// True when the peak phase voltage exceeds the dc source voltage.
pub fn is_boosting(levels: u32, phases: usize) -> Result<bool, TopologyError> {
    let l = LevelCount::new(levels)?;
    if phases == 0 {
        return Err(TopologyError::InvalidPhaseCount);
    }
    Ok(l.get() as usize > 2 * phases + 1)
}

pub fn device_ratings(levels: u32, phases: usize, v_dc: f64) -> Result<RatingReport, TopologyError> {
    let l = LevelCount::new(levels)?;
    let v_cap = nominal_capacitor_voltage(phases, v_dc)?;
    Ok(RatingReport {
        capacitor_rating: v_cap,
        inner_switch_rating: v_cap,
        outer_switch_rating: l.max_level() as f64 * v_dc / phases as f64,
        level_set: voltage_levels(levels, phases, v_dc)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn five_level_counts() {
        let s = component_counts(5).unwrap();
        assert_eq!((s.n_switches, s.n_capacitors, s.n_no_diode, s.n_with_diode, s.n_any_diode), (7, 2, 1, 2, 4));
    }

    #[test]
    fn three_and_seven_level_counts() {
        let s = component_counts(3).unwrap();
        assert_eq!((s.n_switches, s.n_capacitors, s.n_no_diode, s.n_with_diode, s.n_any_diode), (4, 1, 0, 2, 2));
        let s = component_counts(7).unwrap();
        assert_eq!((s.n_switches, s.n_capacitors, s.n_no_diode, s.n_with_diode, s.n_any_diode), (10, 3, 2, 2, 6));
    }

    #[test]
    fn rejects_even_and_small() {
        for bad in [0, 1, 2, 4, 6, 10] {
            assert_eq!(component_counts(bad), Err(TopologyError::InvalidLevelCount(bad)));
        }
    }

    #[test]
    fn level_sets() {
        assert_eq!(voltage_levels(5, 3, 600.0).unwrap(), vec![-400.0, -200.0, 0.0, 200.0, 400.0]);
        assert_eq!(voltage_levels(3, 1, 100.0).unwrap(), vec![-100.0, 0.0, 100.0]);
        let seven = voltage_levels(7, 3, 400.0).unwrap();
        let expect = [-400.0, -266.666_666_7, -133.333_333_3, 0.0, 133.333_333_3, 266.666_666_7, 400.0];
        for (a, b) in seven.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn boost_condition() {
        assert!(!is_boosting(7, 3).unwrap());
        assert!(is_boosting(9, 3).unwrap());
        assert!(!is_boosting(3, 1).unwrap());
    }

    #[test]
    fn ratings() {
        let r = device_ratings(5, 3, 600.0).unwrap();
        assert_eq!((r.capacitor_rating, r.inner_switch_rating, r.outer_switch_rating), (200.0, 200.0, 400.0));
        let r = device_ratings(3, 1, 100.0).unwrap();
        assert_eq!((r.capacitor_rating, r.inner_switch_rating, r.outer_switch_rating), (100.0, 100.0, 100.0));
        let r = device_ratings(7, 3, 400.0).unwrap();
        assert_relative_eq!(r.capacitor_rating, 133.333_333, epsilon = 1e-5);
        assert_relative_eq!(r.outer_switch_rating, 400.0, epsilon = 1e-9);
    }

    #[test]
    fn nominal_voltage() {
        assert_eq!(nominal_capacitor_voltage(3, 600.0).unwrap(), 200.0);
        assert_eq!(nominal_capacitor_voltage(1, 480.0).unwrap(), 480.0);
        assert_relative_eq!(nominal_capacitor_voltage(3, 400.0).unwrap(), 133.333_333, epsilon = 1e-5);
        assert!(nominal_capacitor_voltage(0, 400.0).is_err());
    }

    #[test]
    fn partition_identity_small_range() {
        for nl in (3..=21).step_by(2) {
            let s = component_counts(nl).unwrap();
            assert_eq!(s.n_no_diode + s.n_with_diode + s.n_any_diode, s.n_switches, "N_L = {nl}");
        }
    }

    proptest! {
        #[test]
        fn levels_symmetric_with_uniform_step(half in 1u32..12, n in 1usize..12, v_dc in 1.0f64..5000.0) {
            let nl = 2 * half + 1;
            let lv = voltage_levels(nl, n, v_dc).unwrap();
            prop_assert_eq!(lv.len(), nl as usize);
            let step = v_dc / n as f64;
            for w in lv.windows(2) {
                prop_assert!((w[1] - w[0] - step).abs() <= 1e-9 * v_dc);
            }
            for (a, b) in lv.iter().zip(lv.iter().rev()) {
                prop_assert!((a + b).abs() <= 1e-9 * v_dc);
            }
            let top = *lv.last().unwrap();
            prop_assert_eq!(is_boosting(nl, n).unwrap(), top > v_dc * (1.0 + 1e-12));
            prop_assert_eq!(device_ratings(nl, n, v_dc).unwrap().outer_switch_rating, top);
        }
    }
}
