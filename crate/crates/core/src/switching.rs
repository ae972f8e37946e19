// SPDX-License-Identifier: Apache-2.0

//! Gate patterns of the ladder sub-module.
//!
//! Switch numbering follows the usual five-level layout and extends it one
//! capacitor at a time:
//!
//! * `S1`..`S4` form the output bridge. `S1`/`S3` tie the left/right output
//!   terminal to the top rail, `S2`/`S4` to the bottom rail.
//! * For every capacitor `j >= 2` three switches are added: a series switch
//!   (`S5`, `S8`, ...) that stacks `C_j` on top of `C_{j-1}`, and a parallel
//!   pair (`S6`/`S7`, `S9`/`S10`, ...) that clamps `C_j` across `C_{j-1}`.
//!
//! The top rail of the bridge is the top plate of the last capacitor, the
//! bottom rail is the bottom plate of `C_1`. For output magnitude `m`,
//! capacitors `2..=m` are stacked in series and every capacitor above `m` is
//! paralleled onto its lower neighbour. This ladder rule reproduces the
//! five-level state table exactly; for larger `N_L` it is a reconstruction
//! of the generalized cell, not a documented wiring.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::SwitchingError;
use crate::topology::LevelCount;

/// Sign of the reference, used to pick one of the two zero-level rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    /// `S1` conducts in the negative half cycle; zero counts as positive.
    pub fn of(v: f64) -> Self {
        if v < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelCommand {
    pub level: i32,
    pub polarity_hint: Polarity,
}

impl LevelCommand {
    pub fn new(level: i32, polarity_hint: Polarity) -> Self {
        Self { level, polarity_hint }
    }

    /// Hint follows the sign of a nonzero level.
    pub fn from_level(level: i32) -> Self {
        let polarity_hint = if level < 0 { Polarity::Negative } else { Polarity::Positive };
        Self { level, polarity_hint }
    }
}

/// Gate states `S1..S_NS`; index 0 is `S1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwitchVector {
    states: Vec<bool>,
}

impl SwitchVector {
    pub fn new(states: Vec<bool>) -> Self {
        Self { states }
    }

    /// Builds the vector for `n_switches` gates from the low bits of `bits`;
    /// bit 0 is `S1`.
    pub fn from_bits(bits: u64, n_switches: usize) -> Self {
        Self::new((0..n_switches).map(|k| bits >> k & 1 == 1).collect())
    }

    pub fn states(&self) -> &[bool] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State of switch `S_k` (1-based).
    pub fn s(&self, k: usize) -> bool {
        self.states[k - 1]
    }
}

impl fmt::Display for SwitchVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.states.iter().map(|&on| if on { "ON" } else { "OFF" }).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CapacitorRole {
    /// `C_1`, permanently part of the dc chain.
    OnBus,
    Series,
    Parallel,
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutputPolarity {
    Positive,
    Negative,
    Bypass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionState {
    pub roles: Vec<CapacitorRole>,
    pub output_polarity: OutputPolarity,
}

impl ConnectionState {
    /// Output level in units of one capacitor voltage.
    pub fn level(&self) -> i32 {
        let series = self.roles.iter().filter(|r| **r == CapacitorRole::Series).count() as i32;
        match self.output_polarity {
            OutputPolarity::Bypass => 0,
            OutputPolarity::Positive => 1 + series,
            OutputPolarity::Negative => -(1 + series),
        }
    }
}

/// Node of the sub-module internal network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LocalNode {
    /// Top plate of capacitor `j` (1-based). `Top(1)` is the upper bus terminal.
    Top(usize),
    /// Bottom plate of capacitor `j`. `Bottom(1)` is the lower bus terminal.
    Bottom(usize),
    OutLeft,
    OutRight,
}

impl fmt::Display for LocalNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocalNode::Top(j) => write!(f, "C{j}+"),
            LocalNode::Bottom(j) => write!(f, "C{j}-"),
            LocalNode::OutLeft => write!(f, "OUT_L"),
            LocalNode::OutRight => write!(f, "OUT_R"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiodeRequirement {
    Required,
    Forbidden,
    Either,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchKind {
    Bridge,
    /// Stacks capacitor `j` in series.
    Series(usize),
    /// One half of the pair clamping capacitor `j` across `j - 1`.
    Parallel(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchSpec {
    /// 1-based switch index.
    pub index: usize,
    pub a: LocalNode,
    pub b: LocalNode,
    pub kind: SwitchKind,
    pub diode: DiodeRequirement,
}

/// Elements of one sub-module: switches with their terminals and the
/// capacitor plates.
#[derive(Debug, Clone, PartialEq)]
pub struct SubModuleNetwork {
    pub levels: LevelCount,
    pub switches: Vec<SwitchSpec>,
}

impl SubModuleNetwork {
    pub fn new(levels: LevelCount) -> Self {
        let nc = levels.capacitors();
        let top_rail = LocalNode::Top(nc);
        let bottom_rail = LocalNode::Bottom(1);
        let bridge = |index, a, b, diode| SwitchSpec { index, a, b, kind: SwitchKind::Bridge, diode };
        // Upper bridge switches carry the mandatory diodes.
        let mut switches = vec![
            bridge(1, top_rail, LocalNode::OutLeft, DiodeRequirement::Required),
            bridge(2, LocalNode::OutLeft, bottom_rail, DiodeRequirement::Either),
            bridge(3, top_rail, LocalNode::OutRight, DiodeRequirement::Required),
            bridge(4, LocalNode::OutRight, bottom_rail, DiodeRequirement::Either),
        ];
        for j in 2..=nc {
            let base = 5 + 3 * (j - 2);
            switches.push(SwitchSpec {
                index: base,
                a: LocalNode::Top(j - 1),
                b: LocalNode::Bottom(j),
                kind: SwitchKind::Series(j),
                diode: DiodeRequirement::Either,
            });
            switches.push(SwitchSpec {
                index: base + 1,
                a: LocalNode::Top(j),
                b: LocalNode::Top(j - 1),
                kind: SwitchKind::Parallel(j),
                diode: DiodeRequirement::Either,
            });
            switches.push(SwitchSpec {
                index: base + 2,
                a: LocalNode::Bottom(j),
                b: LocalNode::Bottom(j - 1),
                kind: SwitchKind::Parallel(j),
                diode: DiodeRequirement::Forbidden,
            });
        }
        Self { levels, switches }
    }

    /// All distinct nodes, bus terminals first.
    pub fn nodes(&self) -> Vec<LocalNode> {
        let nc = self.levels.capacitors();
        let mut nodes = vec![LocalNode::Top(1), LocalNode::Bottom(1)];
        for j in 2..=nc {
            nodes.push(LocalNode::Top(j));
            nodes.push(LocalNode::Bottom(j));
        }
        nodes.push(LocalNode::OutLeft);
        nodes.push(LocalNode::OutRight);
        nodes
    }

    /// Position of `node` in [`Self::nodes`].
    pub fn node_index(&self, node: LocalNode) -> usize {
        match node {
            LocalNode::Top(1) => 0,
            LocalNode::Bottom(1) => 1,
            LocalNode::Top(j) => 2 * (j - 1),
            LocalNode::Bottom(j) => 2 * (j - 1) + 1,
            LocalNode::OutLeft => 2 * self.levels.capacitors(),
            LocalNode::OutRight => 2 * self.levels.capacitors() + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvariantViolation {
    /// Both switches of a bridge leg closed, or both open.
    Complementary { upper: usize, lower: usize },
    /// The two halves of a parallel pair disagree.
    ParallelPairMismatch { capacitor: usize },
    /// Series switch and parallel pair of one capacitor closed together.
    SeriesParallelConflict { capacitor: usize },
    /// Ladder switches do not follow the series-prefix / parallel-suffix rule
    /// for the bridge state.
    LadderPattern(String),
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvariantViolation::Complementary { upper, lower } => {
                write!(f, "S{upper} and S{lower} are not complementary")
            }
            InvariantViolation::ParallelPairMismatch { capacitor } => {
                write!(f, "parallel pair of C{capacitor} is split")
            }
            InvariantViolation::SeriesParallelConflict { capacitor } => {
                write!(f, "C{capacitor} is both stacked and paralleled")
            }
            InvariantViolation::LadderPattern(msg) => write!(f, "ladder pattern: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShortReport {
    /// Both switches of one bridge leg closed.
    LegShootThrough { upper: usize, lower: usize },
    /// A loop of closed switches and capacitors with nonzero net voltage.
    Loop {
        /// Switch indices on the loop.
        switches: Vec<usize>,
        /// Capacitor indices on the loop.
        capacitors: Vec<usize>,
        /// Net loop voltage in units of one capacitor voltage.
        net_voltage: i32,
    },
}

impl fmt::Display for ShortReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShortReport::LegShootThrough { upper, lower } => {
                write!(f, "leg shoot-through via S{upper}/S{lower}")
            }
            ShortReport::Loop { switches, capacitors, net_voltage } => {
                let sw: Vec<String> = switches.iter().map(|s| format!("S{s}")).collect();
                let cs: Vec<String> = capacitors.iter().map(|c| format!("C{c}")).collect();
                write!(f, "loop [{}] through [{}] with net {} x V_C", sw.join(" "), cs.join(" "), net_voltage)
            }
        }
    }
}

/// Classification of an arbitrary raw gate vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateClass {
    Legal(LevelCommand),
    InvariantViolating(InvariantViolation),
    Short(ShortReport),
}

/// Gate synthesis for one sub-module size.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderSubModule {
    network: SubModuleNetwork,
    balance_in_zero: bool,
}

impl LadderSubModule {
    pub fn new(levels: LevelCount) -> Self {
        Self { network: SubModuleNetwork::new(levels), balance_in_zero: false }
    }

    /// Zero level closes every parallel pair instead of leaving the inner
    /// capacitors floating.
    pub fn with_balance_in_zero(mut self, on: bool) -> Self {
        self.balance_in_zero = on;
        self
    }

    pub fn levels(&self) -> LevelCount {
        self.network.levels
    }

    pub fn network(&self) -> &SubModuleNetwork {
        &self.network
    }

    pub fn balance_in_zero(&self) -> bool {
        self.balance_in_zero
    }

    fn n_switches(&self) -> usize {
        self.network.levels.switches()
    }

    fn nc(&self) -> usize {
        self.network.levels.capacitors()
    }

    pub fn level_to_switch_vector(&self, cmd: LevelCommand) -> Result<SwitchVector, SwitchingError> {
        let max = self.network.levels.max_level();
        if cmd.level.abs() > max {
            return Err(SwitchingError::InvalidLevel { level: cmd.level, max });
        }
        let mut s = vec![false; self.n_switches()];
        let m = cmd.level.unsigned_abs() as usize;
        match cmd.level.signum() {
            0 => match cmd.polarity_hint {
                Polarity::Negative => {
                    s[0] = true;
                    s[2] = true;
                }
                Polarity::Positive => {
                    s[1] = true;
                    s[3] = true;
                }
            },
            1 => {
                s[1] = true;
                s[2] = true;
            }
            _ => {
                s[0] = true;
                s[3] = true;
            }
        }
        for j in 2..=self.nc() {
            let base = 5 + 3 * (j - 2) - 1;
            if m == 0 {
                if self.balance_in_zero {
                    s[base + 1] = true;
                    s[base + 2] = true;
                }
            } else if j <= m {
                s[base] = true;
            } else {
                s[base + 1] = true;
                s[base + 2] = true;
            }
        }
        Ok(SwitchVector::new(s))
    }

    fn check_len(&self, v: &SwitchVector) -> Result<(), SwitchingError> {
        if v.len() != self.n_switches() {
            return Err(SwitchingError::WrongLength { got: v.len(), expected: self.n_switches() });
        }
        Ok(())
    }

    /// Checks the structural gate invariants (complementary legs, paired
    /// clamps, ladder ordering).
    pub fn check_invariants(&self, v: &SwitchVector) -> Result<(), InvariantViolation> {
        if v.s(1) == v.s(2) {
            return Err(InvariantViolation::Complementary { upper: 1, lower: 2 });
        }
        if v.s(3) == v.s(4) {
            return Err(InvariantViolation::Complementary { upper: 3, lower: 4 });
        }
        let mut roles = Vec::with_capacity(self.nc());
        for j in 2..=self.nc() {
            let base = 5 + 3 * (j - 2);
            let (ser, pa, pb) = (v.s(base), v.s(base + 1), v.s(base + 2));
            if pa != pb {
                return Err(InvariantViolation::ParallelPairMismatch { capacitor: j });
            }
            if ser && pa {
                return Err(InvariantViolation::SeriesParallelConflict { capacitor: j });
            }
            roles.push(if ser {
                CapacitorRole::Series
            } else if pa {
                CapacitorRole::Parallel
            } else {
                CapacitorRole::Disconnected
            });
        }
        let bypass = v.s(1) == v.s(3);
        if bypass {
            let want = if self.balance_in_zero { CapacitorRole::Parallel } else { CapacitorRole::Disconnected };
            if let Some(j) = roles.iter().position(|r| *r != want) {
                return Err(InvariantViolation::LadderPattern(format!("C{} must be {:?} at zero level", j + 2, want)));
            }
        } else {
            if let Some(j) = roles.iter().position(|r| *r == CapacitorRole::Disconnected) {
                return Err(InvariantViolation::LadderPattern(format!("C{} floats while the output is active", j + 2)));
            }
            let first_parallel = roles.iter().position(|r| *r == CapacitorRole::Parallel).unwrap_or(roles.len());
            if roles[first_parallel..].contains(&CapacitorRole::Series) {
                return Err(InvariantViolation::LadderPattern("series capacitor above a paralleled one".to_string()));
            }
        }
        Ok(())
    }

    /// Looks for leg shoot-through and for loops of closed switches and
    /// capacitors whose net voltage is nonzero. Capacitors are taken at the
    /// same nominal voltage, so paralleling equal capacitors is not a short.
    pub fn validate_no_short(&self, v: &SwitchVector) -> Result<(), ShortReport> {
        if v.len() < 4 {
            return Ok(());
        }
        if v.s(1) && v.s(2) {
            return Err(ShortReport::LegShootThrough { upper: 1, lower: 2 });
        }
        if v.s(3) && v.s(4) {
            return Err(ShortReport::LegShootThrough { upper: 3, lower: 4 });
        }

        let nodes = self.network.nodes();
        let mut uf = PotentialUnionFind::new(nodes.len());
        // adjacency: (neighbour, element, potential(neighbour) - potential(self))
        let mut adj: Vec<Vec<(usize, Element, i32)>> = vec![Vec::new(); nodes.len()];
        let add_edge = |uf: &mut PotentialUnionFind,
                        adj: &mut Vec<Vec<(usize, Element, i32)>>,
                        a: usize,
                        b: usize,
                        elem: Element,
                        diff: i32|
         -> Result<(), ShortReport> {
            // diff = potential(a) - potential(b)
            if let Some(existing) = uf.relation(a, b) {
                if existing != diff {
                    let (switches, capacitors) = trace_path(adj, b, a, elem);
                    return Err(ShortReport::Loop { switches, capacitors, net_voltage: diff - existing });
                }
            } else {
                uf.union(a, b, diff);
            }
            adj[a].push((b, elem, -diff));
            adj[b].push((a, elem, diff));
            Ok(())
        };

        for j in 1..=self.nc() {
            let a = self.network.node_index(LocalNode::Top(j));
            let b = self.network.node_index(LocalNode::Bottom(j));
            add_edge(&mut uf, &mut adj, a, b, Element::Capacitor(j), 1)?;
        }
        for sw in &self.network.switches {
            if v.s(sw.index) {
                let a = self.network.node_index(sw.a);
                let b = self.network.node_index(sw.b);
                add_edge(&mut uf, &mut adj, a, b, Element::Switch(sw.index), 0)?;
            }
        }
        Ok(())
    }

    pub fn switch_vector_to_connection(&self, v: &SwitchVector) -> Result<ConnectionState, SwitchingError> {
        self.check_len(v)?;
        self.validate_no_short(v)?;
        self.check_invariants(v).map_err(|e| SwitchingError::InvalidState(e.to_string()))?;
        let output_polarity = match (v.s(1), v.s(3)) {
            (false, true) => OutputPolarity::Positive,
            (true, false) => OutputPolarity::Negative,
            _ => OutputPolarity::Bypass,
        };
        let mut roles = vec![CapacitorRole::OnBus];
        for j in 2..=self.nc() {
            let base = 5 + 3 * (j - 2);
            roles.push(if v.s(base) {
                CapacitorRole::Series
            } else if v.s(base + 1) {
                CapacitorRole::Parallel
            } else {
                CapacitorRole::Disconnected
            });
        }
        Ok(ConnectionState { roles, output_polarity })
    }

    /// Legal states in state-table order: the two zero rows, positive levels,
    /// then negative levels.
    pub fn enumerate_legal_states(&self) -> Vec<(LevelCommand, SwitchVector)> {
        let max = self.network.levels.max_level();
        let mut cmds = vec![LevelCommand::new(0, Polarity::Negative), LevelCommand::new(0, Polarity::Positive)];
        cmds.extend((1..=max).map(LevelCommand::from_level));
        cmds.extend((1..=max).map(|k| LevelCommand::from_level(-k)));
        cmds.into_iter()
            .map(|c| {
                let v = self.level_to_switch_vector(c).expect("level within range");
                (c, v)
            })
            .collect()
    }

    /// Sorts a raw gate vector into legal / invariant-violating / shorting.
    /// Shorts take precedence since they are the physically dangerous case.
    pub fn classify(&self, v: &SwitchVector) -> Result<StateClass, SwitchingError> {
        self.check_len(v)?;
        if let Err(r) = self.validate_no_short(v) {
            return Ok(StateClass::Short(r));
        }
        if let Err(e) = self.check_invariants(v) {
            return Ok(StateClass::InvariantViolating(e));
        }
        let conn = self.switch_vector_to_connection(v)?;
        let level = conn.level();
        let hint = if level == 0 {
            if v.s(1) {
                Polarity::Negative
            } else {
                Polarity::Positive
            }
        } else {
            Polarity::of(level as f64)
        };
        Ok(StateClass::Legal(LevelCommand::new(level, hint)))
    }
}

pub fn level_to_switch_vector(cmd: LevelCommand, levels: LevelCount) -> Result<SwitchVector, SwitchingError> {
    LadderSubModule::new(levels).level_to_switch_vector(cmd)
}

pub fn switch_vector_to_connection(v: &SwitchVector, levels: LevelCount) -> Result<ConnectionState, SwitchingError> {
    LadderSubModule::new(levels).switch_vector_to_connection(v)
}

pub fn validate_no_short(v: &SwitchVector, levels: LevelCount) -> Result<(), ShortReport> {
    LadderSubModule::new(levels).validate_no_short(v)
}

pub fn enumerate_legal_states(levels: LevelCount) -> Vec<(LevelCommand, SwitchVector)> {
    LadderSubModule::new(levels).enumerate_legal_states()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Element {
    Switch(usize),
    Capacitor(usize),
}

/// Breadth-first path from `from` to `to` over already-inserted edges,
/// closed by `closing`.
fn trace_path(
    adj: &[Vec<(usize, Element, i32)>],
    from: usize,
    to: usize,
    closing: Element,
) -> (Vec<usize>, Vec<usize>) {
    let mut prev: Vec<Option<(usize, Element)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &(w, e, _) in &adj[u] {
            if !seen[w] {
                seen[w] = true;
                prev[w] = Some((u, e));
                queue.push_back(w);
            }
        }
    }
    let mut elems = vec![closing];
    let mut cur = to;
    while let Some((p, e)) = prev[cur] {
        elems.push(e);
        cur = p;
    }
    let mut switches: Vec<usize> =
        elems.iter().filter_map(|e| if let Element::Switch(s) = e { Some(*s) } else { None }).collect();
    let mut capacitors: Vec<usize> =
        elems.iter().filter_map(|e| if let Element::Capacitor(c) = e { Some(*c) } else { None }).collect();
    switches.sort_unstable();
    capacitors.sort_unstable();
    (switches, capacitors)
}

/// Union-find that also tracks the potential offset of every node relative
/// to its root, in units of one capacitor voltage.
struct PotentialUnionFind {
    parent: Vec<usize>,
    offset: Vec<i32>,
}

impl PotentialUnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), offset: vec![0; n] }
    }

    /// Returns (root, potential(x) - potential(root)).
    fn find(&mut self, x: usize) -> (usize, i32) {
        let p = self.parent[x];
        if p == x {
            return (x, 0);
        }
        let (root, off) = self.find(p);
        self.parent[x] = root;
        self.offset[x] += off;
        (root, self.offset[x])
    }

    /// potential(a) - potential(b) when both are in one component.
    fn relation(&mut self, a: usize, b: usize) -> Option<i32> {
        let (ra, oa) = self.find(a);
        let (rb, ob) = self.find(b);
        (ra == rb).then_some(oa - ob)
    }

    fn union(&mut self, a: usize, b: usize, diff: i32) {
        let (ra, oa) = self.find(a);
        let (rb, ob) = self.find(b);
        // potential(ra) - potential(rb) = diff - oa + ob
        self.parent[ra] = rb;
        self.offset[ra] = diff - oa + ob;
    }
}
