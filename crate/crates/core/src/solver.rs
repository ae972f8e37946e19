// SPDX-License-Identifier: Apache-2.0

//! Fixed-step transient simulation of the series stack.
//!
//! The `n` sub-modules sit in series across the dc source: the top plate of
//! `C_11` is the source's positive terminal (through `source_r`), the bottom
//! plate of `C_n1` is ground, and `C_i1`'s bottom plate is `C_(i+1)1`'s top
//! plate. Each sub-module drives one load winding between its two output
//! terminals.
//!
//! Integration is backward Euler. A capacitor with ESR `r` becomes the
//! conductance `1 / (r + dt / C)` in series with its previous voltage; the
//! winding set becomes the admittance `(R + L / dt)^-1` plus a history
//! current. Closed switches are `1 / r_on`, open ones `g_off`. The nodal
//! matrix is symmetric and is refactorized only when a gate vector changes.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::control::MovingAverage;
use crate::error::{SolverError, SwitchingError};
use crate::modulation::{pwm_level, staircase_level, CarrierBank, ModulationMode};
use crate::record::WaveformRecord;
use crate::switching::{LadderSubModule, LevelCommand, LocalNode, Polarity, SwitchVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircuitState {
    /// `cap_voltages[i][j]`: capacitor `j` of phase `i`, both 0-based.
    pub cap_voltages: Vec<Vec<f64>>,
    /// Winding current per phase, from the right output terminal through the
    /// winding to the left one.
    pub branch_currents: Vec<f64>,
    pub time: f64,
}

impl CircuitState {
    /// Every capacitor at `v_dc / n`, windings at rest.
    pub fn nominal(cfg: &SystemConfig) -> Self {
        let v = cfg.nominal_cap_voltage();
        Self {
            cap_voltages: vec![vec![v; cfg.capacitors_per_sm()]; cfg.phases],
            branch_currents: vec![0.0; cfg.phases],
            time: 0.0,
        }
    }

    /// Initial state from the config: explicit voltages if given, then the
    /// configured perturbation.
    pub fn initial(cfg: &SystemConfig) -> Result<Self, SolverError> {
        let mut s = Self::nominal(cfg);
        if let Some(v) = &cfg.initial_cap_voltages {
            let nc = cfg.capacitors_per_sm();
            if v.len() != cfg.phases * nc {
                return Err(SolverError::Dimension(format!(
                    "initial_cap_voltages has {} entries, expected {}",
                    v.len(),
                    cfg.phases * nc
                )));
            }
            for (i, row) in s.cap_voltages.iter_mut().enumerate() {
                row.copy_from_slice(&v[i * nc..(i + 1) * nc]);
            }
        }
        if let Some(p) = &cfg.perturbation {
            s = inject_perturbation(&s, p.phase, p.delta_v)?;
        }
        Ok(s)
    }

    pub fn bus_sum(&self) -> f64 {
        self.cap_voltages.iter().map(|row| row[0]).sum()
    }
}

/// Raises every capacitor of `phase` (1-based) by `delta_v` and lowers the
/// bus capacitors of the other phases by `delta_v / (n - 1)` each, so the
/// bus chain still adds up to the same total.
pub fn inject_perturbation(state: &CircuitState, phase: usize, delta_v: f64) -> Result<CircuitState, SolverError> {
    let n = state.cap_voltages.len();
    if phase == 0 || phase > n {
        return Err(SolverError::InvalidPerturbation(format!("phase {phase} outside 1..={n}")));
    }
    if delta_v == 0.0 {
        return Ok(state.clone());
    }
    if n == 1 {
        return Err(SolverError::InvalidPerturbation(
            "a single sub-module has no other bus capacitor to compensate".into(),
        ));
    }
    let mut out = state.clone();
    let share = delta_v / (n - 1) as f64;
    for (i, row) in out.cap_voltages.iter_mut().enumerate() {
        if i + 1 == phase {
            row.iter_mut().for_each(|v| *v += delta_v);
        } else {
            row[0] -= share;
        }
    }
    if let Some((i, j, v)) = out
        .cap_voltages
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().map(move |(j, v)| (i, j, *v)))
        .find(|(_, _, v)| *v < 0.0)
    {
        return Err(SolverError::InvalidPerturbation(format!("C{}{} would reach {v:.3} V", i + 1, j + 1)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeRef {
    Unknown(usize),
    Fixed(f64),
}

/// Node numbering of the whole stack.
#[derive(Debug, Clone)]
struct StackLayout {
    names: Vec<String>,
    /// `local[i][k]`: node `k` of sub-module `i` in `SubModuleNetwork::nodes` order.
    local: Vec<Vec<NodeRef>>,
    source_top: NodeRef,
}

impl StackLayout {
    fn new(cfg: &SystemConfig, sm: &LadderSubModule) -> Self {
        let n = cfg.phases;
        let net = sm.network();
        let mut names = Vec::new();
        let fresh = |names: &mut Vec<String>, name: String| {
            names.push(name);
            NodeRef::Unknown(names.len() - 1)
        };
        let mut bus = Vec::with_capacity(n + 1);
        bus.push(if cfg.source_r > 0.0 { fresh(&mut names, "BUS0".into()) } else { NodeRef::Fixed(cfg.v_dc) });
        for i in 1..n {
            bus.push(fresh(&mut names, format!("BUS{i}")));
        }
        bus.push(NodeRef::Fixed(0.0));

        let mut local = Vec::with_capacity(n);
        for i in 0..n {
            let nodes = net.nodes();
            let mut refs = Vec::with_capacity(nodes.len());
            for node in nodes {
                let r = match node {
                    LocalNode::Top(1) => bus[i],
                    LocalNode::Bottom(1) => bus[i + 1],
                    other => fresh(&mut names, format!("SM{}.{}", i + 1, other)),
                };
                refs.push(r);
            }
            local.push(refs);
        }
        Self { names, local, source_top: bus[0] }
    }

    fn node(&self, sm: &LadderSubModule, phase: usize, node: LocalNode) -> NodeRef {
        self.local[phase][sm.network().node_index(node)]
    }

    fn len(&self) -> usize {
        self.names.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Conductance {
    a: NodeRef,
    b: NodeRef,
    g: f64,
}

#[derive(Debug, Clone, Copy)]
struct CapStamp {
    phase: usize,
    index: usize,
    a: NodeRef,
    b: NodeRef,
    g_eq: f64,
}

/// Stamped and factorized network for one set of gate vectors.
#[derive(Debug, Clone)]
pub struct NetlistSnapshot {
    layout: StackLayout,
    dt: f64,
    v_dc: f64,
    source_g: Option<f64>,
    switches: Vec<Conductance>,
    caps: Vec<CapStamp>,
    capacitance: f64,
    cap_esr: f64,
    out_right: Vec<NodeRef>,
    out_left: Vec<NodeRef>,
    load_r: Vec<f64>,
    load_l: Vec<f64>,
    /// Row-major winding admittance `(R + L/dt)^-1`.
    load_y: Vec<f64>,
    /// Row-major `Y L / dt`, mapping previous currents to history currents.
    load_hist: Vec<f64>,
    matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    vectors: Vec<SwitchVector>,
}

/// Quantities solved during one step, evaluated at the end of the step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepObservables {
    pub phase_voltages: Vec<f64>,
    /// `cap_currents[i][j]`, positive when charging.
    pub cap_currents: Vec<Vec<f64>>,
    pub source_current: f64,
    /// Power delivered by the ideal source `v_dc * source_current`.
    pub source_power: f64,
    /// Power dissipated in every resistance of the network.
    pub dissipation: f64,
    /// Energy removed by the integrator itself during the step,
    /// `C dv^2 / 2` per capacitor plus `di' L di / 2` for the windings.
    pub integrator_loss: f64,
}

impl NetlistSnapshot {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn vectors(&self) -> &[SwitchVector] {
        &self.vectors
    }

    pub fn node_names(&self) -> &[String] {
        &self.layout.names
    }

    /// Dense nodal matrix (unknown nodes only).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn potential(x: &DVector<f64>, r: NodeRef) -> f64 {
        match r {
            NodeRef::Unknown(k) => x[k],
            NodeRef::Fixed(v) => v,
        }
    }

    /// One backward-Euler step of length `dt` from `state`.
    pub fn step(&self, state: &CircuitState, dt: f64) -> Result<(CircuitState, StepObservables), SolverError> {
        if !(dt > 0.0) {
            return Err(SolverError::InvalidStep(dt));
        }
        if (dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(SolverError::Dimension(format!("snapshot was stamped for dt = {}, got {dt}", self.dt)));
        }
        let n = self.out_right.len();
        if state.cap_voltages.len() != n
            || state.branch_currents.len() != n
            || state.cap_voltages.iter().any(|r| r.len() * n != self.caps.len())
        {
            return Err(SolverError::Dimension("state does not match snapshot".into()));
        }

        let mut rhs = DVector::<f64>::zeros(self.layout.len());
        let mut inject = |r: NodeRef, i: f64| {
            if let NodeRef::Unknown(k) = r {
                rhs[k] += i;
            }
        };
        // Fixed-potential terminals of conductances move to the right-hand side.
        for c in &self.switches {
            fixed_injection(c.a, c.b, c.g, &mut inject);
        }
        for c in &self.caps {
            let v_prev = state.cap_voltages[c.phase][c.index];
            inject(c.a, c.g_eq * v_prev);
            inject(c.b, -c.g_eq * v_prev);
            fixed_injection(c.a, c.b, c.g_eq, &mut inject);
        }
        if let Some(g) = self.source_g {
            inject(self.layout.source_top, g * self.v_dc);
        }
        let hist = mat_vec(&self.load_hist, &state.branch_currents);
        for k in 0..n {
            inject(self.out_right[k], -hist[k]);
            inject(self.out_left[k], hist[k]);
        }

        let mut x = rhs;
        if !self.lu.solve_mut(&mut x) || x.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::Singular {
                time: state.time + dt,
                detail: "factorized nodal matrix could not be solved".into(),
            });
        }
        let pot = |r: NodeRef| Self::potential(&x, r);

        let mut dissipation = 0.0;
        for c in &self.switches {
            let dv = pot(c.a) - pot(c.b);
            dissipation += c.g * dv * dv;
        }

        let mut integrator_loss = 0.0;
        let mut cap_voltages = state.cap_voltages.clone();
        let mut cap_currents = vec![vec![0.0; cap_voltages[0].len()]; n];
        for c in &self.caps {
            let v_prev = state.cap_voltages[c.phase][c.index];
            let i = c.g_eq * (pot(c.a) - pot(c.b) - v_prev);
            cap_currents[c.phase][c.index] = i;
            let dv = i * dt / self.capacitance;
            cap_voltages[c.phase][c.index] = v_prev + dv;
            integrator_loss += 0.5 * self.capacitance * dv * dv;
            dissipation += self.cap_esr * i * i;
        }

        let phase_voltages: Vec<f64> = (0..n).map(|k| pot(self.out_right[k]) - pot(self.out_left[k])).collect();
        let driven = mat_vec(&self.load_y, &phase_voltages);
        let branch_currents: Vec<f64> = (0..n).map(|k| driven[k] + hist[k]).collect();
        for (k, i) in branch_currents.iter().enumerate() {
            dissipation += self.load_r[k] * i * i;
        }
        let di: Vec<f64> = branch_currents.iter().zip(&state.branch_currents).map(|(a, b)| a - b).collect();
        let l_di = mat_vec(&self.load_l, &di);
        integrator_loss += 0.5 * di.iter().zip(&l_di).map(|(a, b)| a * b).sum::<f64>();

        let source_current = match self.source_g {
            Some(g) => g * (self.v_dc - pot(self.layout.source_top)),
            None => self.current_into_stack(&x, state),
        };
        if let Some(g) = self.source_g {
            dissipation += source_current * source_current / g;
        }

        Ok((
            CircuitState { cap_voltages, branch_currents, time: state.time + dt },
            StepObservables {
                phase_voltages,
                cap_currents,
                source_current,
                source_power: self.v_dc * source_current,
                dissipation,
                integrator_loss,
            },
        ))
    }

    /// Current leaving the fixed source node into the stack.
    fn current_into_stack(&self, x: &DVector<f64>, state: &CircuitState) -> f64 {
        let top = self.layout.source_top;
        let pot = |r: NodeRef| Self::potential(x, r);
        let mut i = 0.0;
        for c in &self.switches {
            if c.a == top {
                i += c.g * (pot(c.a) - pot(c.b));
            } else if c.b == top {
                i += c.g * (pot(c.b) - pot(c.a));
            }
        }
        for c in &self.caps {
            let v_prev = state.cap_voltages[c.phase][c.index];
            let ic = c.g_eq * (pot(c.a) - pot(c.b) - v_prev);
            if c.a == top {
                i += ic;
            } else if c.b == top {
                i -= ic;
            }
        }
        i
    }
}

fn fixed_injection(a: NodeRef, b: NodeRef, g: f64, inject: &mut impl FnMut(NodeRef, f64)) {
    match (a, b) {
        (NodeRef::Unknown(_), NodeRef::Fixed(v)) => inject(a, g * v),
        (NodeRef::Fixed(v), NodeRef::Unknown(_)) => inject(b, g * v),
        _ => {}
    }
}

fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|r| (0..n).map(|c| m[r * n + c] * v[c]).sum()).collect()
}

fn stamp(matrix: &mut DMatrix<f64>, a: NodeRef, b: NodeRef, g: f64) {
    if let NodeRef::Unknown(i) = a {
        matrix[(i, i)] += g;
    }
    if let NodeRef::Unknown(j) = b {
        matrix[(j, j)] += g;
    }
    if let (NodeRef::Unknown(i), NodeRef::Unknown(j)) = (a, b) {
        matrix[(i, j)] -= g;
        matrix[(j, i)] -= g;
    }
}

/// Nodes with no conductive path to a fixed-potential node.
fn floating_islands(layout: &StackLayout, edges: &[(NodeRef, NodeRef)]) -> Vec<usize> {
    let n = layout.len();
    // index n stands for "any fixed node"
    let mut parent: Vec<usize> = (0..=n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    let idx = |r: NodeRef| match r {
        NodeRef::Unknown(k) => k,
        NodeRef::Fixed(_) => n,
    };
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, idx(a)), find(&mut parent, idx(b)));
        parent[ra] = rb;
    }
    let ground = find(&mut parent, n);
    (0..n).filter(|&k| find(&mut parent, k) != ground).collect()
}

/// Shared, gate-independent part of the network.
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    cfg: SystemConfig,
    sm: LadderSubModule,
    layout: StackLayout,
    load_y: Vec<f64>,
    load_hist: Vec<f64>,
    load_r: Vec<f64>,
    g_eq: f64,
}

impl NetworkBuilder {
    pub fn new(cfg: &SystemConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        let sm = LadderSubModule::new(cfg.levels).with_balance_in_zero(cfg.balance_in_zero);
        let layout = StackLayout::new(cfg, &sm);
        let n = cfg.phases;
        let l = cfg.load.inductance_matrix(n);
        let load_r: Vec<f64> = (0..n).map(|k| cfg.load.resistance(k)).collect();
        let mut z = DMatrix::<f64>::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                z[(r, c)] = l[r * n + c] / cfg.dt + if r == c { load_r[r] } else { 0.0 };
            }
        }
        let y = z
            .try_inverse()
            .ok_or_else(|| SolverError::Singular { time: 0.0, detail: "load impedance matrix is singular".into() })?;
        let lm = DMatrix::from_row_slice(n, n, &l) / cfg.dt;
        let hist = &y * lm;
        let flat = |m: &DMatrix<f64>| (0..n * n).map(|k| m[(k / n, k % n)]).collect::<Vec<f64>>();
        Ok(Self {
            cfg: cfg.clone(),
            sm,
            layout,
            load_y: flat(&y),
            load_hist: flat(&hist),
            load_r,
            g_eq: 1.0 / (cfg.cap_esr + cfg.dt / cfg.capacitance),
        })
    }

    pub fn submodule(&self) -> &LadderSubModule {
        &self.sm
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    /// Stamps and factorizes the network for one gate vector per phase.
    pub fn build(&self, vectors: &[SwitchVector]) -> Result<NetlistSnapshot, SolverError> {
        let cfg = &self.cfg;
        let n = cfg.phases;
        if vectors.len() != n {
            return Err(SolverError::Dimension(format!("{} gate vectors for {n} phases", vectors.len())));
        }
        let layout = &self.layout;
        let g_on = 1.0 / cfg.r_on;
        let mut switches = Vec::new();
        let mut caps = Vec::new();
        let mut out_right = Vec::with_capacity(n);
        let mut out_left = Vec::with_capacity(n);
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != self.sm.levels().switches() {
                return Err(SolverError::Switching {
                    time: 0.0,
                    source: SwitchingError::WrongLength { got: v.len(), expected: self.sm.levels().switches() },
                });
            }
            self.sm.validate_no_short(v).map_err(|r| SolverError::Switching { time: 0.0, source: r.into() })?;
            for sw in &self.sm.network().switches {
                let g = if v.s(sw.index) { g_on } else { cfg.g_off };
                switches.push(Conductance { a: layout.node(&self.sm, i, sw.a), b: layout.node(&self.sm, i, sw.b), g });
            }
            for j in 1..=cfg.capacitors_per_sm() {
                caps.push(CapStamp {
                    phase: i,
                    index: j - 1,
                    a: layout.node(&self.sm, i, LocalNode::Top(j)),
                    b: layout.node(&self.sm, i, LocalNode::Bottom(j)),
                    g_eq: self.g_eq,
                });
            }
            out_right.push(layout.node(&self.sm, i, LocalNode::OutRight));
            out_left.push(layout.node(&self.sm, i, LocalNode::OutLeft));
        }

        let size = layout.len();
        let mut matrix = DMatrix::<f64>::zeros(size, size);
        let mut edges = Vec::new();
        for c in &switches {
            stamp(&mut matrix, c.a, c.b, c.g);
            edges.push((c.a, c.b));
        }
        for c in &caps {
            stamp(&mut matrix, c.a, c.b, c.g_eq);
            edges.push((c.a, c.b));
        }
        let source_g = (cfg.source_r > 0.0).then(|| 1.0 / cfg.source_r);
        if let Some(g) = source_g {
            stamp(&mut matrix, layout.source_top, NodeRef::Fixed(0.0), g);
            edges.push((layout.source_top, NodeRef::Fixed(0.0)));
        }
        for r in 0..n {
            for c in 0..n {
                let y = self.load_y[r * n + c];
                if y == 0.0 {
                    continue;
                }
                for (p, sp) in [(out_right[r], 1.0), (out_left[r], -1.0)] {
                    for (q, sq) in [(out_right[c], 1.0), (out_left[c], -1.0)] {
                        if let (NodeRef::Unknown(i), NodeRef::Unknown(j)) = (p, q) {
                            matrix[(i, j)] += sp * sq * y;
                        }
                    }
                }
            }
            edges.push((out_right[r], out_left[r]));
        }

        let islands = floating_islands(layout, &edges);
        if !islands.is_empty() {
            let names: Vec<&str> = islands.iter().map(|&k| layout.names[k].as_str()).collect();
            return Err(SolverError::Singular { time: 0.0, detail: format!("floating island: {}", names.join(", ")) });
        }
        let lu = matrix.clone().lu();
        if !lu.is_invertible() {
            return Err(SolverError::Singular { time: 0.0, detail: "nodal matrix is singular".into() });
        }
        Ok(NetlistSnapshot {
            layout: layout.clone(),
            dt: cfg.dt,
            v_dc: cfg.v_dc,
            source_g,
            switches,
            caps,
            capacitance: cfg.capacitance,
            cap_esr: cfg.cap_esr,
            out_right,
            out_left,
            load_r: self.load_r.clone(),
            load_l: self.cfg.load.inductance_matrix(n),
            load_y: self.load_y.clone(),
            load_hist: self.load_hist.clone(),
            matrix,
            lu,
            vectors: vectors.to_vec(),
        })
    }

    /// Energy stored in capacitors and windings.
    pub fn stored_energy(&self, state: &CircuitState) -> f64 {
        let c = self.cfg.capacitance;
        let caps: f64 = state.cap_voltages.iter().flatten().map(|v| 0.5 * c * v * v).sum();
        let n = self.cfg.phases;
        let l = self.cfg.load.inductance_matrix(n);
        let li = mat_vec(&l, &state.branch_currents);
        let ind: f64 = 0.5 * state.branch_currents.iter().zip(&li).map(|(a, b)| a * b).sum::<f64>();
        caps + ind
    }
}

pub fn build_network(cfg: &SystemConfig, vectors: &[SwitchVector]) -> Result<NetlistSnapshot, SolverError> {
    NetworkBuilder::new(cfg)?.build(vectors)
}

pub fn step(state: &CircuitState, snapshot: &NetlistSnapshot, dt: f64) -> Result<CircuitState, SolverError> {
    snapshot.step(state, dt).map(|(s, _)| s)
}

/// Which channel groups a run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecorderSpec {
    /// Steps between samples.
    pub decimation: usize,
    pub phase_voltages: bool,
    pub cap_voltages: bool,
    pub cap_currents: bool,
    pub load_currents: bool,
    pub source: bool,
    pub energy: bool,
}

impl RecorderSpec {
    pub fn all(decimation: usize) -> Self {
        Self {
            decimation: decimation.max(1),
            phase_voltages: true,
            cap_voltages: true,
            cap_currents: true,
            load_currents: true,
            source: true,
            energy: true,
        }
    }

    pub fn from_config(cfg: &SystemConfig) -> Self {
        Self::all(cfg.decimation())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub duration: f64,
    pub steps: usize,
    pub rebuilds: usize,
    pub source_energy: f64,
    pub dissipated_energy: f64,
    pub stored_energy_change: f64,
    /// Energy absorbed by the backward-Euler discretization.
    pub integrator_energy: f64,
    /// `|E_src - dE_stored - E_loss|` over the larger of `|E_src|` and `E_loss`.
    pub energy_residual: f64,
    pub final_state: CircuitState,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: WaveformRecord,
    pub summary: RunSummary,
}

pub(crate) fn cap_label(phase: usize, cap: usize, n: usize, nc: usize) -> String {
    if n > 9 || nc > 9 {
        format!("{}_{}", phase + 1, cap + 1)
    } else {
        format!("{}{}", phase + 1, cap + 1)
    }
}

/// Time-marching driver.
pub struct Simulator {
    builder: NetworkBuilder,
    bank: CarrierBank,
    state: CircuitState,
    snapshot: Option<NetlistSnapshot>,
    commands: Vec<LevelCommand>,
    step_index: usize,
    rebuilds: usize,
    averages: Vec<MovingAverage>,
    source_energy: f64,
    dissipated_energy: f64,
    integrator_energy: f64,
    initial_stored: f64,
}

impl Simulator {
    pub fn new(cfg: &SystemConfig) -> Result<Self, SolverError> {
        let builder = NetworkBuilder::new(cfg)?;
        let state = CircuitState::initial(cfg)?;
        let window = (1.0 / (cfg.fundamental_f * cfg.dt)).round() as usize;
        let initial_stored = builder.stored_energy(&state);
        Ok(Self {
            bank: CarrierBank::new(cfg.levels, cfg.carrier_f).with_phase(cfg.carrier_phase),
            averages: vec![MovingAverage::new(window); cfg.phases],
            builder,
            state,
            snapshot: None,
            commands: Vec::new(),
            step_index: 0,
            rebuilds: 0,
            source_energy: 0.0,
            dissipated_energy: 0.0,
            integrator_energy: 0.0,
            initial_stored,
        })
    }

    pub fn state(&self) -> &CircuitState {
        &self.state
    }

    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    pub fn config(&self) -> &SystemConfig {
        self.builder.config()
    }

    /// Cycle-averaged bus capacitor voltage per phase.
    pub fn averaged_bus_voltages(&self) -> Vec<f64> {
        self.averages.iter().map(|a| a.mean()).collect()
    }

    fn modulation_indices(&self) -> Vec<f64> {
        let cfg = self.builder.config();
        let mi = cfg.modulation_index;
        if !cfg.control.any_enabled() || self.step_index == 0 {
            return vec![mi; cfg.phases];
        }
        let v_avg = cfg.nominal_cap_voltage();
        let lim = &cfg.control.limiter;
        let enabled = [cfg.control.mi_limiter, cfg.control.current_limiter, cfg.control.torque_limiter]
            .iter()
            .filter(|&&on| on)
            .count() as i32;
        self.averages.iter().map(|a| (mi * lim.correction(a.mean(), v_avg).powi(enabled)).min(1.0)).collect()
    }

    fn level_commands(&self, t: f64) -> Vec<LevelCommand> {
        let cfg = self.builder.config();
        let n = cfg.phases;
        let mis = self.modulation_indices();
        (1..=n)
            .map(|i| {
                let r = mis[i - 1] * (TAU * cfg.fundamental_f * t + TAU * i as f64 / n as f64).sin();
                match cfg.mode {
                    ModulationMode::Pwm => pwm_level(t, r, &self.bank, cfg.levels),
                    ModulationMode::Staircase => staircase_level(r, cfg.levels),
                }
            })
            .collect()
    }

    /// Advances one step; returns the observables at the new time.
    pub fn advance(&mut self) -> Result<StepObservables, SolverError> {
        let dt = self.builder.config().dt;
        let t = (self.step_index + 1) as f64 * dt;
        let commands = self.level_commands(t);
        if self.snapshot.is_none() || commands != self.commands {
            let sm = self.builder.submodule();
            let vectors = commands
                .iter()
                .map(|c| sm.level_to_switch_vector(*c))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|source| SolverError::Switching { time: t, source })?;
            let changed = self.snapshot.as_ref().is_none_or(|s| s.vectors() != vectors.as_slice());
            if changed {
                self.snapshot = Some(self.builder.build(&vectors).map_err(|e| with_time(e, t))?);
                self.rebuilds += 1;
            }
            self.commands = commands;
        }
        let snap = self.snapshot.as_ref().expect("snapshot built above");
        let (mut next, obs) = snap.step(&self.state, dt).map_err(|e| with_time(e, t))?;
        next.time = t;
        self.state = next;
        self.step_index += 1;
        self.source_energy += obs.source_power * dt;
        self.dissipated_energy += obs.dissipation * dt;
        self.integrator_energy += obs.integrator_loss;
        for (avg, row) in self.averages.iter_mut().zip(&self.state.cap_voltages) {
            avg.push(row[0]);
        }
        Ok(obs)
    }

    pub fn source_energy(&self) -> f64 {
        self.source_energy
    }

    pub fn dissipated_energy(&self) -> f64 {
        self.dissipated_energy
    }

    pub fn stored_energy_change(&self) -> f64 {
        self.builder.stored_energy(&self.state) - self.initial_stored
    }

    pub fn summary(&self) -> RunSummary {
        let d_stored = self.stored_energy_change();
        let scale = self.source_energy.abs().max(self.dissipated_energy).max(f64::MIN_POSITIVE);
        RunSummary {
            duration: self.state.time,
            steps: self.step_index,
            rebuilds: self.rebuilds,
            source_energy: self.source_energy,
            dissipated_energy: self.dissipated_energy,
            stored_energy_change: d_stored,
            integrator_energy: self.integrator_energy,
            energy_residual: (self.source_energy - d_stored - self.dissipated_energy).abs() / scale,
            final_state: self.state.clone(),
        }
    }
}

fn with_time(e: SolverError, t: f64) -> SolverError {
    match e {
        SolverError::Singular { detail, .. } => SolverError::Singular { time: t, detail },
        SolverError::Switching { source, .. } => SolverError::Switching { time: t, source },
        other => other,
    }
}

/// Runs `cfg.duration` seconds and records the requested channels.
pub fn run(cfg: &SystemConfig, recorder: &RecorderSpec) -> Result<RunOutput, SolverError> {
    let mut sim = Simulator::new(cfg)?;
    let n = cfg.phases;
    let nc = cfg.capacitors_per_sm();
    let steps = cfg.steps();
    let dec = recorder.decimation.max(1);
    let rows = steps / dec;

    let mut phase_v = vec![Vec::with_capacity(rows); n];
    let mut cap_v = vec![vec![Vec::with_capacity(rows); nc]; n];
    let mut cap_i = vec![vec![Vec::with_capacity(rows); nc]; n];
    let mut load_i = vec![Vec::with_capacity(rows); n];
    let mut src_i = Vec::with_capacity(rows);
    let mut e_src = Vec::with_capacity(rows);
    let mut e_loss = Vec::with_capacity(rows);
    let mut e_store = Vec::with_capacity(rows);

    for k in 1..=steps {
        let obs = sim.advance()?;
        if k % dec != 0 {
            continue;
        }
        let st = sim.state();
        for i in 0..n {
            phase_v[i].push(obs.phase_voltages[i]);
            load_i[i].push(st.branch_currents[i]);
            for j in 0..nc {
                cap_v[i][j].push(st.cap_voltages[i][j]);
                cap_i[i][j].push(obs.cap_currents[i][j]);
            }
        }
        src_i.push(obs.source_current);
        if recorder.energy {
            e_src.push(sim.source_energy());
            e_loss.push(sim.dissipated_energy());
            e_store.push(sim.stored_energy_change());
        }
    }

    let mut record = WaveformRecord::new(dec as f64 * cfg.dt, dec as f64 * cfg.dt);
    record.config_digest = Some(cfg.digest());
    if recorder.phase_voltages {
        for (i, s) in phase_v.into_iter().enumerate() {
            record.add_channel(format!("V_{}", i + 1), "V", s);
        }
    }
    if recorder.cap_voltages {
        for (i, row) in cap_v.into_iter().enumerate() {
            for (j, s) in row.into_iter().enumerate() {
                record.add_channel(format!("V_C{}", cap_label(i, j, n, nc)), "V", s);
            }
        }
    }
    if recorder.cap_currents {
        for (i, row) in cap_i.into_iter().enumerate() {
            for (j, s) in row.into_iter().enumerate() {
                record.add_channel(format!("I_C{}", cap_label(i, j, n, nc)), "A", s);
            }
        }
    }
    if recorder.load_currents {
        for (i, s) in load_i.into_iter().enumerate() {
            record.add_channel(format!("I_{}", i + 1), "A", s);
        }
    }
    if recorder.source {
        record.add_channel("I_SRC", "A", src_i);
    }
    if recorder.energy {
        record.add_channel("E_SRC", "J", e_src);
        record.add_channel("E_LOSS", "J", e_loss);
        record.add_channel("E_STORE", "J", e_store);
    }
    Ok(RunOutput { record, summary: sim.summary() })
}

/// Zero-level command for every phase, useful for static checks.
pub fn all_zero(n: usize) -> Vec<LevelCommand> {
    vec![LevelCommand::new(0, Polarity::Positive); n]
}
