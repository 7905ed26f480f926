//! Multiphase feeder topology and bus admittance assembly.
//!
//! A feeder is a graph of buses joined by series-impedance lines. Every phase
//! of a non-slack bus is a *node* and owns one state index; slack phases are
//! indexed after all nodes so the admittance matrix splits as
//!
//! ```text
//!         ┌ Y_LL  Y_L0 ┐   n rows  (non-slack nodes)
//!     Y = │            │
//!         └ Y_0L  Y_00 ┘   s rows  (slack phases)
//! ```
//!
//! Node order is ascending bus id, then phase a, b, c. All quantities are
//! stored in per-unit on the feeder's (voltage, power) base.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }

    /// Balanced source angle in degrees.
    pub fn nominal_angle_deg(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -120.0,
            Phase::C => 120.0,
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Parses a phase string such as `"abc"` or `"cb"`, preserving its order.
pub fn parse_phase_list(text: &str) -> std::result::Result<Vec<Phase>, String> {
    let mut out = Vec::with_capacity(3);
    for c in text.chars() {
        let phase = Phase::from_char(c).ok_or_else(|| format!("unknown phase '{c}'"))?;
        if out.contains(&phase) {
            return Err(format!("phase '{c}' listed twice in \"{text}\""));
        }
        out.push(phase);
    }
    if out.is_empty() {
        return Err("empty phase list".to_string());
    }
    Ok(out)
}

/// Unordered set of phases present on a bus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub fn from_phases(phases: &[Phase]) -> Self {
        PhaseSet(phases.iter().fold(0, |acc, p| acc | p.bit()))
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        parse_phase_list(text).map(|v| Self::from_phases(&v))
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & phase.bit() != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Phases in canonical a, b, c order.
    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub phases: PhaseSet,
    pub is_slack: bool,
    /// Slack phasors per phase (canonical order); `None` means balanced 1 pu.
    pub slack_voltage: Option<Vec<Complex64>>,
}

impl Bus {
    pub fn new(id: u32, phases: PhaseSet, is_slack: bool) -> Self {
        Bus {
            id,
            phases,
            is_slack,
            slack_voltage: None,
        }
    }

    fn source_voltage(&self, phase: Phase) -> Complex64 {
        if let Some(v) = &self.slack_voltage {
            if let Some(pos) = self.phases.iter().position(|p| p == phase) {
                return v[pos];
            }
        }
        Complex64::from_polar(1.0, phase.nominal_angle_deg().to_radians())
    }
}

/// Series line between two buses. Impedance is per-unit, rows/columns in
/// the order of `phases`.
#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub from_bus: u32,
    pub to_bus: u32,
    pub phases: Vec<Phase>,
    pub impedance: DMatrix<Complex64>,
}

impl Line {
    pub fn new(from_bus: u32, to_bus: u32, phases: Vec<Phase>, impedance: DMatrix<Complex64>) -> Self {
        Line {
            from_bus,
            to_bus,
            phases,
            impedance,
        }
    }

    fn location(&self, pos: usize) -> String {
        format!("line {pos} ({} -> {})", self.from_bus, self.to_bus)
    }

    /// Series admittance `inverse(z)`, symmetrized so assembly stays exactly symmetric.
    pub fn admittance(&self) -> Result<DMatrix<Complex64>> {
        let z = &self.impedance;
        let singular = || Error::Singular(format!("impedance of line {} -> {}", self.from_bus, self.to_bus));
        let inv = z.clone().try_inverse().ok_or_else(singular)?;
        let zmax = z.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let ymax = inv.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if !ymax.is_finite() || zmax * ymax > 1e12 {
            return Err(singular());
        }
        let half = Complex64::new(0.5, 0.0);
        Ok((&inv + inv.transpose()) * half)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Node {
    pub bus_id: u32,
    pub phase: Phase,
    pub index: usize,
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.bus_id, self.phase)
    }
}

/// Row/column positions of every bus phase in the admittance matrix.
#[derive(Clone, Debug)]
struct Indexing {
    nodes: Vec<Node>,
    slack: Vec<(u32, Phase)>,
    position: BTreeMap<(u32, Phase), usize>,
}

impl Indexing {
    fn new(buses: &[Bus]) -> Self {
        let mut sorted: Vec<&Bus> = buses.iter().collect();
        sorted.sort_by_key(|b| b.id);
        let mut nodes = Vec::new();
        let mut slack = Vec::new();
        for bus in &sorted {
            for phase in bus.phases.iter() {
                if bus.is_slack {
                    slack.push((bus.id, phase));
                } else {
                    nodes.push(Node {
                        bus_id: bus.id,
                        phase,
                        index: nodes.len(),
                    });
                }
            }
        }
        let mut position = BTreeMap::new();
        for node in &nodes {
            position.insert((node.bus_id, node.phase), node.index);
        }
        let n = nodes.len();
        for (k, key) in slack.iter().enumerate() {
            position.insert(*key, n + k);
        }
        Indexing { nodes, slack, position }
    }

    fn size(&self) -> usize {
        self.nodes.len() + self.slack.len()
    }
}

/// Assembles the bus admittance matrix from series line admittances.
///
/// Off-diagonal blocks of adjacent buses hold `-y_ij` on the shared phases and
/// diagonal blocks accumulate the incident line admittances. Rows are ordered
/// non-slack nodes first, then slack phases.
pub fn assemble_ybus(buses: &[Bus], lines: &[Line]) -> Result<DMatrix<Complex64>> {
    let idx = Indexing::new(buses);
    assemble_with(&idx, lines)
}

fn assemble_with(idx: &Indexing, lines: &[Line]) -> Result<DMatrix<Complex64>> {
    let size = idx.size();
    let mut y = DMatrix::<Complex64>::zeros(size, size);
    for (pos, line) in lines.iter().enumerate() {
        let adm = line.admittance()?;
        let lookup = |bus: u32, phase: Phase| {
            idx.position
                .get(&(bus, phase))
                .copied()
                .ok_or_else(|| Error::validation(line.location(pos), format!("phase {phase} missing on bus {bus}")))
        };
        let from: Vec<usize> = line
            .phases
            .iter()
            .map(|&p| lookup(line.from_bus, p))
            .collect::<Result<_>>()?;
        let to: Vec<usize> = line
            .phases
            .iter()
            .map(|&p| lookup(line.to_bus, p))
            .collect::<Result<_>>()?;
        for a in 0..line.phases.len() {
            for b in 0..line.phases.len() {
                let v = adm[(a, b)];
                y[(from[a], from[b])] += v;
                y[(to[a], to[b])] += v;
                y[(from[a], to[b])] -= v;
                y[(to[a], from[b])] -= v;
            }
        }
    }
    Ok(y)
}

/// Validated feeder with assembled admittance matrix and a factorized `Y_LL`.
#[derive(Clone, Debug)]
pub struct FeederModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    base_voltage: f64,
    base_power: f64,
    nodes: Vec<Node>,
    slack_nodes: Vec<(u32, Phase)>,
    index_map: BTreeMap<(u32, Phase), usize>,
    load_nodes: Vec<usize>,
    is_load: Vec<bool>,
    ybus: DMatrix<Complex64>,
    v_slack: DVector<Complex64>,
    y_l0: DMatrix<Complex64>,
    y_ll_lu: LU<Complex64, Dyn, Dyn>,
    v_noload: DVector<Complex64>,
}

impl FeederModel {
    /// Builds and validates a model from per-unit buses and lines.
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        base_voltage: f64,
        base_power: f64,
        load_nodes: &[(u32, Phase)],
    ) -> Result<Self> {
        if !(base_voltage.is_finite() && base_voltage > 0.0) {
            return Err(Error::validation("feeder", "base_voltage_v must be positive"));
        }
        if !(base_power.is_finite() && base_power > 0.0) {
            return Err(Error::validation("feeder", "base_power_va must be positive"));
        }
        validate_buses(&buses)?;
        validate_lines(&buses, &lines)?;
        check_connected(&buses, &lines)?;

        let mut buses = buses;
        buses.sort_by_key(|b| b.id);
        let idx = Indexing::new(&buses);
        let n = idx.nodes.len();

        let mut is_load = vec![false; n];
        for (k, &(bus, phase)) in load_nodes.iter().enumerate() {
            let loc = format!("load_nodes[{k}]");
            match idx.position.get(&(bus, phase)) {
                Some(&i) if i < n => {
                    if is_load[i] {
                        return Err(Error::validation(loc, format!("node {bus}.{phase} listed twice")));
                    }
                    is_load[i] = true;
                }
                Some(_) => {
                    return Err(Error::validation(
                        loc,
                        format!("node {bus}.{phase} is on the slack bus"),
                    ))
                }
                None => return Err(Error::validation(loc, format!("node {bus}.{phase} does not exist"))),
            }
        }
        let load_idx = (0..n).filter(|&i| is_load[i]).collect();

        let ybus = assemble_with(&idx, &lines)?;
        let s = idx.slack.len();
        let slack_bus = buses.iter().find(|b| b.is_slack).expect("validated slack bus");
        let v_slack = DVector::from_iterator(s, idx.slack.iter().map(|&(_, p)| slack_bus.source_voltage(p)));

        let y_ll = ybus.view((0, 0), (n, n)).into_owned();
        let y_l0 = ybus.view((0, n), (n, s)).into_owned();
        let lu = y_ll.lu();
        let diag: Vec<f64> = lu.u().diagonal().iter().map(|c| c.norm()).collect();
        let dmax = diag.iter().copied().fold(0.0, f64::max);
        let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
        if n > 0 && !(dmin > 1e-13 * dmax) {
            return Err(Error::Singular("non-slack block Y_LL of the admittance matrix".into()));
        }
        let rhs = -(&y_l0 * &v_slack);
        let v_noload = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("non-slack block Y_LL of the admittance matrix".into()))?;

        Ok(FeederModel {
            buses,
            lines,
            base_voltage,
            base_power,
            nodes: idx.nodes,
            slack_nodes: idx.slack,
            index_map: idx.position.into_iter().filter(|&(_, i)| i < n).collect(),
            load_nodes: load_idx,
            is_load,
            ybus,
            v_slack,
            y_l0,
            y_ll_lu: lu,
            v_noload,
        })
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn base_voltage(&self) -> f64 {
        self.base_voltage
    }

    pub fn base_power(&self) -> f64 {
        self.base_power
    }

    pub fn base_impedance(&self) -> f64 {
        self.base_voltage * self.base_voltage / self.base_power
    }

    /// Number of non-slack nodes `n`; the state vector has length `2n`.
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_slack(&self) -> usize {
        self.slack_nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn slack_nodes(&self) -> &[(u32, Phase)] {
        &self.slack_nodes
    }

    pub fn load_nodes(&self) -> &[usize] {
        &self.load_nodes
    }

    pub fn is_load(&self, node: usize) -> bool {
        self.is_load[node]
    }

    /// Full `(n+s) × (n+s)` admittance matrix.
    pub fn ybus(&self) -> &DMatrix<Complex64> {
        &self.ybus
    }

    pub fn y_ll(&self) -> DMatrix<Complex64> {
        let n = self.n_nodes();
        self.ybus.view((0, 0), (n, n)).into_owned()
    }

    pub fn y_l0(&self) -> &DMatrix<Complex64> {
        &self.y_l0
    }

    pub(crate) fn y_ll_lu(&self) -> &LU<Complex64, Dyn, Dyn> {
        &self.y_ll_lu
    }

    pub fn slack_voltage(&self) -> &DVector<Complex64> {
        &self.v_slack
    }

    /// Voltages with every injection at zero: `-Y_LL⁻¹ Y_L0 V₀`.
    pub fn no_load_voltage(&self) -> &DVector<Complex64> {
        &self.v_noload
    }

    /// State index of a non-slack bus phase.
    pub fn node_index(&self, bus_id: u32, phase: Phase) -> Result<usize> {
        if let Some(&i) = self.index_map.get(&(bus_id, phase)) {
            return Ok(i);
        }
        if self.slack_nodes.contains(&(bus_id, phase)) {
            return Err(Error::SlackNode {
                bus: bus_id,
                phase: phase.as_char(),
            });
        }
        Err(Error::UnknownNode {
            bus: bus_id,
            phase: phase.as_char(),
        })
    }

    /// Inverse of [`FeederModel::node_index`].
    pub fn node(&self, index: usize) -> Result<Node> {
        self.nodes.get(index).copied().ok_or(Error::Dimension {
            context: "node index",
            expected: self.nodes.len(),
            got: index,
        })
    }
}

fn validate_buses(buses: &[Bus]) -> Result<()> {
    let mut seen = BTreeSet::new();
    let mut slack_count = 0;
    for bus in buses {
        let loc = format!("bus {}", bus.id);
        if !seen.insert(bus.id) {
            return Err(Error::validation(loc, "duplicate bus id"));
        }
        if bus.phases.is_empty() {
            return Err(Error::validation(loc, "bus has no phases"));
        }
        if bus.is_slack {
            slack_count += 1;
            if bus.id != 0 {
                return Err(Error::validation(loc, "only bus 0 may be the slack bus"));
            }
        }
        if let Some(v) = &bus.slack_voltage {
            if !bus.is_slack {
                return Err(Error::validation(loc, "slack_voltage given on a non-slack bus"));
            }
            if v.len() != bus.phases.len() {
                return Err(Error::validation(
                    loc,
                    format!("slack_voltage has {} entries for {} phases", v.len(), bus.phases.len()),
                ));
            }
        }
    }
    match slack_count {
        0 => Err(Error::validation(
            "feeder",
            "missing slack bus (bus 0 with slack = true)",
        )),
        1 => Ok(()),
        _ => unreachable!("non-zero slack ids rejected above"),
    }
}

fn validate_lines(buses: &[Bus], lines: &[Line]) -> Result<()> {
    let phases_of = |id: u32| buses.iter().find(|b| b.id == id).map(|b| b.phases);
    let mut pairs = BTreeSet::new();
    for (pos, line) in lines.iter().enumerate() {
        let loc = line.location(pos);
        if line.from_bus == line.to_bus {
            return Err(Error::validation(loc, "line connects a bus to itself"));
        }
        let key = (line.from_bus.min(line.to_bus), line.from_bus.max(line.to_bus));
        if !pairs.insert(key) {
            return Err(Error::validation(loc, "duplicate line between the same buses"));
        }
        if line.phases.is_empty() {
            return Err(Error::validation(loc, "line has no phases"));
        }
        for bus in [line.from_bus, line.to_bus] {
            let present = phases_of(bus).ok_or_else(|| Error::validation(&loc, format!("unknown bus {bus}")))?;
            for &p in &line.phases {
                if !present.contains(p) {
                    return Err(Error::validation(
                        &loc,
                        format!("phase {p} is not present on bus {bus} (phases \"{present}\")"),
                    ));
                }
            }
        }
        let l = line.phases.len();
        if line.impedance.shape() != (l, l) {
            return Err(Error::validation(
                &loc,
                format!("impedance is {:?}, expected {l}x{l}", line.impedance.shape()),
            ));
        }
        let z = &line.impedance;
        let zmax = z.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if z.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::validation(&loc, "impedance has non-finite entries"));
        }
        for a in 0..l {
            for b in (a + 1)..l {
                if (z[(a, b)] - z[(b, a)]).norm() > 1e-9 * zmax {
                    return Err(Error::validation(&loc, "impedance matrix is not symmetric"));
                }
            }
        }
        line.admittance()
            .map_err(|_| Error::validation(&loc, "impedance matrix is singular"))?;
    }
    Ok(())
}

/// Every non-slack bus phase must reach a slack phase through line phases.
fn check_connected(buses: &[Bus], lines: &[Line]) -> Result<()> {
    let mut reached: BTreeSet<(u32, Phase)> = BTreeSet::new();
    let mut queue = VecDeque::new();
    for bus in buses.iter().filter(|b| b.is_slack) {
        for p in bus.phases.iter() {
            reached.insert((bus.id, p));
            queue.push_back((bus.id, p));
        }
    }
    while let Some((bus, phase)) = queue.pop_front() {
        for line in lines.iter().filter(|l| l.phases.contains(&phase)) {
            let other = if line.from_bus == bus {
                line.to_bus
            } else if line.to_bus == bus {
                line.from_bus
            } else {
                continue;
            };
            if reached.insert((other, phase)) {
                queue.push_back((other, phase));
            }
        }
    }
    let mut sorted: Vec<&Bus> = buses.iter().collect();
    sorted.sort_by_key(|b| b.id);
    for bus in sorted {
        for p in bus.phases.iter() {
            if !reached.contains(&(bus.id, p)) {
                return Err(Error::validation(
                    format!("bus {}", bus.id),
                    format!("phase {p} is disconnected from the slack bus"),
                ));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Feeder document
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeederDocument {
    pub base_voltage_v: f64,
    pub base_power_va: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<LineRecord>,
    pub load_nodes: Vec<NodeRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRecord {
    pub id: u32,
    pub phases: String,
    #[serde(default)]
    pub slack: bool,
    /// `[magnitude_pu, angle_deg]` per phase, in the order of `phases`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack_voltage: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineRecord {
    pub from: u32,
    pub to: u32,
    pub phases: String,
    pub r_ohm: Vec<Vec<f64>>,
    pub x_ohm: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub bus: u32,
    pub phase: String,
}

impl FeederDocument {
    pub fn into_model(self) -> Result<FeederModel> {
        let z_base = self.base_voltage_v * self.base_voltage_v / self.base_power_va;
        let mut buses = Vec::with_capacity(self.buses.len());
        for rec in &self.buses {
            let loc = format!("bus {}", rec.id);
            let order = parse_phase_list(&rec.phases).map_err(|m| Error::validation(&loc, m))?;
            let mut bus = Bus::new(rec.id, PhaseSet::from_phases(&order), rec.slack);
            if let Some(v) = &rec.slack_voltage {
                if v.len() != order.len() {
                    return Err(Error::validation(
                        &loc,
                        format!("slack_voltage has {} entries for {} phases", v.len(), order.len()),
                    ));
                }
                // store in canonical order
                let mut canon = Vec::with_capacity(order.len());
                for p in bus.phases.iter() {
                    let k = order.iter().position(|&q| q == p).expect("phase from same list");
                    let [mag, ang] = v[k];
                    canon.push(Complex64::from_polar(mag, ang.to_radians()));
                }
                bus.slack_voltage = Some(canon);
            }
            buses.push(bus);
        }

        let mut lines = Vec::with_capacity(self.lines.len());
        for (pos, rec) in self.lines.iter().enumerate() {
            let loc = format!("line {pos} ({} -> {})", rec.from, rec.to);
            let phases = parse_phase_list(&rec.phases).map_err(|m| Error::validation(&loc, m))?;
            let l = phases.len();
            let shape_ok = |m: &Vec<Vec<f64>>| m.len() == l && m.iter().all(|row| row.len() == l);
            if !shape_ok(&rec.r_ohm) || !shape_ok(&rec.x_ohm) {
                return Err(Error::validation(
                    &loc,
                    format!("r_ohm and x_ohm must be {l}x{l} for phases \"{}\"", rec.phases),
                ));
            }
            let z = DMatrix::from_fn(l, l, |a, b| Complex64::new(rec.r_ohm[a][b], rec.x_ohm[a][b]) / z_base);
            lines.push(Line::new(rec.from, rec.to, phases, z));
        }

        let mut loads = Vec::with_capacity(self.load_nodes.len());
        for (k, rec) in self.load_nodes.iter().enumerate() {
            let mut chars = rec.phase.chars();
            let phase = match (chars.next().and_then(Phase::from_char), chars.next()) {
                (Some(p), None) => p,
                _ => {
                    return Err(Error::validation(
                        format!("load_nodes[{k}]"),
                        format!("invalid phase \"{}\"", rec.phase),
                    ))
                }
            };
            loads.push((rec.bus, phase));
        }

        FeederModel::new(buses, lines, self.base_voltage_v, self.base_power_va, &loads)
    }
}

/// Parses and validates a feeder document.
pub fn load_feeder(text: &str) -> Result<FeederModel> {
    let doc: FeederDocument = serde_json::from_str(text).map_err(|e| Error::Parse(format!("feeder document: {e}")))?;
    doc.into_model()
}

/// Feeders shipped with the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeederTemplate {
    /// Single-phase, one line of `0.01 + 0.01i` pu.
    TwoBus,
    /// Three-phase radial chain of three lines.
    FourBus,
    /// IEEE 13-node test feeder topology with series-only lines (29 nodes).
    ThirteenNode,
}

impl FeederTemplate {
    pub const ALL: [FeederTemplate; 3] = [
        FeederTemplate::TwoBus,
        FeederTemplate::FourBus,
        FeederTemplate::ThirteenNode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeederTemplate::TwoBus => "2bus",
            FeederTemplate::FourBus => "4bus",
            FeederTemplate::ThirteenNode => "13node",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn document(self) -> &'static str {
        match self {
            FeederTemplate::TwoBus => include_str!("../feeders/two_bus.json"),
            FeederTemplate::FourBus => include_str!("../feeders/four_bus.json"),
            FeederTemplate::ThirteenNode => include_str!("../feeders/ieee13.json"),
        }
    }

    pub fn load(self) -> FeederModel {
        load_feeder(self.document()).expect("embedded feeder is valid")
    }
}
