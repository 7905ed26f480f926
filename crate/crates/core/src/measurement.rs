//! Meters, synthetic measurement batches and asynchronous arrival subsets.

use std::fmt;
use std::io;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::powerflow::{linearize_at, InjectionVector, SensitivityMatrix};

/// Standard deviation given to virtual zero-injection meters. Their rows only
/// touch coordinates that the estimators pin to zero, so the value never
/// enters a gain matrix.
pub const VIRTUAL_SIGMA: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterKind {
    VoltageMag,
    PseudoP,
    PseudoQ,
    VirtualP,
    VirtualQ,
}

impl MeterKind {
    pub fn label(self) -> &'static str {
        match self {
            MeterKind::VoltageMag => "voltage_mag",
            MeterKind::PseudoP => "pseudo_p",
            MeterKind::PseudoQ => "pseudo_q",
            MeterKind::VirtualP => "virtual_p",
            MeterKind::VirtualQ => "virtual_q",
        }
    }

    pub fn is_virtual(self) -> bool {
        matches!(self, MeterKind::VirtualP | MeterKind::VirtualQ)
    }

    pub fn is_pseudo(self) -> bool {
        matches!(self, MeterKind::PseudoP | MeterKind::PseudoQ)
    }

    /// State column read directly by injection meters.
    pub fn state_column(self, node: usize, n: usize) -> Option<usize> {
        match self {
            MeterKind::VoltageMag => None,
            MeterKind::PseudoP | MeterKind::VirtualP => Some(node),
            MeterKind::PseudoQ | MeterKind::VirtualQ => Some(n + node),
        }
    }
}

impl fmt::Display for MeterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MeterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            MeterKind::VoltageMag,
            MeterKind::PseudoP,
            MeterKind::PseudoQ,
            MeterKind::VirtualP,
            MeterKind::VirtualQ,
        ]
        .into_iter()
        .find(|k| k.label() == s)
        .ok_or_else(|| Error::Parse(format!("unknown meter kind \"{s}\"")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Meter {
    pub id: usize,
    pub kind: MeterKind,
    pub node: usize,
    pub sigma: f64,
}

impl Meter {
    /// A meter whose id is assigned when it joins a [`MeterSet`].
    pub fn new(kind: MeterKind, node: usize, sigma: f64) -> Self {
        Meter {
            id: 0,
            kind,
            node,
            sigma,
        }
    }

    pub fn weight(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }

    /// `h_i(z)` given the voltage magnitudes that belong to `z`.
    pub fn predict(&self, z: &DVector<f64>, v_mag: &DVector<f64>) -> f64 {
        match self.kind.state_column(self.node, v_mag.len()) {
            Some(col) => z[col],
            None => v_mag[self.node],
        }
    }

    /// Adds `scale · ∂h_i/∂z` to `acc`.
    pub fn accumulate_row(&self, sens: &SensitivityMatrix, scale: f64, acc: &mut DVector<f64>) {
        let n = sens.n_nodes();
        match self.kind.state_column(self.node, n) {
            Some(col) => acc[col] += scale,
            None => acc.axpy(scale, &sens.h.row(self.node).transpose(), 1.0),
        }
    }
}

/// Ordered meter list; a meter's id is its position.
#[derive(Clone, Debug, PartialEq)]
pub struct MeterSet {
    meters: Vec<Meter>,
    voltage_nodes: Vec<usize>,
}

impl MeterSet {
    /// Wraps meters without feeder validation, renumbering ids by position.
    pub fn from_meters(mut meters: Vec<Meter>) -> Self {
        for (i, m) in meters.iter_mut().enumerate() {
            m.id = i;
        }
        let voltage_nodes = meters
            .iter()
            .filter(|m| m.kind == MeterKind::VoltageMag)
            .map(|m| m.node)
            .collect();
        MeterSet { meters, voltage_nodes }
    }

    /// Wraps meters after checking placement rules and observability on `model`.
    pub fn new(model: &FeederModel, meters: Vec<Meter>) -> Result<Self> {
        let n = model.n_nodes();
        for (i, m) in meters.iter().enumerate() {
            let loc = format!("meter {i}");
            if m.node >= n {
                return Err(Error::validation(
                    loc,
                    format!("node {} out of range (n = {n})", m.node),
                ));
            }
            if !(m.sigma > 0.0 && m.sigma.is_finite()) {
                return Err(Error::validation(loc, "sigma must be positive"));
            }
            if m.kind.is_pseudo() && !model.is_load(m.node) {
                return Err(Error::validation(
                    loc,
                    format!("pseudo meter on non-load node {}", m.node),
                ));
            }
            if m.kind.is_virtual() && model.is_load(m.node) {
                return Err(Error::validation(loc, format!("virtual meter on load node {}", m.node)));
            }
        }
        let set = Self::from_meters(meters);
        let rank = set.observability_rank(model)?;
        if rank < 2 * n {
            return Err(Error::Unobservable { rank, required: 2 * n });
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.meters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meters.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Meter> {
        self.meters.iter()
    }

    pub fn meters(&self) -> &[Meter] {
        &self.meters
    }

    pub fn get(&self, id: usize) -> Option<&Meter> {
        self.meters.get(id)
    }

    /// Nodes carrying a voltage meter (`M^v`).
    pub fn voltage_nodes(&self) -> &[usize] {
        &self.voltage_nodes
    }

    pub fn ids_where(&self, pred: impl Fn(&Meter) -> bool) -> Vec<usize> {
        self.meters.iter().filter(|m| pred(m)).map(|m| m.id).collect()
    }

    pub fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.meters.iter().map(Meter::weight))
    }

    /// Stacked measurement Jacobian `H` (`m × 2n`) for the given meter ids.
    pub fn jacobian(&self, sens: &SensitivityMatrix, ids: &[usize]) -> DMatrix<f64> {
        let n = sens.n_nodes();
        let mut h = DMatrix::zeros(ids.len(), 2 * n);
        for (r, &id) in ids.iter().enumerate() {
            let m = &self.meters[id];
            match m.kind.state_column(m.node, n) {
                Some(col) => h[(r, col)] = 1.0,
                None => h.set_row(r, &sens.h.row(m.node)),
            }
        }
        h
    }

    pub fn all_ids(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    /// Rank of the stacked Jacobian over every meter at the no-load point.
    pub fn observability_rank(&self, model: &FeederModel) -> Result<usize> {
        let n = model.n_nodes();
        let sens = linearize_at(model, &InjectionVector::zeros(n), model.no_load_voltage())?;
        let h = self.jacobian(&sens, &self.all_ids());
        if h.nrows() == 0 {
            return Ok(0);
        }
        let sv = h.singular_values();
        let smax = sv.max();
        let tol = smax * 1e-10 * h.nrows().max(h.ncols()) as f64;
        Ok(sv.iter().filter(|&&s| s > tol).count())
    }
}

/// Meter placement and accuracy settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementConfig {
    /// Fraction of nodes (rounded up) that carry a voltage meter.
    pub voltage_fraction: f64,
    pub voltage_sigma: f64,
    /// Pseudo-measurement σ relative to the nominal injection magnitude.
    pub pseudo_rel_sigma: f64,
    pub pseudo_sigma_floor: f64,
    /// Historical (nominal) injections the pseudo σ are scaled from.
    pub nominal: InjectionVector,
    pub seed: u64,
}

impl PlacementConfig {
    pub fn new(nominal: InjectionVector, seed: u64) -> Self {
        PlacementConfig {
            voltage_fraction: 0.12,
            voltage_sigma: 0.01,
            pseudo_rel_sigma: 0.5,
            pseudo_sigma_floor: 1e-3,
            nominal,
            seed,
        }
    }
}

/// Places voltage meters on a seeded random subset of nodes, pseudo `p`/`q`
/// meters on every load node and virtual meters on every other node.
///
/// Meter order: voltage (ascending node), pseudo p, pseudo q, virtual p, virtual q.
pub fn build_meter_set(model: &FeederModel, placement: &PlacementConfig) -> Result<MeterSet> {
    let n = model.n_nodes();
    let frac = placement.voltage_fraction;
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::InvalidArgument(format!("voltage fraction {frac} not in (0, 1]")));
    }
    if !(placement.voltage_sigma > 0.0 && placement.pseudo_rel_sigma > 0.0 && placement.pseudo_sigma_floor > 0.0) {
        return Err(Error::InvalidArgument(
            "meter standard deviations must be positive".into(),
        ));
    }
    if placement.nominal.len() != n {
        return Err(Error::Dimension {
            context: "nominal injections",
            expected: n,
            got: placement.nominal.len(),
        });
    }
    let count = ((frac * n as f64).ceil() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(placement.seed);
    let mut vnodes = sample(&mut rng, n, count).into_vec();
    vnodes.sort_unstable();

    let pseudo_sigma = |x: f64| (placement.pseudo_rel_sigma * x.abs()).max(placement.pseudo_sigma_floor);
    let loads = model.load_nodes();
    let others: Vec<usize> = (0..n).filter(|&i| !model.is_load(i)).collect();

    let mut meters = Vec::with_capacity(count + 2 * n);
    meters.extend(
        vnodes
            .iter()
            .map(|&i| Meter::new(MeterKind::VoltageMag, i, placement.voltage_sigma)),
    );
    meters.extend(
        loads
            .iter()
            .map(|&i| Meter::new(MeterKind::PseudoP, i, pseudo_sigma(placement.nominal.p[i]))),
    );
    meters.extend(
        loads
            .iter()
            .map(|&i| Meter::new(MeterKind::PseudoQ, i, pseudo_sigma(placement.nominal.q[i]))),
    );
    meters.extend(
        others
            .iter()
            .map(|&i| Meter::new(MeterKind::VirtualP, i, VIRTUAL_SIGMA)),
    );
    meters.extend(
        others
            .iter()
            .map(|&i| Meter::new(MeterKind::VirtualQ, i, VIRTUAL_SIGMA)),
    );
    MeterSet::new(model, meters)
}

/// Readings that reached the estimator at time `t`, aligned with `meter_ids`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementBatch {
    pub t: u64,
    pub meter_ids: Vec<usize>,
    pub values: Vec<f64>,
}

impl MeasurementBatch {
    pub fn m_t(&self) -> usize {
        self.meter_ids.len()
    }

    /// Keeps only `ids` (ascending, each present in this batch).
    pub fn restrict(&self, ids: &[usize]) -> Result<MeasurementBatch> {
        let mut values = Vec::with_capacity(ids.len());
        let mut cursor = 0;
        for &id in ids {
            while cursor < self.meter_ids.len() && self.meter_ids[cursor] < id {
                cursor += 1;
            }
            if cursor == self.meter_ids.len() || self.meter_ids[cursor] != id {
                return Err(Error::InvalidArgument(format!(
                    "meter {id} not in batch at t = {}",
                    self.t
                )));
            }
            values.push(self.values[cursor]);
        }
        Ok(MeasurementBatch {
            t: self.t,
            meter_ids: ids.to_vec(),
            values,
        })
    }
}

fn check_truth(meters: &MeterSet, z: &DVector<f64>, v_mag: &DVector<f64>) -> Result<()> {
    if z.len() != 2 * v_mag.len() {
        return Err(Error::Dimension {
            context: "truth state vs voltages",
            expected: 2 * v_mag.len(),
            got: z.len(),
        });
    }
    if let Some(m) = meters.iter().find(|m| m.node >= v_mag.len()) {
        return Err(Error::validation(
            format!("meter {}", m.id),
            "node outside the truth vector",
        ));
    }
    Ok(())
}

/// Full batch: `h_i(truth) + N(0, σ_i²)` for every meter; virtual meters read 0.
pub fn synthesize_batch<R: Rng + ?Sized>(
    t: u64,
    truth: &InjectionVector,
    v_mag: &DVector<f64>,
    meters: &MeterSet,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    synthesize(t, truth, v_mag, meters, None, rng)
}

/// Like [`synthesize_batch`], but pseudo meters report `pseudo` (a full state
/// vector of historical estimates) instead of noisy truth.
pub fn synthesize_batch_with_pseudo<R: Rng + ?Sized>(
    t: u64,
    truth: &InjectionVector,
    v_mag: &DVector<f64>,
    meters: &MeterSet,
    pseudo: &DVector<f64>,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    synthesize(t, truth, v_mag, meters, Some(pseudo), rng)
}

fn synthesize<R: Rng + ?Sized>(
    t: u64,
    truth: &InjectionVector,
    v_mag: &DVector<f64>,
    meters: &MeterSet,
    pseudo: Option<&DVector<f64>>,
    rng: &mut R,
) -> Result<MeasurementBatch> {
    let z = truth.to_state();
    check_truth(meters, &z, v_mag)?;
    let n = v_mag.len();
    let values = meters
        .iter()
        .map(|m| match (m.kind, pseudo) {
            (k, _) if k.is_virtual() => 0.0,
            (k, Some(p)) if k.is_pseudo() => p[k.state_column(m.node, n).expect("injection meter")],
            _ => {
                let e: f64 = rng.sample(StandardNormal);
                m.predict(&z, v_mag) + m.sigma * e
            }
        })
        .collect();
    Ok(MeasurementBatch {
        t,
        meter_ids: meters.all_ids(),
        values,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ArrivalPolicy {
    /// `k_v` voltage meters and `k_pq` pseudo (p, q) pairs per step.
    Mixed {
        k_v: usize,
        k_pq: usize,
    },
    /// `m_t` non-virtual meters drawn uniformly without replacement.
    Uniform {
        m_t: usize,
    },
    /// `m_t` non-virtual meters taken cyclically in id order.
    RoundRobin {
        m_t: usize,
    },
    Full,
}

/// Meter ids (ascending) whose readings arrive at time `t` (1-based).
/// Virtual meters are always part of the subset.
pub fn arrival_subset<R: Rng + ?Sized>(
    meters: &MeterSet,
    policy: &ArrivalPolicy,
    t: u64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut ids = meters.ids_where(|m| m.kind.is_virtual());
    let real = meters.ids_where(|m| !m.kind.is_virtual());
    let too_many = |what: &str, k: usize, avail: usize| {
        Error::InvalidArgument(format!("arrival policy asks for {k} {what} but only {avail} exist"))
    };
    match *policy {
        ArrivalPolicy::Full => ids.extend(real),
        ArrivalPolicy::Mixed { k_v, k_pq } => {
            let volt = meters.ids_where(|m| m.kind == MeterKind::VoltageMag);
            let pairs: Vec<(usize, usize)> = meters
                .iter()
                .filter(|m| m.kind == MeterKind::PseudoP)
                .filter_map(|p| {
                    meters
                        .iter()
                        .find(|q| q.kind == MeterKind::PseudoQ && q.node == p.node)
                        .map(|q| (p.id, q.id))
                })
                .collect();
            if k_v > volt.len() {
                return Err(too_many("voltage meters", k_v, volt.len()));
            }
            if k_pq > pairs.len() {
                return Err(too_many("pseudo pairs", k_pq, pairs.len()));
            }
            ids.extend(sample(rng, volt.len(), k_v).into_iter().map(|i| volt[i]));
            for i in sample(rng, pairs.len(), k_pq) {
                ids.push(pairs[i].0);
                ids.push(pairs[i].1);
            }
        }
        ArrivalPolicy::Uniform { m_t } => {
            if m_t > real.len() {
                return Err(too_many("meters", m_t, real.len()));
            }
            ids.extend(sample(rng, real.len(), m_t).into_iter().map(|i| real[i]));
        }
        ArrivalPolicy::RoundRobin { m_t } => {
            if m_t > real.len() {
                return Err(too_many("meters", m_t, real.len()));
            }
            if !real.is_empty() {
                let start = (t.saturating_sub(1) as usize).wrapping_mul(m_t) % real.len();
                ids.extend((0..m_t).map(|k| real[(start + k) % real.len()]));
            }
        }
    }
    ids.sort_unstable();
    Ok(ids)
}

/// Writes batches as CSV: `t,meter_id,kind,node,value,sigma`.
pub fn write_batches_csv<W: io::Write>(out: W, meters: &MeterSet, batches: &[MeasurementBatch]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "meter_id", "kind", "node", "value", "sigma"])?;
    for b in batches {
        for (&id, &value) in b.meter_ids.iter().zip(&b.values) {
            let m = &meters.meters[id];
            w.write_record([
                b.t.to_string(),
                id.to_string(),
                m.kind.label().to_string(),
                m.node.to_string(),
                format!("{value:e}"),
                format!("{:e}", m.sigma),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct BatchRow {
    t: u64,
    meter_id: usize,
    kind: String,
    node: usize,
    value: f64,
    sigma: f64,
}

/// Reads the CSV written by [`write_batches_csv`]. Meter definitions are
/// recovered from the rows; ids must be contiguous from 0.
pub fn read_batches_csv<R: io::Read>(input: R) -> Result<(MeterSet, Vec<MeasurementBatch>)> {
    let mut reader = csv::Reader::from_reader(input);
    let mut defs: Vec<Option<Meter>> = Vec::new();
    let mut batches: Vec<MeasurementBatch> = Vec::new();
    for (line, row) in reader.deserialize::<BatchRow>().enumerate() {
        let row = row?;
        let loc = format!("measurement row {}", line + 2);
        let kind: MeterKind = row.kind.parse()?;
        let meter = Meter {
            id: row.meter_id,
            kind,
            node: row.node,
            sigma: row.sigma,
        };
        if defs.len() <= row.meter_id {
            defs.resize(row.meter_id + 1, None);
        }
        match &defs[row.meter_id] {
            Some(prev) if *prev != meter => {
                return Err(Error::validation(loc, format!("meter {} redefined", row.meter_id)));
            }
            _ => defs[row.meter_id] = Some(meter),
        }
        if batches.last().map(|b| b.t) != Some(row.t) {
            batches.push(MeasurementBatch {
                t: row.t,
                meter_ids: Vec::new(),
                values: Vec::new(),
            });
        }
        let b = batches.last_mut().expect("pushed above");
        if b.meter_ids.last().is_some_and(|&last| last >= row.meter_id) {
            return Err(Error::validation(loc, "meter ids must ascend within a timestep"));
        }
        b.meter_ids.push(row.meter_id);
        b.values.push(row.value);
    }
    let meters = defs
        .into_iter()
        .enumerate()
        .map(|(i, m)| m.ok_or_else(|| Error::validation("measurements", format!("meter id {i} never appears"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((MeterSet::from_meters(meters), batches))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::FeederTemplate;
    use crate::powerflow::{solve_power_flow, PowerFlowOptions};

    fn nominal(model: &FeederModel) -> InjectionVector {
        let mut s = InjectionVector::zeros(model.n_nodes());
        for &i in model.load_nodes() {
            s.p[i] = 0.1;
            s.q[i] = 0.03;
        }
        s
    }

    fn ieee13_meters(seed: u64) -> (FeederModel, MeterSet) {
        let m = FeederTemplate::ThirteenNode.load();
        let set = build_meter_set(&m, &PlacementConfig::new(nominal(&m), seed)).unwrap();
        (m, set)
    }

    #[test]
    fn full_fraction_meters_every_node() {
        let m = FeederTemplate::ThirteenNode.load();
        let mut cfg = PlacementConfig::new(nominal(&m), 1);
        cfg.voltage_fraction = 1.0;
        let set = build_meter_set(&m, &cfg).unwrap();
        assert_eq!(set.voltage_nodes(), (0..m.n_nodes()).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn two_bus_counts() {
        let m = FeederTemplate::TwoBus.load();
        let set = build_meter_set(&m, &PlacementConfig::new(nominal(&m), 3)).unwrap();
        assert_eq!(set.len(), 3);
        let kinds: Vec<_> = set.iter().map(|m| m.kind).collect();
        assert_eq!(kinds, [MeterKind::VoltageMag, MeterKind::PseudoP, MeterKind::PseudoQ]);
        assert!((set.get(1).unwrap().sigma - 0.05).abs() < 1e-15);
        assert!((set.get(2).unwrap().sigma - 0.015).abs() < 1e-15);
    }

    #[test]
    fn placement_is_deterministic() {
        let (_, a) = ieee13_meters(7);
        let (_, b) = ieee13_meters(7);
        assert_eq!(a, b);
        // ⌈0.12 · 29⌉
        assert_eq!(a.voltage_nodes().len(), 4);
        assert_eq!(a.len(), 4 + 2 * 15 + 2 * 14);
    }

    #[test]
    fn pseudo_sigma_floor() {
        let m = FeederTemplate::TwoBus.load();
        let set = build_meter_set(&m, &PlacementConfig::new(InjectionVector::zeros(1), 0)).unwrap();
        assert_eq!(set.get(1).unwrap().sigma, 1e-3);
    }

    #[test]
    fn misplaced_meters_are_rejected() {
        let m = FeederTemplate::FourBus.load();
        // node 0 (bus 1) carries no load
        let err = MeterSet::new(&m, vec![Meter::new(MeterKind::PseudoP, 0, 0.1)]).unwrap_err();
        assert!(err.to_string().contains("non-load"));
        let err = MeterSet::new(&m, vec![Meter::new(MeterKind::VirtualP, 3, 0.1)]).unwrap_err();
        assert!(err.to_string().contains("load node"));
    }

    #[test]
    fn missing_pseudo_meters_break_observability() {
        let m = FeederTemplate::TwoBus.load();
        let err = MeterSet::new(&m, vec![Meter::new(MeterKind::VoltageMag, 0, 0.01)]).unwrap_err();
        assert!(matches!(err, Error::Unobservable { rank: 1, required: 2 }), "{err}");
    }

    #[test]
    fn noiseless_limit_and_virtual_zero() {
        let (m, mut set) = ieee13_meters(2);
        set = MeterSet::from_meters(
            set.iter()
                .map(|x| Meter {
                    sigma: if x.kind.is_virtual() { x.sigma } else { 1e-15 },
                    ..*x
                })
                .collect(),
        );
        let s = nominal(&m);
        let v = solve_power_flow(&m, &s, &PowerFlowOptions::default()).unwrap().v_mag;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = synthesize_batch(1, &s, &v, &set, &mut rng).unwrap();
        let z = s.to_state();
        for (&id, &val) in batch.meter_ids.iter().zip(&batch.values) {
            let meter = set.get(id).unwrap();
            if meter.kind.is_virtual() {
                assert_eq!(val, 0.0);
            } else {
                assert!((val - meter.predict(&z, &v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn voltage_noise_sample_mean() {
        let m = FeederTemplate::TwoBus.load();
        let set = build_meter_set(&m, &PlacementConfig::new(nominal(&m), 0)).unwrap();
        let s = nominal(&m);
        let v = solve_power_flow(&m, &s, &PowerFlowOptions::default()).unwrap().v_mag;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mean = (0..draws)
            .map(|t| synthesize_batch(t, &s, &v, &set, &mut rng).unwrap().values[0])
            .sum::<f64>()
            / draws as f64;
        assert!((mean - v[0]).abs() <= 4.0 * 0.01 / (draws as f64).sqrt());
    }

    #[test]
    fn pseudo_override_reports_given_values() {
        let (m, set) = ieee13_meters(5);
        let s = nominal(&m);
        let v = solve_power_flow(&m, &s, &PowerFlowOptions::default()).unwrap().v_mag;
        let pseudo = DVector::from_fn(2 * m.n_nodes(), |i, _| i as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = synthesize_batch_with_pseudo(1, &s, &v, &set, &pseudo, &mut rng).unwrap();
        for meter in set.iter().filter(|x| x.kind.is_pseudo()) {
            let col = meter.kind.state_column(meter.node, m.n_nodes()).unwrap();
            assert_eq!(b.values[meter.id], col as f64);
        }
    }

    #[test]
    fn arrival_full_and_uniform_boundary() {
        let (_, set) = ieee13_meters(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let full = arrival_subset(&set, &ArrivalPolicy::Full, 1, &mut rng).unwrap();
        assert_eq!(full, set.all_ids());
        let real = set.ids_where(|m| !m.kind.is_virtual()).len();
        let uni = arrival_subset(&set, &ArrivalPolicy::Uniform { m_t: real }, 1, &mut rng).unwrap();
        assert_eq!(uni, full);
    }

    #[test]
    fn mixed_policy_composition() {
        let m = FeederTemplate::ThirteenNode.load();
        let mut cfg = PlacementConfig::new(nominal(&m), 9);
        cfg.voltage_fraction = 1.0;
        let set = build_meter_set(&m, &cfg).unwrap();
        assert_eq!(set.voltage_nodes().len(), 29);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in 1..50 {
            let ids = arrival_subset(&set, &ArrivalPolicy::Mixed { k_v: 1, k_pq: 3 }, t, &mut rng).unwrap();
            let count = |k: MeterKind| ids.iter().filter(|&&i| set.get(i).unwrap().kind == k).count();
            assert_eq!(count(MeterKind::VoltageMag), 1);
            assert_eq!(count(MeterKind::PseudoP), 3);
            assert_eq!(count(MeterKind::PseudoQ), 3);
            assert_eq!(count(MeterKind::VirtualP) + count(MeterKind::VirtualQ), 28);
            let mut pnodes: Vec<_> = ids
                .iter()
                .map(|&i| set.get(i).unwrap())
                .filter(|x| x.kind == MeterKind::PseudoP)
                .map(|x| x.node)
                .collect();
            let mut qnodes: Vec<_> = ids
                .iter()
                .map(|&i| set.get(i).unwrap())
                .filter(|x| x.kind == MeterKind::PseudoQ)
                .map(|x| x.node)
                .collect();
            pnodes.sort_unstable();
            qnodes.sort_unstable();
            assert_eq!(pnodes, qnodes, "pseudo readings arrive in pairs");
        }
    }

    #[test]
    fn oversized_requests_fail() {
        let (_, set) = ieee13_meters(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(arrival_subset(&set, &ArrivalPolicy::Mixed { k_v: 5, k_pq: 1 }, 1, &mut rng).is_err());
        assert!(arrival_subset(&set, &ArrivalPolicy::Mixed { k_v: 1, k_pq: 16 }, 1, &mut rng).is_err());
        assert!(arrival_subset(&set, &ArrivalPolicy::Uniform { m_t: 35 }, 1, &mut rng).is_err());
    }

    #[test]
    fn round_robin_cycles() {
        let (_, set) = ieee13_meters(1);
        let real = set.ids_where(|m| !m.kind.is_virtual());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = vec![0usize; set.len()];
        // 34 real meters, 2 per step: 17 steps visit each exactly once
        for t in 1..=17 {
            for id in arrival_subset(&set, &ArrivalPolicy::RoundRobin { m_t: 2 }, t, &mut rng).unwrap() {
                seen[id] += 1;
            }
        }
        for id in real {
            assert_eq!(seen[id], 1);
        }
    }

    #[test]
    fn restrict_picks_matching_values() {
        let b = MeasurementBatch {
            t: 3,
            meter_ids: vec![0, 1, 2, 3],
            values: vec![10.0, 11.0, 12.0, 13.0],
        };
        let r = b.restrict(&[1, 3]).unwrap();
        assert_eq!(r.values, vec![11.0, 13.0]);
        assert!(b.restrict(&[5]).is_err());
    }

    #[test]
    fn batch_csv_round_trip() {
        let (m, set) = ieee13_meters(3);
        let s = nominal(&m);
        let v = solve_power_flow(&m, &s, &PowerFlowOptions::default()).unwrap().v_mag;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches: Vec<_> = (1..=3)
            .map(|t| synthesize_batch(t, &s, &v, &set, &mut rng).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_batches_csv(&mut buf, &set, &batches).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,meter_id,kind,node,value,sigma\n"));
        let (set2, batches2) = read_batches_csv(buf.as_slice()).unwrap();
        assert_eq!(set2, set);
        assert_eq!(batches2, batches);
    }
}
