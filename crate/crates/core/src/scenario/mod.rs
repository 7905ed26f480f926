//! Scenario files, the online estimation loop, and run traces.

pub mod profile;

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    free_coordinates, free_gain, gauss_newton_solve, linear::LinearWlsProblem, online_gd_step, online_sgd_step,
    project_virtual, EstimatorState, OnlineSettings, VoltageRefresh,
};
use crate::feeder::{load_feeder, FeederModel, FeederTemplate};
use crate::measurement::{
    arrival_subset, build_meter_set, synthesize_batch_with_pseudo, ArrivalPolicy, MeasurementBatch, MeterSet,
    PlacementConfig,
};
use crate::powerflow::{linearize_at, solve_power_flow_from, InjectionVector, PowerFlowOptions};

pub use profile::{LoadProfile, ProfileGenerator, ProfileSpec};

/// Prefix selecting an embedded feeder in a scenario's `feeder` field.
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Batch Gauss-Newton on every full batch.
    Gn,
    /// Gradient steps iterated to convergence on every full batch.
    Go,
    /// One gradient step per full batch.
    Gd,
    /// One stochastic step per arrival subset.
    Sgd,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Gn => "gn",
            Algorithm::Go => "go",
            Algorithm::Gd => "gd",
            Algorithm::Sgd => "sgd",
        }
    }
}

/// Stepsize rules derived from the spectrum of the gain matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoTag {
    /// `0.5 / λ_max`.
    #[serde(rename = "auto")]
    Auto,
    /// 90 % of `2 / (λ_min + λ_max)`, the step with the fastest linear
    /// contraction; the margin absorbs drift of the gain between Jacobian
    /// refreshes.
    #[serde(rename = "optimal")]
    Optimal,
}

/// A fixed stepsize, or a rule (`"auto"`, `"optimal"`) applied to the gain
/// at the start.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Stepsize {
    Fixed(f64),
    Auto(AutoTag),
}

impl Stepsize {
    /// The stepsize for a symmetric positive definite `gain`.
    pub fn for_gain(self, gain: &DMatrix<f64>) -> Result<f64> {
        let rule = match self {
            Stepsize::Fixed(eta) => return Ok(eta),
            Stepsize::Auto(rule) => rule,
        };
        let eig = gain.clone().symmetric_eigenvalues();
        let (lmin, lmax) = (eig.min(), eig.max());
        if !(lmax > 0.0 && lmax.is_finite()) {
            return Err(Error::Singular("gain matrix has no positive eigenvalue".into()));
        }
        Ok(match rule {
            AutoTag::Auto => 0.5 / lmax,
            AutoTag::Optimal => 1.8 / (lmin.max(0.0) + lmax),
        })
    }
}

impl Default for Stepsize {
    fn default() -> Self {
        Stepsize::Auto(AutoTag::Auto)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RefreshMode {
    #[serde(rename = "always")]
    Always,
    #[default]
    #[serde(rename = "every_K")]
    EveryK,
}

fn default_jacobian_refresh() -> u64 {
    300
}

fn default_refresh_interval() -> u64 {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub algorithm: Algorithm,
    /// Column label; defaults to the algorithm name.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub stepsize: Stepsize,
    #[serde(default = "default_jacobian_refresh")]
    pub jacobian_refresh: u64,
    #[serde(default)]
    pub exact_voltage_refresh: RefreshMode,
    /// `K` of the `every_K` refresh mode.
    #[serde(default = "default_refresh_interval")]
    pub refresh_interval: u64,
    /// Convergence tolerance on `‖Δz‖∞` (GN default 1e-6, GO default 1e-7).
    #[serde(default)]
    pub tol: Option<f64>,
    /// Iteration cap (GN default 20, GO default 10,000).
    #[serde(default)]
    pub max_iter: Option<usize>,
}

impl EstimatorConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        EstimatorConfig {
            algorithm,
            name: None,
            stepsize: Stepsize::default(),
            jacobian_refresh: default_jacobian_refresh(),
            exact_voltage_refresh: RefreshMode::default(),
            refresh_interval: default_refresh_interval(),
            tol: None,
            max_iter: None,
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.algorithm.label().to_string())
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(match self.algorithm {
            Algorithm::Gn => 1e-6,
            _ => 1e-7,
        })
    }

    pub fn iteration_cap(&self) -> usize {
        self.max_iter.unwrap_or(match self.algorithm {
            Algorithm::Gn => 20,
            _ => 10_000,
        })
    }

    pub fn settings(&self) -> OnlineSettings {
        OnlineSettings {
            voltage_refresh: match self.exact_voltage_refresh {
                RefreshMode::Always => VoltageRefresh::Always,
                RefreshMode::EveryK => VoltageRefresh::EveryK(self.refresh_interval),
            },
            jacobian_refresh: self.jacobian_refresh,
            ..OnlineSettings::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let loc = format!("estimator {}", self.label());
        if let Stepsize::Fixed(eta) = self.stepsize {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::validation(&loc, format!("stepsize {eta} must be positive")));
            }
        }
        if self.exact_voltage_refresh == RefreshMode::EveryK && self.refresh_interval == 0 {
            return Err(Error::validation(&loc, "refresh_interval must be positive"));
        }
        if let Some(tol) = self.tol {
            if !(tol > 0.0) {
                return Err(Error::validation(&loc, "tol must be positive"));
            }
        }
        Ok(())
    }
}

fn default_voltage_fraction() -> f64 {
    0.12
}
fn default_voltage_sigma() -> f64 {
    0.01
}
fn default_pseudo_rel_sigma() -> f64 {
    0.5
}
fn default_pseudo_floor() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterConfig {
    #[serde(default = "default_voltage_fraction")]
    pub voltage_fraction: f64,
    #[serde(default = "default_voltage_sigma")]
    pub voltage_sigma_pu: f64,
    #[serde(default = "default_pseudo_rel_sigma")]
    pub pseudo_rel_sigma: f64,
    #[serde(default = "default_pseudo_floor")]
    pub pseudo_sigma_floor: f64,
    /// Redraw the pseudo values from the nominal profile every this many
    /// steps (0 = keep the values drawn at `t = 1`).
    #[serde(default)]
    pub pseudo_refresh: u64,
    /// Noise-free measurements (for validation runs).
    #[serde(default)]
    pub noiseless: bool,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            voltage_fraction: default_voltage_fraction(),
            voltage_sigma_pu: default_voltage_sigma(),
            pseudo_rel_sigma: default_pseudo_rel_sigma(),
            pseudo_sigma_floor: default_pseudo_floor(),
            pseudo_refresh: 0,
            noiseless: false,
        }
    }
}

fn default_bound_fraction() -> f64 {
    0.2
}
fn default_bound_steps() -> usize {
    10_000
}
fn default_bound_trailing() -> usize {
    2_000
}
fn default_bound_seeds() -> u64 {
    100
}

/// Settings of the steady-state bound check on the linearized problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    /// Fraction of the non-virtual meters arriving at every step.
    #[serde(default = "default_bound_fraction")]
    pub arrival_fraction: f64,
    #[serde(default = "default_bound_steps")]
    pub steps: usize,
    #[serde(default = "default_bound_trailing")]
    pub trailing: usize,
    #[serde(default = "default_bound_seeds")]
    pub seeds: u64,
    #[serde(default)]
    pub stepsize: Stepsize,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            arrival_fraction: default_bound_fraction(),
            steps: default_bound_steps(),
            trailing: default_bound_trailing(),
            seeds: default_bound_seeds(),
            stepsize: Stepsize::default(),
        }
    }
}

/// The scenario document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Feeder file (relative to the scenario file) or `builtin:<template>`.
    pub feeder: String,
    #[serde(rename = "horizon_T")]
    pub horizon_t: u64,
    pub seed: u64,
    #[serde(default)]
    pub profile: ProfileSpec,
    #[serde(default)]
    pub meters: MeterConfig,
    pub arrival: ArrivalPolicy,
    pub estimators: Vec<EstimatorConfig>,
    /// Record every estimator's `z` in the trace.
    #[serde(default)]
    pub log_states: bool,
    #[serde(default)]
    pub bound: BoundConfig,
}

/// A validated scenario bound to its feeder.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: FeederModel,
    pub config: ScenarioConfig,
}

fn resolve_feeder(feeder: &str, base_dir: &Path) -> Result<FeederModel> {
    if let Some(name) = feeder.strip_prefix(BUILTIN_PREFIX) {
        let template = FeederTemplate::from_name(name)
            .ok_or_else(|| Error::validation("scenario feeder", format!("unknown built-in feeder \"{name}\"")))?;
        return Ok(template.load());
    }
    let path = base_dir.join(feeder);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::validation("scenario feeder", format!("{}: {e}", path.display())))?;
    load_feeder(&text)
}

impl Scenario {
    pub fn new(model: FeederModel, config: ScenarioConfig) -> Result<Self> {
        if config.horizon_t < 1 {
            return Err(Error::validation("scenario", "horizon_T must be at least 1"));
        }
        if config.estimators.is_empty() {
            return Err(Error::validation("scenario", "at least one estimator is required"));
        }
        let mut labels: Vec<String> = config.estimators.iter().map(EstimatorConfig::label).collect();
        for cfg in &config.estimators {
            cfg.validate()?;
        }
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::validation(
                "scenario",
                format!("duplicate estimator name \"{}\"", w[0]),
            ));
        }
        if let Some(bad) = labels
            .iter()
            .find(|l| l.is_empty() || !l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        {
            return Err(Error::validation(
                "scenario",
                format!("estimator name \"{bad}\" must be non-empty and use only [A-Za-z0-9_-]"),
            ));
        }
        Ok(Scenario { model, config })
    }

    /// Parses a scenario document; relative feeder paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let config: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("scenario document: {e}")))?;
        let model = resolve_feeder(&config.feeder, base_dir)?;
        Scenario::new(model, config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        Scenario::from_json(&text, dir)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.config.seed = seed;
        self
    }
}

/// Independent random streams derived from the scenario seed.
#[derive(Clone, Copy)]
enum Stream {
    Profile = 1,
    Noise = 2,
    Arrival = 3,
    Pseudo = 4,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// One estimator's output at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRecord {
    pub v_mag: DVector<f64>,
    pub z: Option<DVector<f64>>,
    pub step_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub injections: InjectionVector,
    pub v_true: DVector<f64>,
    /// Non-virtual meters in the arrival subset.
    pub m_t: usize,
    /// Aligned with [`RunTrace::estimators`].
    pub estimates: Vec<EstimateRecord>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunTrace {
    /// Node labels (`bus.phase`) in state order.
    pub nodes: Vec<String>,
    pub estimators: Vec<String>,
    pub rows: Vec<TraceRow>,
    /// Steps at which each estimator failed and kept its previous estimate.
    pub failures: Vec<u64>,
}

impl RunTrace {
    /// Equality of everything except wall-clock step times.
    pub fn same_results(&self, other: &RunTrace) -> bool {
        self.nodes == other.nodes
            && self.estimators == other.estimators
            && self.failures == other.failures
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.t == b.t
                    && a.injections == b.injections
                    && a.v_true == b.v_true
                    && a.m_t == b.m_t
                    && a.estimates.len() == b.estimates.len()
                    && a.estimates
                        .iter()
                        .zip(&b.estimates)
                        .all(|(x, y)| x.v_mag == y.v_mag && x.z == y.z)
            })
    }
}

/// Truth and measurements of one time step, shared by all estimators.
struct TruthStep {
    t: u64,
    injections: InjectionVector,
    v_mag: DVector<f64>,
    batch: MeasurementBatch,
    subset: Vec<usize>,
}

struct Runner {
    config: EstimatorConfig,
    state: EstimatorState,
    failures: u64,
}

impl Runner {
    fn advance(&mut self, model: &FeederModel, meters: &MeterSet, step: &TruthStep) -> Result<()> {
        match self.config.algorithm {
            Algorithm::Gn => {
                let out = gauss_newton_solve(
                    model,
                    meters,
                    &step.batch,
                    &self.state.z,
                    self.config.tolerance(),
                    self.config.iteration_cap(),
                    &self.state.settings.power_flow,
                )?;
                let mut state = out.state;
                state.settings = self.state.settings;
                state.stepsize = self.state.stepsize;
                state.step_count = self.state.step_count + 1;
                self.state = state;
                Ok(())
            }
            Algorithm::Go => self
                .state
                .iterate_to_convergence(
                    model,
                    meters,
                    &step.batch,
                    self.config.tolerance(),
                    self.config.iteration_cap(),
                )
                .map(|_| ()),
            Algorithm::Gd => online_gd_step(&mut self.state, &step.batch, meters, model),
            Algorithm::Sgd => {
                let partial = step.batch.restrict(&step.subset)?;
                online_sgd_step(&mut self.state, &partial, meters, model)
            }
        }
    }

    fn process(
        &mut self,
        model: &FeederModel,
        meters: &MeterSet,
        step: &TruthStep,
        log_states: bool,
    ) -> EstimateRecord {
        let started = Instant::now();
        let result = self.advance(model, meters, step);
        let step_seconds = started.elapsed().as_secs_f64();
        if let Err(e) = result {
            self.failures += 1;
            log::warn!("estimator {} failed at t = {}: {e}", self.config.label(), step.t);
        }
        EstimateRecord {
            v_mag: self.state.v_mag.clone(),
            z: log_states.then(|| self.state.z.clone()),
            step_seconds,
        }
    }
}

/// An online run that can be advanced in pieces; advancing by `a` then `b`
/// steps gives the same trace as advancing by `a + b`.
pub struct OnlineRun {
    scenario: Scenario,
    meters: MeterSet,
    profile: ProfileGenerator,
    noise_rng: ChaCha8Rng,
    arrival_rng: ChaCha8Rng,
    pseudo_rng: ChaCha8Rng,
    pseudo: DVector<f64>,
    truth_voltage: DVector<Complex64>,
    runners: Vec<Runner>,
    trace: RunTrace,
    power_flow: PowerFlowOptions,
    kept_batches: Option<Vec<MeasurementBatch>>,
}

/// Meters of a scenario, placed from its nominal profile at `t = 1`.
pub fn scenario_meters(scenario: &Scenario) -> Result<(MeterSet, ProfileGenerator)> {
    let cfg = &scenario.config;
    let profile = ProfileGenerator::new(&cfg.profile, &scenario.model, stream(cfg.seed, Stream::Profile))?;
    let m = &cfg.meters;
    let placement = PlacementConfig {
        voltage_fraction: m.voltage_fraction,
        voltage_sigma: m.voltage_sigma_pu,
        pseudo_rel_sigma: m.pseudo_rel_sigma,
        pseudo_sigma_floor: m.pseudo_sigma_floor,
        nominal: profile.nominal(1),
        seed: cfg.seed,
    };
    let meters = build_meter_set(&scenario.model, &placement)?;
    Ok((meters, profile))
}

/// Pseudo values: nominal injections plus one draw of the pseudo-meter noise.
fn draw_pseudo<R: Rng>(
    model: &FeederModel,
    meters: &MeterSet,
    nominal: &InjectionVector,
    noiseless: bool,
    rng: &mut R,
) -> DVector<f64> {
    let n = model.n_nodes();
    let mut z = nominal.to_state();
    for m in meters.iter().filter(|m| m.kind.is_pseudo()) {
        let e: f64 = rng.sample(StandardNormal);
        let col = m.kind.state_column(m.node, n).expect("pseudo meter reads the state");
        if !noiseless {
            z[col] += m.sigma * e;
        }
    }
    project_virtual(model, &mut z);
    z
}

impl OnlineRun {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let (meters, profile) = scenario_meters(&scenario)?;
        let cfg = &scenario.config;
        let model = &scenario.model;
        let mut pseudo_rng = stream(cfg.seed, Stream::Pseudo);
        let pseudo = draw_pseudo(
            model,
            &meters,
            &profile.nominal(1),
            cfg.meters.noiseless,
            &mut pseudo_rng,
        );
        let z0 = pseudo.clone();

        let mut runners = Vec::with_capacity(cfg.estimators.len());
        for ec in &cfg.estimators {
            let mut state = EstimatorState::new(model, &z0, 0.0, ec.settings())?;
            state.stepsize = match ec.stepsize {
                Stepsize::Fixed(eta) => eta,
                rule => rule.for_gain(&free_gain(model, &meters, &state.h_cache))?,
            };
            log::info!("estimator {}: stepsize {:.4e}", ec.label(), state.stepsize);
            runners.push(Runner {
                config: ec.clone(),
                state,
                failures: 0,
            });
        }
        let trace = RunTrace {
            nodes: model.nodes().iter().map(|n| n.to_string()).collect(),
            estimators: cfg.estimators.iter().map(EstimatorConfig::label).collect(),
            rows: Vec::new(),
            failures: vec![0; cfg.estimators.len()],
        };
        Ok(OnlineRun {
            noise_rng: stream(cfg.seed, Stream::Noise),
            arrival_rng: stream(cfg.seed, Stream::Arrival),
            pseudo_rng,
            pseudo,
            truth_voltage: model.no_load_voltage().clone(),
            runners,
            trace,
            meters,
            profile,
            power_flow: PowerFlowOptions::default(),
            kept_batches: None,
            scenario,
        })
    }

    pub fn meters(&self) -> &MeterSet {
        &self.meters
    }

    /// Keep every full measurement batch from now on (see [`Self::batches`]).
    pub fn keep_batches(&mut self) {
        self.kept_batches.get_or_insert_with(Vec::new);
    }

    /// Full batches recorded since [`Self::keep_batches`] was called.
    pub fn batches(&self) -> &[MeasurementBatch] {
        self.kept_batches.as_deref().unwrap_or(&[])
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Time index of the last completed step.
    pub fn t(&self) -> u64 {
        self.profile.t()
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RunTrace {
        self.trace
    }

    /// Current estimator states, in scenario order.
    pub fn states(&self) -> Vec<&EstimatorState> {
        self.runners.iter().map(|r| &r.state).collect()
    }

    fn truth_step(&mut self) -> Result<TruthStep> {
        let model = &self.scenario.model;
        let cfg = &self.scenario.config;
        let (t, injections) = self.profile.next_injection();
        let sol = solve_power_flow_from(model, &injections, &self.power_flow, &self.truth_voltage)
            .map_err(|e| Error::TruthPowerFlow { t, source: Box::new(e) })?;
        self.truth_voltage = sol.v_complex;
        let refresh = cfg.meters.pseudo_refresh;
        if refresh > 0 && t > 1 && (t - 1) % refresh == 0 {
            let nominal = self.profile.nominal(t);
            self.pseudo = draw_pseudo(
                model,
                &self.meters,
                &nominal,
                cfg.meters.noiseless,
                &mut self.pseudo_rng,
            );
        }
        let batch = if cfg.meters.noiseless {
            let z = injections.to_state();
            MeasurementBatch {
                t,
                meter_ids: self.meters.all_ids(),
                values: self
                    .meters
                    .iter()
                    .map(|m| match m.kind {
                        k if k.is_virtual() => 0.0,
                        k if k.is_pseudo() => self.pseudo[k.state_column(m.node, model.n_nodes()).unwrap()],
                        _ => m.predict(&z, &sol.v_mag),
                    })
                    .collect(),
            }
        } else {
            synthesize_batch_with_pseudo(
                t,
                &injections,
                &sol.v_mag,
                &self.meters,
                &self.pseudo,
                &mut self.noise_rng,
            )?
        };
        let subset = arrival_subset(&self.meters, &cfg.arrival, t, &mut self.arrival_rng)?;
        Ok(TruthStep {
            t,
            injections,
            v_mag: sol.v_mag,
            batch,
            subset,
        })
    }

    /// Runs `steps` more time steps.
    pub fn advance(&mut self, steps: u64) -> Result<()> {
        let truth: Vec<TruthStep> = (0..steps).map(|_| self.truth_step()).collect::<Result<_>>()?;
        let model = &self.scenario.model;
        let meters = &self.meters;
        let log_states = self.scenario.config.log_states;
        let columns: Vec<Vec<EstimateRecord>> = self
            .runners
            .par_iter_mut()
            .map(|runner| {
                truth
                    .iter()
                    .map(|s| runner.process(model, meters, s, log_states))
                    .collect()
            })
            .collect();
        let mut columns: Vec<std::vec::IntoIter<EstimateRecord>> = columns.into_iter().map(Vec::into_iter).collect();
        for step in truth {
            if let Some(kept) = self.kept_batches.as_mut() {
                kept.push(step.batch.clone());
            }
            let m_t = step
                .subset
                .iter()
                .filter(|&&id| !meters.meters()[id].kind.is_virtual())
                .count();
            self.trace.rows.push(TraceRow {
                t: step.t,
                injections: step.injections,
                v_true: step.v_mag,
                m_t,
                estimates: columns
                    .iter_mut()
                    .map(|c| c.next().expect("one record per step"))
                    .collect(),
            });
        }
        for (slot, runner) in self.trace.failures.iter_mut().zip(&self.runners) {
            *slot = runner.failures;
        }
        Ok(())
    }
}

/// Runs the scenario over its full horizon.
pub fn run_online(scenario: &Scenario) -> Result<RunTrace> {
    let mut run = OnlineRun::new(scenario.clone())?;
    run.advance(scenario.config.horizon_t)?;
    Ok(run.into_trace())
}

/// The static linear counterpart of a scenario at `t = 1`: rows are the
/// non-virtual meters, columns the load-node coordinates, `H` is the
/// linearization at the true injections, voltage readings are `H z_true`
/// plus meter noise and pseudo rows carry the scenario's pseudo values.
/// Also returns the initial estimate (the pseudo values).
pub fn linearized_problem(scenario: &Scenario) -> Result<(LinearWlsProblem, DVector<f64>)> {
    let model = &scenario.model;
    let cfg = &scenario.config;
    let (meters, mut profile) = scenario_meters(scenario)?;
    let (_, truth) = profile.next_injection();
    let sol =
        solve_power_flow_from(model, &truth, &PowerFlowOptions::default(), model.no_load_voltage()).map_err(|e| {
            Error::TruthPowerFlow {
                t: 1,
                source: Box::new(e),
            }
        })?;
    let sens = linearize_at(model, &truth, &sol.v_complex)?;
    let free = free_coordinates(model);
    let ids = meters.ids_where(|m| !m.kind.is_virtual());
    let h: DMatrix<f64> = meters.jacobian(&sens, &ids).select_columns(&free);
    let z_true = truth.to_state().select_rows(&free);
    let mut noise = stream(cfg.seed, Stream::Noise);
    let pseudo = draw_pseudo(
        model,
        &meters,
        &profile.nominal(1),
        cfg.meters.noiseless,
        &mut stream(cfg.seed, Stream::Pseudo),
    );
    let n = model.n_nodes();
    let exact = &h * &z_true;
    let y = DVector::from_iterator(
        ids.len(),
        ids.iter().enumerate().map(|(r, &id)| {
            let m = &meters.meters()[id];
            match m.kind.state_column(m.node, n) {
                Some(col) => pseudo[col],
                None => {
                    let e: f64 = noise.sample(StandardNormal);
                    exact[r] + if cfg.meters.noiseless { 0.0 } else { m.sigma * e }
                }
            }
        }),
    );
    let w = DVector::from_iterator(ids.len(), ids.iter().map(|&id| meters.meters()[id].weight()));
    Ok((LinearWlsProblem::new(h, w, y)?, pseudo.select_rows(&free)))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_bus_scenario(horizon: u64) -> Scenario {
        let text = format!(
            r#"{{
                "feeder": "builtin:2bus", "horizon_T": {horizon}, "seed": 7,
                "profile": {{ "base_p": 0.3, "volatility": 0.1 }},
                "meters": {{ "voltage_fraction": 1.0 }},
                "arrival": {{ "policy": "uniform", "m_t": 1 }},
                "estimators": [ {{ "algorithm": "gd" }}, {{ "algorithm": "sgd", "stepsize": "auto" }} ]
            }}"#
        );
        Scenario::from_json(&text, Path::new(".")).unwrap()
    }

    #[test]
    fn stepsize_rules_follow_the_gain_spectrum() {
        let gain = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0]));
        assert_eq!(Stepsize::Fixed(0.3).for_gain(&gain).unwrap(), 0.3);
        assert_eq!(Stepsize::Auto(AutoTag::Auto).for_gain(&gain).unwrap(), 0.125);
        assert!((Stepsize::Auto(AutoTag::Optimal).for_gain(&gain).unwrap() - 0.36).abs() < 1e-15);
        assert!(Stepsize::Auto(AutoTag::Auto).for_gain(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn parses_defaults_and_stepsize_forms() {
        let s = two_bus_scenario(3);
        assert_eq!(s.config.meters.voltage_sigma_pu, 0.01);
        assert_eq!(s.config.estimators[1].stepsize, Stepsize::Auto(AutoTag::Auto));
        let ec: EstimatorConfig =
            serde_json::from_str(r#"{"algorithm":"sgd","stepsize":0.01,"exact_voltage_refresh":"always"}"#).unwrap();
        assert_eq!(ec.stepsize, Stepsize::Fixed(0.01));
        assert_eq!(ec.exact_voltage_refresh, RefreshMode::Always);
        let ec: EstimatorConfig = serde_json::from_str(r#"{ "algorithm": "go", "stepsize": "optimal" }"#).unwrap();
        assert_eq!(ec.stepsize, Stepsize::Auto(AutoTag::Optimal));
        assert!(serde_json::from_str::<EstimatorConfig>(r#"{"algorithm":"sgd","stepsize":"fast"}"#).is_err());
    }

    #[test]
    fn rejects_bad_scenarios() {
        let base = |patch: &str| {
            format!(
                r#"{{ "feeder": "builtin:2bus", "horizon_T": 1, "seed": 1,
                      "arrival": {{ "policy": "full" }}, "estimators": {patch} }}"#
            )
        };
        assert!(Scenario::from_json(&base("[]"), Path::new(".")).is_err());
        assert!(Scenario::from_json(&base(r#"[{"algorithm":"gd"},{"algorithm":"gd"}]"#), Path::new(".")).is_err());
        assert!(Scenario::from_json(&base(r#"[{"algorithm":"xx"}]"#), Path::new(".")).is_err());
        let zero = base(r#"[{"algorithm":"gd"}]"#).replace("\"horizon_T\": 1", "\"horizon_T\": 0");
        assert!(Scenario::from_json(&zero, Path::new(".")).is_err());
        let missing = base(r#"[{"algorithm":"gd"}]"#).replace("builtin:2bus", "builtin:nope");
        assert!(Scenario::from_json(&missing, Path::new(".")).is_err());
    }

    #[test]
    fn trace_shape_and_determinism() {
        let s = two_bus_scenario(20);
        let a = run_online(&s).unwrap();
        let b = run_online(&s).unwrap();
        assert_eq!(a.rows.len(), 20);
        assert!(a.same_results(&b));
        assert_eq!(a.estimators, vec!["gd", "sgd"]);
        assert!(a
            .rows
            .iter()
            .all(|r| r.m_t == 1 && r.estimates.iter().all(|e| e.step_seconds >= 0.0)));
        assert!(a.rows.iter().all(|r| r.estimates[0].z.is_none()));
    }
}
