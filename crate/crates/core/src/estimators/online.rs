//! First-order online estimators sharing one projected gradient step.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{check_batch, free_coordinates, gradient_at, objective_at, project_virtual};
use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::measurement::{MeasurementBatch, MeterSet};
use crate::powerflow::{linearize_at, solve_power_flow_from, InjectionVector, PowerFlowOptions, SensitivityMatrix};

/// How the voltage estimate is refreshed after each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageRefresh {
    /// Exact power-flow solve after every step.
    Always,
    /// `v ≈ v̄ + H (z − z̄)` around the last exact solve, which is repeated
    /// every `k` steps.
    EveryK(u64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineSettings {
    pub voltage_refresh: VoltageRefresh,
    /// Re-linearize `H` every this many steps (0 = never).
    pub jacobian_refresh: u64,
    pub power_flow: PowerFlowOptions,
    /// Stepsize halvings tried before a step is rejected outright.
    pub max_halvings: u32,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        OnlineSettings {
            voltage_refresh: VoltageRefresh::EveryK(50),
            jacobian_refresh: 300,
            power_flow: PowerFlowOptions::default(),
            max_halvings: 10,
        }
    }
}

/// Estimate `z = [p; q]`, its voltage magnitudes and the cached sensitivity.
#[derive(Clone, Debug)]
pub struct EstimatorState {
    pub z: DVector<f64>,
    pub v_mag: DVector<f64>,
    pub h_cache: SensitivityMatrix,
    pub stepsize: f64,
    pub last_objective: f64,
    pub step_count: u64,
    /// Steps whose every halved trial failed the power flow.
    pub rejected_steps: u64,
    pub settings: OnlineSettings,
    lin_z: DVector<f64>,
    lin_v: DVector<f64>,
    v_complex: DVector<Complex64>,
}

impl EstimatorState {
    /// Projects `z0`, solves the power flow there and linearizes.
    pub fn new(model: &FeederModel, z0: &DVector<f64>, stepsize: f64, settings: OnlineSettings) -> Result<Self> {
        let n = model.n_nodes();
        if z0.len() != 2 * n {
            return Err(Error::Dimension {
                context: "initial state",
                expected: 2 * n,
                got: z0.len(),
            });
        }
        if !(stepsize >= 0.0 && stepsize.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "stepsize must be finite and nonnegative, got {stepsize}"
            )));
        }
        if let VoltageRefresh::EveryK(0) = settings.voltage_refresh {
            return Err(Error::InvalidArgument(
                "voltage refresh interval must be positive".into(),
            ));
        }
        let mut z = z0.clone();
        project_virtual(model, &mut z);
        let s = InjectionVector::from_state(&z);
        let sol = solve_power_flow_from(model, &s, &settings.power_flow, model.no_load_voltage())?;
        let h_cache = linearize_at(model, &s, &sol.v_complex)?;
        Ok(EstimatorState {
            lin_z: z.clone(),
            lin_v: sol.v_mag.clone(),
            z,
            v_mag: sol.v_mag,
            h_cache,
            stepsize,
            last_objective: f64::NAN,
            step_count: 0,
            rejected_steps: 0,
            settings,
            v_complex: sol.v_complex,
        })
    }

    pub fn injections(&self) -> InjectionVector {
        InjectionVector::from_state(&self.z)
    }

    /// Complex voltages of the last exact power-flow solve.
    pub fn last_exact_voltage(&self) -> &DVector<Complex64> {
        &self.v_complex
    }

    /// One projected gradient step on the rows of `batch`.
    fn step(&mut self, model: &FeederModel, meters: &MeterSet, batch: &MeasurementBatch) -> Result<()> {
        check_batch(meters, batch)?;
        let grad = gradient_at(meters, batch, &self.z, &self.v_mag, &self.h_cache);
        self.last_objective = objective_at(meters, batch, &self.z, &self.v_mag);
        let next = self.step_count + 1;
        let mut eta = self.stepsize;
        for attempt in 0..=self.settings.max_halvings {
            let mut candidate = &self.z - &grad * eta;
            project_virtual(model, &mut candidate);
            match self.refresh(model, candidate, next) {
                Ok(()) => {
                    self.step_count = next;
                    return Ok(());
                }
                Err(e) => {
                    log::warn!("step {next}: power flow failed at trial {attempt} (stepsize {eta:.3e}): {e}; halving");
                    eta *= 0.5;
                }
            }
        }
        log::warn!("step {next}: rejected, estimate kept");
        self.step_count = next;
        self.rejected_steps += 1;
        Ok(())
    }

    fn refresh(&mut self, model: &FeederModel, candidate: DVector<f64>, step: u64) -> Result<()> {
        let jacobian_due = self.settings.jacobian_refresh > 0 && step.is_multiple_of(self.settings.jacobian_refresh);
        let exact_due = match self.settings.voltage_refresh {
            VoltageRefresh::Always => true,
            VoltageRefresh::EveryK(k) => step.is_multiple_of(k),
        };
        if exact_due || jacobian_due {
            self.exact_refresh(model, candidate, jacobian_due)
        } else {
            self.v_mag = &self.lin_v + &self.h_cache.h * (&candidate - &self.lin_z);
            self.z = candidate;
            Ok(())
        }
    }

    fn exact_refresh(&mut self, model: &FeederModel, candidate: DVector<f64>, relinearize: bool) -> Result<()> {
        let s = InjectionVector::from_state(&candidate);
        let sol = solve_power_flow_from(model, &s, &self.settings.power_flow, &self.v_complex)?;
        if relinearize {
            self.h_cache = linearize_at(model, &s, &sol.v_complex)?;
        }
        self.lin_z = candidate.clone();
        self.lin_v = sol.v_mag.clone();
        self.v_mag = sol.v_mag;
        self.v_complex = sol.v_complex;
        self.z = candidate;
        Ok(())
    }

    /// Replaces the voltage estimate by an exact power-flow solve at the
    /// current `z` (optionally re-linearizing as well).
    pub fn resolve_voltage(&mut self, model: &FeederModel, relinearize: bool) -> Result<()> {
        self.exact_refresh(model, self.z.clone(), relinearize)
    }

    /// Repeats full-batch steps until `‖Δz‖∞ ≤ tol` or `max_iter` steps, then
    /// solves the power flow exactly at the result. Returns the step count and
    /// whether the tolerance was met.
    pub fn iterate_to_convergence(
        &mut self,
        model: &FeederModel,
        meters: &MeterSet,
        batch: &MeasurementBatch,
        tol: f64,
        max_iter: usize,
    ) -> Result<(usize, bool)> {
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iter {
            let before = self.z.clone();
            self.step(model, meters, batch)?;
            iterations += 1;
            if (&self.z - before).amax() <= tol {
                converged = true;
                break;
            }
        }
        if iterations > 0 {
            self.resolve_voltage(model, false)?;
        }
        Ok((iterations, converged))
    }
}

fn require_full(meters: &MeterSet, batch: &MeasurementBatch) -> Result<()> {
    if batch.m_t() != meters.len() {
        return Err(Error::InvalidArgument(format!(
            "full batch required: {} of {} meters present at t = {}",
            batch.m_t(),
            meters.len(),
            batch.t
        )));
    }
    Ok(())
}

/// One full-gradient step (GD).
pub fn online_gd_step(
    state: &mut EstimatorState,
    batch: &MeasurementBatch,
    meters: &MeterSet,
    model: &FeederModel,
) -> Result<()> {
    require_full(meters, batch)?;
    state.step(model, meters, batch)
}

/// One stochastic step on whichever meters arrived (SGD). Rows keep their
/// full-problem weights.
pub fn online_sgd_step(
    state: &mut EstimatorState,
    batch: &MeasurementBatch,
    meters: &MeterSet,
    model: &FeederModel,
) -> Result<()> {
    state.step(model, meters, batch)
}

#[derive(Clone, Debug)]
pub struct GoOutcome {
    pub state: EstimatorState,
    pub iterations: usize,
    pub converged: bool,
}

/// Gradient steps on one full batch until `‖Δz‖∞ ≤ tol` (GO). `stepsize`
/// of `None` selects [`auto_stepsize`] at `z0`.
#[allow(clippy::too_many_arguments)]
pub fn converged_gd_solve(
    model: &FeederModel,
    meters: &MeterSet,
    batch: &MeasurementBatch,
    z0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    stepsize: Option<f64>,
    settings: OnlineSettings,
) -> Result<GoOutcome> {
    require_full(meters, batch)?;
    let mut state = EstimatorState::new(model, z0, 0.0, settings)?;
    state.stepsize = match stepsize {
        Some(eta) => eta,
        None => auto_stepsize(model, meters, &state.h_cache)?,
    };
    let (iterations, converged) = state.iterate_to_convergence(model, meters, batch, tol, max_iter)?;
    Ok(GoOutcome {
        state,
        iterations,
        converged,
    })
}

/// Gain matrix `H_fᵀ W H_f` over the non-virtual meters, restricted to the
/// free (load-node) coordinates.
pub fn free_gain(model: &FeederModel, meters: &MeterSet, sens: &SensitivityMatrix) -> DMatrix<f64> {
    let ids = meters.ids_where(|m| !m.kind.is_virtual());
    let free = free_coordinates(model);
    let h = meters.jacobian(sens, &ids).select_columns(&free);
    let w: Vec<f64> = ids.iter().map(|&i| meters.meters()[i].weight()).collect();
    let wh = DMatrix::from_fn(h.nrows(), h.ncols(), |i, j| w[i] * h[(i, j)]);
    h.tr_mul(&wh)
}

/// `0.5 / λ_max(G)` with `G` the free-coordinate gain at `sens`.
pub fn auto_stepsize(model: &FeederModel, meters: &MeterSet, sens: &SensitivityMatrix) -> Result<f64> {
    let gain = free_gain(model, meters, sens);
    let lmax = gain.symmetric_eigenvalues().max();
    if !(lmax > 0.0 && lmax.is_finite()) {
        return Err(Error::Singular("gain matrix has no positive eigenvalue".into()));
    }
    Ok(0.5 / lmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::FeederTemplate;
    use crate::measurement::{Meter, MeterKind};
    use crate::powerflow::solve_power_flow;

    fn setup() -> (FeederModel, MeterSet, DVector<f64>) {
        let model = FeederTemplate::FourBus.load();
        let n = model.n_nodes();
        let mut meters = Vec::new();
        for i in 0..n {
            if model.is_load(i) {
                meters.push(Meter::new(MeterKind::PseudoP, i, 0.05));
                meters.push(Meter::new(MeterKind::PseudoQ, i, 0.05));
            } else {
                meters.push(Meter::new(MeterKind::VirtualP, i, crate::measurement::VIRTUAL_SIGMA));
                meters.push(Meter::new(MeterKind::VirtualQ, i, crate::measurement::VIRTUAL_SIGMA));
            }
        }
        for i in [0, n - 1] {
            meters.push(Meter::new(MeterKind::VoltageMag, i, 0.01));
        }
        let meters = MeterSet::new(&model, meters).unwrap();
        let mut z = DVector::zeros(2 * n);
        for &i in model.load_nodes() {
            z[i] = 0.1;
            z[n + i] = 0.03;
        }
        (model, meters, z)
    }

    fn exact_batch(model: &FeederModel, meters: &MeterSet, z: &DVector<f64>) -> MeasurementBatch {
        let v = solve_power_flow(model, &InjectionVector::from_state(z), &PowerFlowOptions::default())
            .unwrap()
            .v_mag;
        MeasurementBatch {
            t: 1,
            meter_ids: meters.all_ids(),
            values: meters.iter().map(|m| m.predict(z, &v)).collect(),
        }
    }

    #[test]
    fn zero_residual_and_zero_stepsize_leave_state_unchanged() {
        let (model, meters, z) = setup();
        let batch = exact_batch(&model, &meters, &z);
        let mut state = EstimatorState::new(&model, &z, 1e-3, OnlineSettings::default()).unwrap();
        online_gd_step(&mut state, &batch, &meters, &model).unwrap();
        assert!((&state.z - &z).amax() < 1e-9);

        let mut off = z.clone();
        off[model.load_nodes()[0]] += 0.05;
        let mut state = EstimatorState::new(&model, &off, 0.0, OnlineSettings::default()).unwrap();
        online_gd_step(&mut state, &batch, &meters, &model).unwrap();
        assert_eq!(state.z, off);
    }

    #[test]
    fn sgd_full_subset_is_bit_identical_to_gd() {
        let (model, meters, z) = setup();
        let mut y = exact_batch(&model, &meters, &z);
        for (k, v) in y.values.iter_mut().enumerate() {
            *v += 0.01 * ((k as f64) * 0.7).sin();
        }
        let mut a = EstimatorState::new(&model, &z, 1e-4, OnlineSettings::default()).unwrap();
        let mut b = a.clone();
        for _ in 0..60 {
            online_gd_step(&mut a, &y, &meters, &model).unwrap();
            online_sgd_step(&mut b, &y, &meters, &model).unwrap();
        }
        assert_eq!(a.z, b.z);
        assert_eq!(a.v_mag, b.v_mag);
    }

    #[test]
    fn virtual_entries_stay_zero_and_empty_subset_is_a_no_op() {
        let (model, meters, z) = setup();
        let n = model.n_nodes();
        let mut noisy = z.clone();
        noisy.iter_mut().for_each(|x| *x += 0.02);
        let state0 = EstimatorState::new(&model, &noisy, 1e-4, OnlineSettings::default()).unwrap();
        for i in (0..n).filter(|&i| !model.is_load(i)) {
            assert_eq!(state0.z[i], 0.0);
            assert_eq!(state0.z[n + i], 0.0);
        }
        let full = exact_batch(&model, &meters, &z);
        let virt = full.restrict(&meters.ids_where(|m| m.kind.is_virtual())).unwrap();
        let mut state = state0.clone();
        online_sgd_step(&mut state, &virt, &meters, &model).unwrap();
        assert_eq!(state.z, state0.z);
        online_sgd_step(&mut state, &full, &meters, &model).unwrap();
        for i in (0..n).filter(|&i| !model.is_load(i)) {
            assert_eq!(state.z[i], 0.0);
            assert_eq!(state.z[n + i], 0.0);
        }
    }

    #[test]
    fn gd_requires_full_batch() {
        let (model, meters, z) = setup();
        let batch = exact_batch(&model, &meters, &z).restrict(&[0, 1]).unwrap();
        let mut state = EstimatorState::new(&model, &z, 1e-4, OnlineSettings::default()).unwrap();
        assert!(online_gd_step(&mut state, &batch, &meters, &model).is_err());
    }

    #[test]
    fn go_with_zero_iterations_returns_start() {
        let (model, meters, z) = setup();
        let batch = exact_batch(&model, &meters, &z);
        let mut z0 = z.clone();
        z0[model.load_nodes()[1]] = 0.4;
        let out = converged_gd_solve(&model, &meters, &batch, &z0, 1e-9, 0, None, OnlineSettings::default()).unwrap();
        assert_eq!(out.state.z, z0);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn go_recovers_noiseless_truth() {
        let (model, meters, z) = setup();
        let batch = exact_batch(&model, &meters, &z);
        let z0 = DVector::zeros(z.len());
        let out = converged_gd_solve(
            &model,
            &meters,
            &batch,
            &z0,
            1e-10,
            100_000,
            None,
            OnlineSettings::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert!((&out.state.z - &z).amax() < 1e-5, "{}", (&out.state.z - &z).amax());
    }
}
