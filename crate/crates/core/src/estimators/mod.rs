//! Estimation algorithms: batch Gauss-Newton, gradient iterated to
//! convergence ("GO"), one full-gradient step per batch ("GD"), one
//! partial-batch stochastic step per batch ("SGD"), plus the linear WLS oracle
//! and the steady-state tracking bound.

pub mod bound;
pub mod gauss_newton;
pub mod linear;
pub mod online;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::measurement::{MeasurementBatch, MeterSet};
use crate::powerflow::{solve_power_flow, InjectionVector, PowerFlowOptions, SensitivityMatrix};

pub use bound::{
    estimate_bound_constants, theorem1_bound, verify_linear_bound, BoundParameters, BoundReport, BoundSample,
    BoundVerification, SampleStep,
};
pub use gauss_newton::{gauss_newton, gauss_newton_solve, GaussNewtonOutcome, GnResult, MeasurementModel};
pub use linear::{full_gradient, linear_sgd_dynamics_step, linear_wls_closed_form, subset_gradient, LinearWlsProblem};
pub use online::{
    auto_stepsize, converged_gd_solve, free_gain, online_gd_step, online_sgd_step, EstimatorState, GoOutcome,
    OnlineSettings, VoltageRefresh,
};

/// Coordinates of `z = [p; q]` that estimators may move: `p` and `q` of load
/// nodes. Everything else is a virtual (zero-injection) coordinate.
pub fn free_coordinates(model: &FeederModel) -> Vec<usize> {
    let n = model.n_nodes();
    let loads = model.load_nodes();
    loads.iter().copied().chain(loads.iter().map(|&i| n + i)).collect()
}

/// Projection onto the feasible set: zero the injections of non-load nodes.
pub fn project_virtual(model: &FeederModel, z: &mut DVector<f64>) {
    let n = model.n_nodes();
    for i in (0..n).filter(|&i| !model.is_load(i)) {
        z[i] = 0.0;
        z[n + i] = 0.0;
    }
}

fn check_batch(meters: &MeterSet, batch: &MeasurementBatch) -> Result<()> {
    if batch.values.len() != batch.meter_ids.len() {
        return Err(Error::Dimension {
            context: "batch values vs meter ids",
            expected: batch.meter_ids.len(),
            got: batch.values.len(),
        });
    }
    if let Some(&id) = batch.meter_ids.iter().find(|&&id| id >= meters.len()) {
        return Err(Error::InvalidArgument(format!(
            "batch references meter {id}, but only {} meters exist",
            meters.len()
        )));
    }
    Ok(())
}

/// `½ Σ w_i (y_i − h_i(z))²` given the voltage magnitudes that belong to `z`.
pub(crate) fn objective_at(meters: &MeterSet, batch: &MeasurementBatch, z: &DVector<f64>, v_mag: &DVector<f64>) -> f64 {
    batch
        .meter_ids
        .iter()
        .zip(&batch.values)
        .map(|(&id, &y)| {
            let m = &meters.meters()[id];
            let r = y - m.predict(z, v_mag);
            0.5 * m.weight() * r * r
        })
        .sum()
}

/// `Hᵀ W (h(z) − y)` over the batch rows, with `H` taken from `sens`.
pub(crate) fn gradient_at(
    meters: &MeterSet,
    batch: &MeasurementBatch,
    z: &DVector<f64>,
    v_mag: &DVector<f64>,
    sens: &SensitivityMatrix,
) -> DVector<f64> {
    let mut g = DVector::zeros(z.len());
    for (&id, &y) in batch.meter_ids.iter().zip(&batch.values) {
        let m = &meters.meters()[id];
        let r = m.predict(z, v_mag) - y;
        m.accumulate_row(sens, m.weight() * r, &mut g);
    }
    g
}

/// WLS objective of the batch at `z`, through the full nonlinear power flow.
pub fn wls_objective(
    z: &InjectionVector,
    batch: &MeasurementBatch,
    meters: &MeterSet,
    model: &FeederModel,
    opts: &PowerFlowOptions,
) -> Result<f64> {
    check_batch(meters, batch)?;
    let sol = solve_power_flow(model, z, opts)?;
    Ok(objective_at(meters, batch, &z.to_state(), &sol.v_mag))
}

/// Gradient `Hᵀ W (h(z) − y)` of the batch objective, with `h(z)` from an
/// exact power flow at `z` and `H` from `sens`.
pub fn wls_gradient(
    z: &InjectionVector,
    batch: &MeasurementBatch,
    meters: &MeterSet,
    model: &FeederModel,
    sens: &SensitivityMatrix,
    opts: &PowerFlowOptions,
) -> Result<DVector<f64>> {
    check_batch(meters, batch)?;
    let n = model.n_nodes();
    if sens.n_nodes() != n || sens.h.ncols() != 2 * n {
        return Err(Error::Dimension {
            context: "sensitivity matrix rows",
            expected: n,
            got: sens.n_nodes(),
        });
    }
    let sol = solve_power_flow(model, z, opts)?;
    Ok(gradient_at(meters, batch, &z.to_state(), &sol.v_mag, sens))
}
