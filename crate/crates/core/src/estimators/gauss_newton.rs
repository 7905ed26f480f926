//! Gauss-Newton for weighted nonlinear least squares.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::online::{EstimatorState, OnlineSettings};
use super::{check_batch, free_coordinates, project_virtual};
use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::measurement::{MeasurementBatch, MeterSet};
use crate::powerflow::{linearize_at, solve_power_flow_from, InjectionVector, PowerFlowOptions};

/// A measurement function `h(z)` together with its Jacobian.
pub trait MeasurementModel {
    fn state_dim(&self) -> usize;

    /// Coordinates the solver moves; the rest stay at their initial values.
    fn free_coordinates(&self) -> Vec<usize> {
        (0..self.state_dim()).collect()
    }

    /// Projection applied to every iterate.
    fn project(&self, _z: &mut DVector<f64>) {}

    /// `h(z)` and `∂h/∂z` (rows aligned with the measurements).
    fn evaluate(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;
}

/// `h(z) = H z`.
impl MeasurementModel for DMatrix<f64> {
    fn state_dim(&self) -> usize {
        self.ncols()
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self * z, self.clone()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnResult {
    pub z: DVector<f64>,
    /// Updates larger than the tolerance.
    pub iterations: usize,
    pub converged: bool,
    /// `‖H_fᵀ W (y − h(z))‖∞` at the returned `z`.
    pub fonc_residual: f64,
    /// `‖H_fᵀ W H_f‖∞` at the returned `z`.
    pub gain_norm: f64,
}

struct Normal {
    gain: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn normal_equations<M: MeasurementModel + ?Sized>(
    model: &M,
    free: &[usize],
    w: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<Normal> {
    let (h, jac) = model.evaluate(z)?;
    if h.len() != y.len() || jac.nrows() != y.len() {
        return Err(Error::Dimension {
            context: "measurement model rows",
            expected: y.len(),
            got: h.len(),
        });
    }
    let hf = jac.select_columns(free);
    let whf = DMatrix::from_fn(hf.nrows(), hf.ncols(), |i, j| w[i] * hf[(i, j)]);
    Ok(Normal {
        gain: hf.tr_mul(&whf),
        rhs: whf.tr_mul(&(y - h)),
    })
}

/// Iterates `z ← P(z + G⁻¹ Hᵀ W (y − h(z)))` with `H` re-evaluated at each
/// iterate, until the update satisfies `‖Δz‖∞ ≤ tol` or `max_iter` updates
/// were made. A singular gain is an error; non-convergence is reported in the
/// result.
pub fn gauss_newton<M: MeasurementModel + ?Sized>(
    model: &M,
    y: &DVector<f64>,
    w: &DVector<f64>,
    z0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<GnResult> {
    if z0.len() != model.state_dim() {
        return Err(Error::Dimension {
            context: "Gauss-Newton initial state",
            expected: model.state_dim(),
            got: z0.len(),
        });
    }
    if w.len() != y.len() {
        return Err(Error::Dimension {
            context: "weights vs measurements",
            expected: y.len(),
            got: w.len(),
        });
    }
    let free = model.free_coordinates();
    let mut z = z0.clone();
    model.project(&mut z);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let ne = normal_equations(model, &free, w, y, &z)?;
        let dz = ne
            .gain
            .cholesky()
            .ok_or_else(|| Error::Singular("Gauss-Newton gain matrix is not positive definite".into()))?
            .solve(&ne.rhs);
        for (k, &c) in free.iter().enumerate() {
            z[c] += dz[k];
        }
        model.project(&mut z);
        if dz.amax() <= tol {
            converged = true;
            break;
        }
        iterations += 1;
    }
    let ne = normal_equations(model, &free, w, y, &z)?;
    let gain_norm = ne
        .gain
        .row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(GnResult {
        z,
        iterations,
        converged,
        fonc_residual: ne.rhs.amax(),
        gain_norm,
    })
}

/// The feeder measurement function for the meters of one batch.
struct FeederMeasurement<'a> {
    model: &'a FeederModel,
    meters: &'a MeterSet,
    ids: &'a [usize],
    opts: PowerFlowOptions,
    warm: RefCell<DVector<Complex64>>,
}

impl MeasurementModel for FeederMeasurement<'_> {
    fn state_dim(&self) -> usize {
        2 * self.model.n_nodes()
    }

    fn free_coordinates(&self) -> Vec<usize> {
        free_coordinates(self.model)
    }

    fn project(&self, z: &mut DVector<f64>) {
        project_virtual(self.model, z);
    }

    fn evaluate(&self, z: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let s = InjectionVector::from_state(z);
        let sol = solve_power_flow_from(self.model, &s, &self.opts, &self.warm.borrow())?;
        let sens = linearize_at(self.model, &s, &sol.v_complex)?;
        let h = DVector::from_iterator(
            self.ids.len(),
            self.ids
                .iter()
                .map(|&id| self.meters.meters()[id].predict(z, &sol.v_mag)),
        );
        *self.warm.borrow_mut() = sol.v_complex;
        Ok((h, self.meters.jacobian(&sens, self.ids)))
    }
}

#[derive(Clone, Debug)]
pub struct GaussNewtonOutcome {
    pub state: EstimatorState,
    pub iterations: usize,
    pub converged: bool,
    pub fonc_residual: f64,
    pub gain_norm: f64,
}

/// Batch Gauss-Newton on the feeder model. Only load-node injections are
/// solved for; virtual coordinates stay at zero.
pub fn gauss_newton_solve(
    model: &FeederModel,
    meters: &MeterSet,
    batch: &MeasurementBatch,
    z0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
    opts: &PowerFlowOptions,
) -> Result<GaussNewtonOutcome> {
    check_batch(meters, batch)?;
    let fm = FeederMeasurement {
        model,
        meters,
        ids: &batch.meter_ids,
        opts: *opts,
        warm: RefCell::new(model.no_load_voltage().clone()),
    };
    let y = DVector::from_column_slice(&batch.values);
    let w = DVector::from_iterator(
        batch.m_t(),
        batch.meter_ids.iter().map(|&id| meters.meters()[id].weight()),
    );
    let result = gauss_newton(&fm, &y, &w, z0, tol, max_iter)?;
    if !result.converged {
        log::warn!(
            "Gauss-Newton stopped after {} iterations without meeting tolerance {tol:.1e}",
            result.iterations
        );
    }
    let settings = OnlineSettings {
        power_flow: *opts,
        ..OnlineSettings::default()
    };
    let state = EstimatorState::new(model, &result.z, 0.0, settings)?;
    Ok(GaussNewtonOutcome {
        state,
        iterations: result.iterations,
        converged: result.converged,
        fonc_residual: result.fonc_residual,
        gain_norm: result.gain_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::linear::{linear_wls_closed_form, LinearWlsProblem};
    use crate::feeder::FeederTemplate;
    use crate::measurement::{Meter, MeterKind};
    use crate::powerflow::solve_power_flow;

    #[test]
    fn linear_model_converges_in_one_iteration() {
        let h = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let w = DVector::from_column_slice(&[1.0, 2.0, 0.5, 4.0]);
        let y = DVector::from_column_slice(&[0.1, -0.3, 0.2, 1.0]);
        let r = gauss_newton(&h, &y, &w, &DVector::zeros(2), 1e-12, 20).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        let closed = linear_wls_closed_form(&LinearWlsProblem::new(h, w, y).unwrap()).unwrap();
        assert!((r.z - closed).amax() < 1e-12);
    }

    #[test]
    fn two_bus_noiseless_recovery_and_fixed_point() {
        let model = FeederTemplate::TwoBus.load();
        let meters = MeterSet::new(
            &model,
            vec![
                Meter::new(MeterKind::VoltageMag, 0, 0.01),
                Meter::new(MeterKind::PseudoP, 0, 0.5),
                Meter::new(MeterKind::PseudoQ, 0, 0.5),
            ],
        )
        .unwrap();
        let truth = DVector::from_column_slice(&[0.4, 0.15]);
        let opts = PowerFlowOptions::default();
        let v = solve_power_flow(&model, &InjectionVector::from_state(&truth), &opts)
            .unwrap()
            .v_mag;
        let batch = MeasurementBatch {
            t: 1,
            meter_ids: vec![0, 1, 2],
            values: vec![v[0], 0.4, 0.15],
        };
        let out = gauss_newton_solve(&model, &meters, &batch, &DVector::zeros(2), 1e-10, 20, &opts).unwrap();
        assert!(out.converged);
        assert!((&out.state.z - &truth).amax() < 1e-6);

        let still = gauss_newton_solve(&model, &meters, &batch, &truth, 1e-8, 20, &opts).unwrap();
        assert_eq!(still.iterations, 0);
        assert!((&still.state.z - &truth).amax() < 1e-8);
    }
}
