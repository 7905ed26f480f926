//! Multiphase power flow `v = g(p, q)` and voltage-magnitude sensitivities.
//!
//! Injections use the load convention: positive `p`, `q` is consumption.
//! The solver is the Z-bus fixed point
//!
//! ```text
//! V ← w − Y_LL⁻¹ · conj(s ⊘ V),        w = −Y_LL⁻¹ Y_L0 V₀
//! ```
//!
//! which for radial feeders converges linearly from the no-load profile `w`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::feeder::FeederModel;
use crate::measurement::MeterSet;

/// Per-node active and reactive consumption in per-unit.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionVector {
    pub p: DVector<f64>,
    pub q: DVector<f64>,
}

impl InjectionVector {
    pub fn zeros(n: usize) -> Self {
        InjectionVector {
            p: DVector::zeros(n),
            q: DVector::zeros(n),
        }
    }

    pub fn new(p: DVector<f64>, q: DVector<f64>) -> Self {
        assert_eq!(p.len(), q.len(), "p and q must have the same length");
        InjectionVector { p, q }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Stacked state `z = [p; q]`.
    pub fn to_state(&self) -> DVector<f64> {
        let n = self.len();
        DVector::from_fn(2 * n, |i, _| if i < n { self.p[i] } else { self.q[i - n] })
    }

    pub fn from_state(z: &DVector<f64>) -> Self {
        assert!(z.len().is_multiple_of(2), "state vector must have even length");
        let n = z.len() / 2;
        InjectionVector {
            p: z.rows(0, n).into_owned(),
            q: z.rows(n, n).into_owned(),
        }
    }

    fn complex(&self, i: usize) -> Complex64 {
        Complex64::new(self.p[i], self.q[i])
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.q.iter()).all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerFlowOptions {
    /// Infinity-norm bound on the per-unit power mismatch.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-10,
            max_iterations: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoltageSolution {
    pub v_complex: DVector<Complex64>,
    pub v_mag: DVector<f64>,
    pub iterations: usize,
    /// Infinity norm of the power mismatch at `v_complex`.
    pub residual: f64,
}

/// Largest |ΔP| or |ΔQ| between the power drawn at `v` and the demand `s`.
pub fn power_mismatch(model: &FeederModel, v: &DVector<Complex64>, s: &InjectionVector) -> f64 {
    let n = model.n_nodes();
    let current = model.ybus().view((0, 0), (n, n)) * v + model.y_l0() * model.slack_voltage();
    let mut worst = 0.0f64;
    for i in 0..v.len() {
        let injected = v[i] * current[i].conj();
        let mis = injected + s.complex(i);
        worst = worst.max(mis.re.abs()).max(mis.im.abs());
        if !mis.re.is_finite() || !mis.im.is_finite() {
            return f64::INFINITY;
        }
    }
    worst
}

/// Solves the power flow from the no-load voltage profile.
pub fn solve_power_flow(model: &FeederModel, s: &InjectionVector, opts: &PowerFlowOptions) -> Result<VoltageSolution> {
    solve_power_flow_from(model, s, opts, model.no_load_voltage())
}

/// Solves the power flow starting the iteration at `v_start`.
pub fn solve_power_flow_from(
    model: &FeederModel,
    s: &InjectionVector,
    opts: &PowerFlowOptions,
    v_start: &DVector<Complex64>,
) -> Result<VoltageSolution> {
    let n = model.n_nodes();
    if s.len() != n {
        return Err(Error::Dimension {
            context: "power flow injections",
            expected: n,
            got: s.len(),
        });
    }
    if v_start.len() != n {
        return Err(Error::Dimension {
            context: "power flow initial voltage",
            expected: n,
            got: v_start.len(),
        });
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::InvalidArgument("power flow tolerance must be positive".into()));
    }
    if !s.is_finite() {
        return Err(Error::InvalidArgument("non-finite injection".into()));
    }

    let lu = model.y_ll_lu();
    let w = model.no_load_voltage();
    let mut v = v_start.clone();
    let mut residual = power_mismatch(model, &v, s);
    let mut iterations = 0;
    while residual > opts.tolerance {
        if iterations == opts.max_iterations || !residual.is_finite() {
            return Err(Error::NonConvergence { iterations, residual });
        }
        let u = DVector::from_fn(n, |i, _| (s.complex(i) / v[i]).conj());
        let du = lu.solve(&u).ok_or_else(|| Error::Singular("Y_LL".into()))?;
        v = w - du;
        iterations += 1;
        residual = power_mismatch(model, &v, s);
    }
    let v_mag = v.map(|c| c.norm());
    Ok(VoltageSolution {
        v_complex: v,
        v_mag,
        iterations,
        residual,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum JacobianMethod {
    /// Central differences with per-component step `step` (2·2n power-flow solves).
    FiniteDifference { step: f64 },
    /// Exact derivative of the solved fixed point, by implicit differentiation.
    #[default]
    FixedPointLinearization,
}

/// `∂|V|/∂(p, q)`: an `n × 2n` matrix, columns `[∂/∂p | ∂/∂q]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMatrix {
    pub h: DMatrix<f64>,
    pub operating_point: InjectionVector,
    pub method: JacobianMethod,
}

impl SensitivityMatrix {
    pub fn n_nodes(&self) -> usize {
        self.h.nrows()
    }
}

/// Voltage-magnitude Jacobian at the operating point `s`.
pub fn jacobian_vm(
    model: &FeederModel,
    s: &InjectionVector,
    method: JacobianMethod,
    opts: &PowerFlowOptions,
) -> Result<SensitivityMatrix> {
    let base = solve_power_flow(model, s, opts)?;
    match method {
        JacobianMethod::FixedPointLinearization => linearize_at(model, s, &base.v_complex),
        JacobianMethod::FiniteDifference { step } => finite_difference(model, s, &base, step, opts),
    }
}

/// Implicit derivative of `V = w − Z conj(s ⊘ V)` at a solved voltage `v`.
///
/// With `A = Z diag(conj(s)/conj(V)²)` and `B = Z diag(1/conj(V))` the
/// differential satisfies `dV − A conj(dV) = −B conj(ds)`, a real linear system
/// in `(Re dV, Im dV)`.
pub fn linearize_at(model: &FeederModel, s: &InjectionVector, v: &DVector<Complex64>) -> Result<SensitivityMatrix> {
    let n = model.n_nodes();
    if s.len() != n || v.len() != n {
        return Err(Error::Dimension {
            context: "linearization point",
            expected: n,
            got: s.len().min(v.len()),
        });
    }
    let lu = model.y_ll_lu();
    let singular = || Error::Singular("Y_LL".into());
    let da = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            s.complex(i).conj() / (v[i].conj() * v[i].conj())
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let db = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0) / v[i].conj()
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let a = lu.solve(&da).ok_or_else(singular)?;
    let b = lu.solve(&db).ok_or_else(singular)?;

    let mut m = DMatrix::<f64>::identity(2 * n, 2 * n);
    let mut rhs = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let (ar, ai) = (a[(i, j)].re, a[(i, j)].im);
            let (br, bi) = (b[(i, j)].re, b[(i, j)].im);
            m[(i, j)] -= ar;
            m[(i, n + j)] -= ai;
            m[(n + i, j)] -= ai;
            m[(n + i, n + j)] += ar;
            rhs[(i, j)] = -br;
            rhs[(i, n + j)] = -bi;
            rhs[(n + i, j)] = -bi;
            rhs[(n + i, n + j)] = br;
        }
    }
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("power flow linearization (voltage collapse?)".into()))?;

    let h = DMatrix::from_fn(n, 2 * n, |i, k| {
        let mag = v[i].norm();
        (v[i].re * x[(i, k)] + v[i].im * x[(n + i, k)]) / mag
    });
    Ok(SensitivityMatrix {
        h,
        operating_point: s.clone(),
        method: JacobianMethod::FixedPointLinearization,
    })
}

fn finite_difference(
    model: &FeederModel,
    s: &InjectionVector,
    base: &VoltageSolution,
    step: f64,
    opts: &PowerFlowOptions,
) -> Result<SensitivityMatrix> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let n = model.n_nodes();
    let z = s.to_state();
    let mut h = DMatrix::zeros(n, 2 * n);
    for k in 0..2 * n {
        let mut plus = z.clone();
        plus[k] += step;
        let mut minus = z.clone();
        minus[k] -= step;
        let vp = solve_power_flow_from(model, &InjectionVector::from_state(&plus), opts, &base.v_complex)?;
        let vm = solve_power_flow_from(model, &InjectionVector::from_state(&minus), opts, &base.v_complex)?;
        let col = (vp.v_mag - vm.v_mag) / (2.0 * step);
        h.set_column(k, &col);
    }
    Ok(SensitivityMatrix {
        h,
        operating_point: s.clone(),
        method: JacobianMethod::FiniteDifference { step },
    })
}

/// Evaluates `h(z)`: voltage magnitudes at voltage meters and the injection
/// itself for pseudo and virtual meters, in meter order.
pub fn measurement_function(
    model: &FeederModel,
    s: &InjectionVector,
    meters: &MeterSet,
    opts: &PowerFlowOptions,
) -> Result<DVector<f64>> {
    let sol = solve_power_flow(model, s, opts)?;
    let z = s.to_state();
    Ok(DVector::from_iterator(
        meters.len(),
        meters.iter().map(|m| m.predict(&z, &sol.v_mag)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feeder::FeederTemplate;
    use crate::measurement::{Meter, MeterKind};

    fn single(n: usize, node: usize, p: f64, q: f64) -> InjectionVector {
        let mut s = InjectionVector::zeros(n);
        s.p[node] = p;
        s.q[node] = q;
        s
    }

    #[test]
    fn zero_injection_returns_no_load_voltage() {
        for t in FeederTemplate::ALL {
            let m = t.load();
            let sol = solve_power_flow(&m, &InjectionVector::zeros(m.n_nodes()), &PowerFlowOptions::default()).unwrap();
            assert_eq!(sol.iterations, 0);
            assert!(sol.residual < 1e-11, "{} residual {}", t.name(), sol.residual);
            assert_eq!(&sol.v_complex, m.no_load_voltage());
            for (mag, c) in sol.v_mag.iter().zip(sol.v_complex.iter()) {
                assert_eq!(*mag, c.norm());
                assert!((mag - 1.0).abs() < 1e-9, "series-only feeder has flat no-load profile");
            }
        }
    }

    #[test]
    fn two_bus_closed_form() {
        // one line from a 1∠0 source: V = 1 − z conj(s/V)  ⇒  |V|² = conj(V) − z conj(s)
        let m = FeederTemplate::TwoBus.load();
        let s = single(1, 0, 0.1, 0.0);
        let sol = solve_power_flow(&m, &s, &PowerFlowOptions::default()).unwrap();
        let v = sol.v_complex[0];
        let z = Complex64::new(0.01, 0.01);
        let lhs = v * v.conj();
        let rhs = v.conj() - z * Complex64::new(0.1, 0.0);
        assert!((lhs - rhs).norm() < 1e-10);
        assert!(sol.v_mag[0] < 1.0);
    }

    #[test]
    fn voltage_collapse_is_reported() {
        let m = FeederTemplate::TwoBus.load();
        let err = solve_power_flow(&m, &single(1, 0, 100.0, 0.0), &PowerFlowOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }), "{err}");
    }

    #[test]
    fn residual_reproduces_from_solution() {
        let m = FeederTemplate::ThirteenNode.load();
        let mut s = InjectionVector::zeros(m.n_nodes());
        for (k, &i) in m.load_nodes().iter().enumerate() {
            s.p[i] = 0.05 + 0.01 * k as f64;
            s.q[i] = 0.02;
        }
        let opts = PowerFlowOptions::default();
        let sol = solve_power_flow(&m, &s, &opts).unwrap();
        assert!(sol.residual <= opts.tolerance);
        assert_eq!(power_mismatch(&m, &sol.v_complex, &s), sol.residual);
    }

    #[test]
    fn more_load_depresses_voltage() {
        let m = FeederTemplate::TwoBus.load();
        let h = jacobian_vm(
            &m,
            &single(1, 0, 0.1, 0.02),
            JacobianMethod::default(),
            &PowerFlowOptions::default(),
        )
        .unwrap();
        assert_eq!(h.h.shape(), (1, 2));
        assert!(h.h[(0, 0)] < 0.0);
        assert!(h.h[(0, 1)] < 0.0);
    }

    #[test]
    fn linearization_matches_finite_difference_at_light_load() {
        let m = FeederTemplate::FourBus.load();
        let mut s = InjectionVector::zeros(m.n_nodes());
        for &i in m.load_nodes() {
            s.p[i] = 0.05;
            s.q[i] = 0.01;
        }
        let opts = PowerFlowOptions::default();
        let lin = jacobian_vm(&m, &s, JacobianMethod::FixedPointLinearization, &opts).unwrap();
        let fd = jacobian_vm(&m, &s, JacobianMethod::FiniteDifference { step: 1e-5 }, &opts).unwrap();
        let err = (&lin.h - &fd.h).amax();
        assert!(err < 1e-3, "max entry error {err}");
    }

    #[test]
    fn measurement_function_projects_and_composes() {
        let m = FeederTemplate::TwoBus.load();
        let s = single(1, 0, 0.1, 0.03);
        let opts = PowerFlowOptions::default();
        let v = solve_power_flow(&m, &s, &opts).unwrap().v_mag[0];
        let meters =
            |kinds: &[MeterKind]| MeterSet::from_meters(kinds.iter().map(|&k| Meter::new(k, 0, 0.1)).collect());
        let hv = measurement_function(&m, &s, &meters(&[MeterKind::VoltageMag]), &opts).unwrap();
        assert_eq!(hv.as_slice(), &[v]);
        let hp = measurement_function(&m, &s, &meters(&[MeterKind::PseudoP]), &opts).unwrap();
        assert_eq!(hp.as_slice(), &[0.1]);
        let all = measurement_function(
            &m,
            &s,
            &meters(&[MeterKind::VoltageMag, MeterKind::PseudoP, MeterKind::PseudoQ]),
            &opts,
        )
        .unwrap();
        assert_eq!(all.as_slice(), &[v, 0.1, 0.03]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = FeederTemplate::FourBus.load();
        let err = solve_power_flow(&m, &InjectionVector::zeros(2), &PowerFlowOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }
}
