//! Steady-state tracking bound for stochastic gradient on the linear
//! counterpart, and an empirical harness that measures its constants.

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::linear::{linear_wls_closed_form, subset_gradient, LinearWlsProblem};
use crate::error::{Error, Result};

/// Constants of the bound `(η²σ_f² + η²Δ₁ + Δ_z) / (2ητ₁)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParameters {
    /// Lower bound on the smallest gain-matrix eigenvalue.
    pub tau1: f64,
    /// Bound on the squared stochastic-gradient norm.
    pub sigma_f2: f64,
    /// Bound on the squared gap between nonlinear and linear gradients.
    pub delta1: f64,
    /// Bound on the optimizer drift between consecutive steps.
    pub delta_z: f64,
    pub eta: f64,
}

/// `lim E‖z_t − z*_t‖² ≤ (η²σ_f² + η²Δ₁ + Δ_z) / (2ητ₁)`, valid for
/// `0 < η ≤ 1/(2τ₁)`.
pub fn theorem1_bound(params: &BoundParameters) -> Result<f64> {
    let p = params;
    if !(p.tau1 > 0.0) {
        return Err(Error::InvalidArgument(format!("tau1 must be positive, got {}", p.tau1)));
    }
    if !(p.eta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stepsize must be positive, got {}",
            p.eta
        )));
    }
    if p.eta > 1.0 / (2.0 * p.tau1) {
        return Err(Error::InvalidArgument(format!(
            "stepsize {:.3e} exceeds 1/(2·tau1) = {:.3e}",
            p.eta,
            1.0 / (2.0 * p.tau1)
        )));
    }
    if [p.sigma_f2, p.delta1, p.delta_z]
        .iter()
        .any(|&x| !(x >= 0.0 && x.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "bound constants must be finite and nonnegative".into(),
        ));
    }
    Ok((p.eta * p.eta * p.sigma_f2 + p.eta * p.eta * p.delta1 + p.delta_z) / (2.0 * p.eta * p.tau1))
}

/// One observed stochastic step: the iterate, the arrived rows, and (for a
/// nonlinear model) the nonlinear predictions `h(z)` in the problem's
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleStep {
    /// Index into [`BoundSample::problems`].
    pub problem: usize,
    pub z: DVector<f64>,
    pub subset: Vec<usize>,
    pub nonlinear_h: Option<DVector<f64>>,
}

/// A sampled trajectory: time-ordered linearized problems and steps on them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundSample {
    pub problems: Vec<LinearWlsProblem>,
    pub steps: Vec<SampleStep>,
}

/// Measures the bound constants over a sample:
/// τ₁ = min λ_min(HᵀWH), σ_f² = max ‖f‖², Δ₁ = max ‖f̃ − f‖²,
/// Δ_z = max ‖z*_{k+1} − z*_k‖ between consecutive problems.
pub fn estimate_bound_constants(sample: &BoundSample, eta: f64) -> Result<BoundParameters> {
    if sample.problems.is_empty() || sample.steps.is_empty() {
        return Err(Error::InvalidArgument("bound constants need a non-empty sample".into()));
    }
    let mut tau1 = f64::INFINITY;
    let mut optima = Vec::with_capacity(sample.problems.len());
    for p in &sample.problems {
        tau1 = tau1.min(p.gain().symmetric_eigenvalues().min());
        optima.push(linear_wls_closed_form(p)?);
    }
    let delta_z = optima.windows(2).map(|w| (&w[1] - &w[0]).norm()).fold(0.0, f64::max);

    let mut sigma_f2: f64 = 0.0;
    let mut delta1: f64 = 0.0;
    for s in &sample.steps {
        let p = sample
            .problems
            .get(s.problem)
            .ok_or_else(|| Error::InvalidArgument(format!("sample step refers to missing problem {}", s.problem)))?;
        let f = subset_gradient(p, &s.z, &s.subset);
        sigma_f2 = sigma_f2.max(f.norm_squared());
        if let Some(h) = &s.nonlinear_h {
            // f̃ − f = H_sᵀ W_s (h_s(z) − H_s z)
            let mut gap = DVector::zeros(p.n_state());
            for &i in &s.subset {
                let row = p.h_matrix.row(i);
                let d = h[i] - row.dot(&s.z.transpose());
                gap.axpy(p.w[i] * d, &row.transpose(), 1.0);
            }
            delta1 = delta1.max(gap.norm_squared());
        }
    }
    Ok(BoundParameters {
        tau1,
        sigma_f2,
        delta1,
        delta_z,
        eta,
    })
}

/// Monte Carlo settings for [`verify_linear_bound`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundVerification {
    pub eta: f64,
    /// Rows drawn uniformly without replacement at every step.
    pub m_t: usize,
    pub steps: usize,
    /// Steps at the end of each run that enter the steady-state averages.
    pub trailing: usize,
    pub seeds: u64,
    pub base_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub params: BoundParameters,
    pub bound: f64,
    /// Mean of `‖z_t − z*‖²` over the trailing window of every seed.
    pub mse: f64,
    /// Standard error of `mse` across seeds.
    pub mse_std_error: f64,
    pub optimum: DVector<f64>,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.mse <= self.bound
    }
}

/// Runs linear stochastic gradient on a static problem from `z0` for every
/// seed and compares the trailing mean squared error with the bound whose
/// constants are measured on the trailing iterates (Δ₁ = Δ_z = 0 here).
pub fn verify_linear_bound(
    problem: &LinearWlsProblem,
    z0: &DVector<f64>,
    cfg: &BoundVerification,
) -> Result<BoundReport> {
    if cfg.m_t > problem.n_meas() {
        return Err(Error::InvalidArgument(format!(
            "m_t = {} exceeds the {} rows of the problem",
            cfg.m_t,
            problem.n_meas()
        )));
    }
    if cfg.trailing == 0 || cfg.trailing > cfg.steps || cfg.seeds == 0 {
        return Err(Error::InvalidArgument(
            "need at least one seed and 0 < trailing ≤ steps".into(),
        ));
    }
    if z0.len() != problem.n_state() {
        return Err(Error::Dimension {
            context: "bound harness initial state",
            expected: problem.n_state(),
            got: z0.len(),
        });
    }
    let optimum = linear_wls_closed_form(problem)?;
    let tau1 = problem.gain().symmetric_eigenvalues().min();

    // Per seed: (mean trailing squared error, max trailing ‖f‖²).
    let per_seed: Vec<(f64, f64)> = (0..cfg.seeds)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed.wrapping_add(k));
            let mut z = z0.clone();
            let mut err_sum = 0.0;
            let mut f_max: f64 = 0.0;
            let start = cfg.steps - cfg.trailing;
            for t in 0..cfg.steps {
                let mut subset = sample(&mut rng, problem.n_meas(), cfg.m_t).into_vec();
                subset.sort_unstable();
                let f = subset_gradient(problem, &z, &subset);
                if t >= start {
                    f_max = f_max.max(f.norm_squared());
                }
                z.axpy(-cfg.eta, &f, 1.0);
                if t >= start {
                    err_sum += (&z - &optimum).norm_squared();
                }
            }
            (err_sum / cfg.trailing as f64, f_max)
        })
        .collect();

    let n = per_seed.len() as f64;
    let mse = per_seed.iter().map(|r| r.0).sum::<f64>() / n;
    let var = per_seed.iter().map(|r| (r.0 - mse).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let params = BoundParameters {
        tau1,
        sigma_f2: per_seed.iter().map(|r| r.1).fold(0.0, f64::max),
        delta1: 0.0,
        delta_z: 0.0,
        eta: cfg.eta,
    };
    Ok(BoundReport {
        bound: theorem1_bound(&params)?,
        params,
        mse,
        mse_std_error: (var / n).sqrt(),
        optimum,
    })
}
