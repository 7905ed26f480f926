//! Linear weighted least squares: the convex counterpart of the estimation
//! problem with `h(z)` replaced by a constant Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `min ½ (y − H z)ᵀ W (y − H z)` with diagonal `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearWlsProblem {
    pub h_matrix: DMatrix<f64>,
    /// Diagonal of `W` (inverse variances).
    pub w: DVector<f64>,
    pub y: DVector<f64>,
}

impl LinearWlsProblem {
    pub fn new(h_matrix: DMatrix<f64>, w: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        let m = h_matrix.nrows();
        if w.len() != m {
            return Err(Error::Dimension {
                context: "weights vs Jacobian rows",
                expected: m,
                got: w.len(),
            });
        }
        if y.len() != m {
            return Err(Error::Dimension {
                context: "measurements vs Jacobian rows",
                expected: m,
                got: y.len(),
            });
        }
        if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument("weights must be positive and finite".into()));
        }
        Ok(LinearWlsProblem { h_matrix, w, y })
    }

    pub fn n_meas(&self) -> usize {
        self.h_matrix.nrows()
    }

    pub fn n_state(&self) -> usize {
        self.h_matrix.ncols()
    }

    /// Gain matrix `Hᵀ W H`.
    pub fn gain(&self) -> DMatrix<f64> {
        let wh = DMatrix::from_fn(self.n_meas(), self.n_state(), |i, j| self.w[i] * self.h_matrix[(i, j)]);
        self.h_matrix.tr_mul(&wh)
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let r = &self.y - &self.h_matrix * z;
        0.5 * r.iter().zip(self.w.iter()).map(|(r, w)| w * r * r).sum::<f64>()
    }

    /// Replaces `y`, keeping `H` and `W`.
    pub fn with_measurements(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.h_matrix.clone(), self.w.clone(), y)
    }
}

/// Gradient contribution of the rows in `subset`: `H_sᵀ W_s (H_s z − y_s)`.
pub fn subset_gradient(problem: &LinearWlsProblem, z: &DVector<f64>, subset: &[usize]) -> DVector<f64> {
    let mut g = DVector::zeros(problem.n_state());
    for &i in subset {
        let row = problem.h_matrix.row(i);
        let r = row.dot(&z.transpose()) - problem.y[i];
        g.axpy(problem.w[i] * r, &row.transpose(), 1.0);
    }
    g
}

pub fn full_gradient(problem: &LinearWlsProblem, z: &DVector<f64>) -> DVector<f64> {
    let all: Vec<usize> = (0..problem.n_meas()).collect();
    subset_gradient(problem, z, &all)
}

/// Unique minimizer `(HᵀWH)⁻¹ HᵀW y`, via a Cholesky factorization of the gain.
pub fn linear_wls_closed_form(problem: &LinearWlsProblem) -> Result<DVector<f64>> {
    let gain = problem.gain();
    let chol = gain
        .cholesky()
        .ok_or_else(|| Error::Singular("gain matrix HᵀWH is not positive definite (rank deficient H)".into()))?;
    let rhs = problem.h_matrix.tr_mul(&problem.y.component_mul(&problem.w));
    Ok(chol.solve(&rhs))
}

/// One step of `z ← z − η H_sᵀ W_s (H_s z − y_s)` over the rows in `subset`.
pub fn linear_sgd_dynamics_step(
    z: &DVector<f64>,
    problem: &LinearWlsProblem,
    subset: &[usize],
    eta: f64,
) -> DVector<f64> {
    z - subset_gradient(problem, z, subset) * eta
}
