//! Independent reference implementations used only by tests: a
//! Newton-Raphson power flow in rectangular coordinates, a cyclic Jacobi
//! eigensolver, and exhaustive subset enumeration.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Solves `V ∘ conj(Y_LL V + Y_L0 V0) + s = 0` for `V` by Newton-Raphson on
/// `(Re V, Im V)`, starting from the no-load profile. Returns `None` if the
/// iteration does not reach `tol` within 50 steps.
pub fn newton_raphson_power_flow(
    y_ll: &DMatrix<Complex64>,
    y_l0: &DMatrix<Complex64>,
    v0: &DVector<Complex64>,
    s: &DVector<Complex64>,
    tol: f64,
) -> Option<DVector<Complex64>> {
    let n = y_ll.nrows();
    let i0 = y_l0 * v0;
    let mut v = y_ll.clone().lu().solve(&(-&i0))?;
    for _ in 0..50 {
        let current = y_ll * &v + &i0;
        let f = DVector::from_fn(n, |i, _| v[i] * current[i].conj() + s[i]);
        if f.iter().map(|c| c.re.abs().max(c.im.abs())).fold(0.0, f64::max) < tol {
            return Some(v);
        }
        // Columns: ∂F/∂Re V_k then ∂F/∂Im V_k; rows: Re F then Im F.
        let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for k in 0..n {
            for i in 0..n {
                let mut d_re = v[i] * y_ll[(i, k)].conj();
                let mut d_im = -Complex64::i() * v[i] * y_ll[(i, k)].conj();
                if i == k {
                    d_re += current[i].conj();
                    d_im += Complex64::i() * current[i].conj();
                }
                jac[(i, k)] = d_re.re;
                jac[(n + i, k)] = d_re.im;
                jac[(i, n + k)] = d_im.re;
                jac[(n + i, n + k)] = d_im.im;
            }
        }
        let rhs = DVector::from_fn(2 * n, |r, _| if r < n { -f[r].re } else { -f[r - n].im });
        let dx = jac.lu().solve(&rhs)?;
        for i in 0..n {
            v[i] += Complex64::new(dx[i], dx[n + i]);
        }
    }
    None
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut m = a.clone();
    let scale = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    eig
}

/// All `k`-element subsets of `0..m`, each ascending, in lexicographic order.
pub fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            if m - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= m {
        rec(0, m, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_counts() {
        assert_eq!(subsets(5, 2).len(), 10);
        assert_eq!(subsets(6, 3).len(), 20);
        assert_eq!(subsets(3, 0), vec![Vec::<usize>::new()]);
        assert!(subsets(2, 3).is_empty());
    }

    #[test]
    fn jacobi_on_known_spectrum() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = jacobi_eigenvalues(&a);
        assert!((e[0] - 1.0).abs() < 1e-14 && (e[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn jacobi_matches_library_solver() {
        let b = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) as f64).sin());
        let a = &b * b.transpose() + DMatrix::identity(6, 6) * 0.1;
        let mut lib: Vec<f64> = a.clone().symmetric_eigenvalues().iter().copied().collect();
        lib.sort_by(|x, y| x.total_cmp(y));
        for (x, y) in jacobi_eigenvalues(&a).iter().zip(&lib) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn newton_two_bus_closed_form() {
        // Series impedance z between a 1∠0 slack and the load: V = 1 − z conj(S_load / V).
        let z = Complex64::new(0.01, 0.01);
        let y = Complex64::new(1.0, 0.0) / z;
        let y_ll = DMatrix::from_element(1, 1, y);
        let y_l0 = DMatrix::from_element(1, 1, -y);
        let v0 = DVector::from_element(1, Complex64::new(1.0, 0.0));
        let s = DVector::from_element(1, Complex64::new(0.5, 0.2));
        let v = newton_raphson_power_flow(&y_ll, &y_l0, &v0, &s, 1e-14).unwrap();
        let back = Complex64::new(1.0, 0.0) - z * (s[0] / v[0]).conj();
        assert!((v[0] - back).norm() < 1e-12);
    }
}
