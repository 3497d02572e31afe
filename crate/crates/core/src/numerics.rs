//! Small dense real linear algebra for the design stage.
//!
//! Everything here operates on `nalgebra` dense matrices but the algorithms
//! themselves (elimination, Jacobi rotations, power iteration, Kronecker
//! Sylvester solve, matrix-sign Riccati solve) are implemented locally so the
//! tolerances and failure modes are under our control.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense real matrix, row/column indexed.
pub type Matrix = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Numerical tolerances used across the crate.
pub mod tol {
    /// Linear solve residual factor: `‖Ax − b‖∞ ≤ LINEAR_RESIDUAL·(1+‖b‖∞)`.
    pub const LINEAR_RESIDUAL: f64 = 1e-10;
    /// Pivot magnitude below `SINGULAR_PIVOT·‖A‖∞` means singular.
    pub const SINGULAR_PIVOT: f64 = 1e-12;
    /// Allowed asymmetry `‖S − Sᵀ‖∞ ≤ SYMMETRY·‖S‖∞`.
    pub const SYMMETRY: f64 = 1e-10;
    /// Jacobi stops when the off-diagonal norm is below `JACOBI_OFF·‖S‖_F`.
    pub const JACOBI_OFF: f64 = 1e-12;
    pub const JACOBI_MAX_SWEEPS: usize = 100;
    pub const POWER_REL: f64 = 1e-10;
    pub const POWER_MAX_ITER: usize = 10_000;
    /// Sylvester residual factor relative to `1+‖C‖∞`.
    pub const SYLVESTER_RESIDUAL: f64 = 1e-9;
    pub const SIGN_REL: f64 = 1e-13;
    pub const SIGN_MAX_ITER: usize = 100;
    /// Absolute residual accepted for the Riccati solution.
    pub const ARE_RESIDUAL: f64 = 1e-8;
    /// Symmetry of the Riccati solution after symmetrization.
    pub const ARE_SYMMETRY: f64 = 1e-10;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("singular matrix (pivot {pivot:.3e} below threshold {threshold:.3e})")]
    SingularMatrix { pivot: f64, threshold: f64 },
    #[error("matrix is not symmetric (asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
    #[error("Riccati solution rejected: {reason}")]
    NotStabilizable { reason: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Maximum absolute row sum.
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
///
/// `b` may hold several right-hand sides as columns.
pub fn solve_linear(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || n == 0 {
        return Err(NumericsError::Dimension(format!(
            "solve_linear: A is {}x{}, b is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if !is_finite(a) || !is_finite(b) {
        return Err(NumericsError::NonFinite("solve_linear input"));
    }
    let threshold = tol::SINGULAR_PIVOT * norm_inf(a);
    let mut m = a.clone();
    let mut x = b.clone();
    let nrhs = b.ncols();

    for col in 0..n {
        let (piv_row, piv_val) = (col..n)
            .map(|r| (r, m[(r, col)].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_val < threshold || piv_val == 0.0 {
            return Err(NumericsError::SingularMatrix {
                pivot: piv_val,
                threshold,
            });
        }
        if piv_row != col {
            m.swap_rows(piv_row, col);
            x.swap_rows(piv_row, col);
        }
        let pivot = m[(col, col)];
        for r in (col + 1)..n {
            let factor = m[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            m[(r, col)] = 0.0;
            for c in (col + 1)..n {
                m[(r, c)] -= factor * m[(col, c)];
            }
            for c in 0..nrhs {
                x[(r, c)] -= factor * x[(col, c)];
            }
        }
    }
    for c in 0..nrhs {
        for r in (0..n).rev() {
            let mut acc = x[(r, c)];
            for k in (r + 1)..n {
                acc -= m[(r, k)] * x[(k, c)];
            }
            x[(r, c)] = acc / m[(r, r)];
        }
    }
    Ok(x)
}

/// Inverse through [`solve_linear`] against the identity.
pub fn inverse(a: &Matrix) -> Result<Matrix> {
    solve_linear(a, &Matrix::identity(a.nrows(), a.ncols()))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(s: &Matrix) -> Result<Vec<f64>> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(NumericsError::Dimension(format!(
            "symmetric_eigenvalues: {}x{} is not square",
            s.nrows(),
            s.ncols()
        )));
    }
    if !is_finite(s) {
        return Err(NumericsError::NonFinite("symmetric_eigenvalues input"));
    }
    let asymmetry = norm_inf(&(s - s.transpose()));
    if asymmetry > tol::SYMMETRY * norm_inf(s) {
        return Err(NumericsError::NotSymmetric { asymmetry });
    }
    let mut a = (s + s.transpose()) * 0.5;
    let target = tol::JACOBI_OFF * a.norm();

    let off_norm = |a: &Matrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    acc += a[(i, j)] * a[(i, j)];
                }
            }
        }
        acc.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&a) > target {
        if sweeps == tol::JACOBI_MAX_SWEEPS {
            return Err(NumericsError::NoConvergence {
                what: "Jacobi eigenvalue sweep",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // A ← Jᵀ A J with J the (p, q) rotation
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

/// Largest singular value via power iteration on `MᵀM`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    if !is_finite(m) {
        return Err(NumericsError::NonFinite("spectral_norm input"));
    }
    let gram = m.transpose() * m;
    // Start from the heaviest column of the Gram matrix.
    let start = (0..gram.ncols()).max_by(|&a, &b| {
        gram.column(a)
            .norm_squared()
            .total_cmp(&gram.column(b).norm_squared())
    });
    let Some(start) = start else { return Ok(0.0) };
    let mut x: Vector = gram.column(start).into_owned();
    let mut nx = x.norm();
    if nx == 0.0 {
        return Ok(0.0);
    }
    x /= nx;
    let mut estimate = 0.0;
    for _ in 0..tol::POWER_MAX_ITER {
        let y = &gram * &x;
        let next = x.dot(&y);
        nx = y.norm();
        if nx == 0.0 {
            return Ok(0.0);
        }
        x = y / nx;
        if (next - estimate).abs() <= tol::POWER_REL * next.abs() {
            return Ok(next.max(0.0).sqrt());
        }
        estimate = next;
    }
    Err(NumericsError::NoConvergence {
        what: "spectral norm power iteration",
        iterations: tol::POWER_MAX_ITER,
    })
}

/// Solve `A X + X B = C` through the Kronecker form
/// `(I ⊗ A + Bᵀ ⊗ I) vec(X) = vec(C)` (column-major `vec`).
pub fn solve_sylvester(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    let m = a.nrows();
    let n = b.nrows();
    if a.ncols() != m || b.ncols() != n || c.shape() != (m, n) {
        return Err(NumericsError::Dimension(format!(
            "solve_sylvester: A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let system = kron(&Matrix::identity(n, n), a) + kron(&b.transpose(), &Matrix::identity(m, m));
    let rhs = Matrix::from_column_slice(m * n, 1, c.as_slice());
    let vec_x = solve_linear(&system, &rhs)?;
    Ok(Matrix::from_column_slice(m, n, vec_x.as_slice()))
}

/// Residual `P A + Aᵀ P − λ P B Bᵀ P + β I` of the weighted Riccati equation.
pub fn are_residual(p: &Matrix, a: &Matrix, b: &Matrix, lambda: f64, beta: f64) -> Matrix {
    let n = a.nrows();
    p * a + a.transpose() * p - p * b * b.transpose() * p * lambda
        + Matrix::identity(n, n) * beta
}

/// Solve `P A + Aᵀ P − λ P B Bᵀ P + β I = 0` for the stabilizing `P = Pᵀ > 0`.
///
/// Uses the determinant-scaled Newton iteration for the matrix sign of the
/// Hamiltonian `[[A, −λBBᵀ], [−βI, −Aᵀ]]`, then reads `P` off the stable
/// invariant subspace by least squares.
pub fn solve_are(a: &Matrix, b: &Matrix, lambda: f64, beta: f64) -> Result<Matrix> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(NumericsError::Dimension(format!(
            "solve_are: A {:?}, B {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(lambda > 0.0 && beta > 0.0) || !lambda.is_finite() || !beta.is_finite() {
        return Err(NumericsError::NotStabilizable {
            reason: format!("weights must be positive, got lambda={lambda}, beta={beta}"),
        });
    }
    if !is_finite(a) || !is_finite(b) {
        return Err(NumericsError::NonFinite("solve_are input"));
    }
    let g = b * b.transpose() * lambda;
    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(Matrix::identity(n, n) * -beta));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let sign = matrix_sign(&h)?;
    let eye2 = Matrix::identity(2 * n, 2 * n);
    if norm_inf(&(&sign * &sign - &eye2)) > 1e-8 * (1.0 + norm_inf(&sign)) {
        return Err(NumericsError::NoConvergence {
            what: "matrix sign iteration (involution check)",
            iterations: tol::SIGN_MAX_ITER,
        });
    }

    // (W + I) [I; P] = 0  ⇒  [W12; W22 + I] P = −[W11 + I; W21]
    let w_plus = &sign + &eye2;
    let lhs = w_plus.columns(n, n).into_owned();
    let rhs = -w_plus.columns(0, n).into_owned();
    let normal = lhs.transpose() * &lhs;
    let p = solve_linear(&normal, &(lhs.transpose() * rhs)).map_err(|e| {
        NumericsError::NotStabilizable {
            reason: format!("stable subspace extraction failed: {e}"),
        }
    })?;
    let p = (&p + p.transpose()) * 0.5;

    let residual = norm_inf(&are_residual(&p, a, b, lambda, beta));
    if !residual.is_finite() || residual > tol::ARE_RESIDUAL {
        return Err(NumericsError::NotStabilizable {
            reason: format!("residual {residual:.3e} exceeds {:.1e}", tol::ARE_RESIDUAL),
        });
    }
    let eig = symmetric_eigenvalues(&p)?;
    if eig[0] <= 0.0 {
        return Err(NumericsError::NotStabilizable {
            reason: format!("solution not positive definite (min eigenvalue {:.3e})", eig[0]),
        });
    }
    Ok(p)
}

fn matrix_sign(h: &Matrix) -> Result<Matrix> {
    let dim = h.nrows() as f64;
    let mut z = h.clone();
    for iter in 0..tol::SIGN_MAX_ITER {
        let z_inv = inverse(&z).map_err(|_| NumericsError::NoConvergence {
            what: "matrix sign iteration (singular iterate)",
            iterations: iter,
        })?;
        // determinant scaling only during the early, far-from-converged phase
        let scale = if iter < 8 {
            let det = z.determinant().abs();
            if det.is_finite() && det > 0.0 {
                det.powf(-1.0 / dim)
            } else {
                1.0
            }
        } else {
            1.0
        };
        let next = (&z * scale + z_inv / scale) * 0.5;
        let change = norm_inf(&(&next - &z));
        z = next;
        if !is_finite(&z) {
            return Err(NumericsError::NoConvergence {
                what: "matrix sign iteration (non-finite iterate)",
                iterations: iter + 1,
            });
        }
        if change <= tol::SIGN_REL * norm_inf(&z) {
            return Ok(z);
        }
    }
    Err(NumericsError::NoConvergence {
        what: "matrix sign iteration",
        iterations: tol::SIGN_MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    #[test]
    fn solve_linear_examples() {
        let x = solve_linear(&Matrix::identity(3, 3), &m(3, 1, &[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x, m(3, 1, &[1.0, 2.0, 3.0]));
        let x = solve_linear(&m(2, 2, &[2.0, 0.0, 0.0, 4.0]), &m(2, 1, &[2.0, 8.0])).unwrap();
        assert_eq!(x, m(2, 1, &[1.0, 2.0]));
        let x = solve_linear(&m(2, 2, &[1.0, 1.0, 1.0, -1.0]), &m(2, 1, &[3.0, 1.0])).unwrap();
        assert_abs_diff_eq!(x, m(2, 1, &[2.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn solve_linear_singular() {
        let err = solve_linear(&m(2, 2, &[1.0, 2.0, 2.0, 4.0]), &m(2, 1, &[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, NumericsError::SingularMatrix { .. }));
    }

    #[test]
    fn jacobi_examples() {
        let eig = symmetric_eigenvalues(&Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0, 2.0])))
            .unwrap();
        assert_eq!(eig, vec![1.0, 2.0, 3.0]);
        let eig = symmetric_eigenvalues(&m(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(eig[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig[1], 1.0, epsilon = 1e-12);
        // symmetrized cycle Laplacian, circulant eigenvalues (2 − 2cos(2πk/4))/4
        let l = m(
            4,
            4,
            &[
                1.0, 0.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0,
            ],
        );
        let eig = symmetric_eigenvalues(&((&l + l.transpose()) / 4.0)).unwrap();
        for (got, want) in eig.iter().zip([0.0, 0.5, 0.5, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobi_rejects_asymmetric() {
        let err = symmetric_eigenvalues(&m(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, NumericsError::NotSymmetric { .. }));
    }

    #[test]
    fn spectral_norm_examples() {
        assert_abs_diff_eq!(spectral_norm(&Matrix::identity(2, 2)).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            spectral_norm(&m(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let want = (1.12f64.powi(2) + 25.0).sqrt();
        assert_abs_diff_eq!(
            spectral_norm(&m(2, 2, &[0.0, 0.0, -1.12, 5.0])).unwrap(),
            want,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(want, 5.1239, epsilon = 1e-4);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
    }

    #[test]
    fn sylvester_examples() {
        let a = m(2, 2, &[-1.0, 0.0, 0.0, -2.0]);
        let x = solve_sylvester(&a, &Matrix::zeros(2, 2), &m(2, 2, &[-1.0, 0.0, 0.0, -2.0])).unwrap();
        assert_abs_diff_eq!(x, Matrix::identity(2, 2), epsilon = 1e-14);

        // M T + N Ψ = T Φ  ⇔  M T + T (−Φ) = −N Ψ
        let n = m(2, 1, &[1.0, 2.0]);
        let psi = m(1, 2, &[1.0, 0.0]);
        let phi = m(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let t = solve_sylvester(&a, &(-&phi), &(-(&n * &psi))).unwrap();
        assert_abs_diff_eq!(t, m(2, 2, &[0.5, 0.5, 0.8, 0.4]), epsilon = 1e-12);
        assert_abs_diff_eq!(t.determinant(), -0.2, epsilon = 1e-12);
    }

    #[test]
    fn sylvester_singular_when_spectra_meet() {
        let a = m(1, 1, &[1.0]);
        let b = m(1, 1, &[-1.0]);
        let err = solve_sylvester(&a, &b, &m(1, 1, &[1.0])).unwrap_err();
        assert!(matches!(err, NumericsError::SingularMatrix { .. }));
    }

    #[test]
    fn are_scalar() {
        let p = solve_are(&m(1, 1, &[0.0]), &m(1, 1, &[1.0]), 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn are_harmonic_oscillator() {
        let a = m(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        let p = solve_are(&a, &b, 0.19, 2.5).unwrap();
        assert_abs_diff_eq!(p, m(2, 2, &[6.07, -1.12, -1.12, 5.00]), epsilon = 0.01);
        assert!(norm_inf(&are_residual(&p, &a, &b, 0.19, 2.5)) <= tol::ARE_RESIDUAL);
        let k = b.transpose() * &p;
        assert_abs_diff_eq!(k, m(1, 2, &[-1.12, 5.00]), epsilon = 0.01);
    }

    #[test]
    fn are_rejects_nonpositive_weights() {
        let a = m(1, 1, &[0.0]);
        let b = m(1, 1, &[1.0]);
        assert!(solve_are(&a, &b, 0.0, 1.0).is_err());
        assert!(solve_are(&a, &b, 1.0, -1.0).is_err());
    }

    #[test]
    fn are_unstabilizable_pair_fails() {
        // unstable mode the input cannot reach
        let a = m(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let b = m(2, 1, &[0.0, 1.0]);
        assert!(solve_are(&a, &b, 1.0, 1.0).is_err());
    }

    #[test]
    fn kron_shape_and_values() {
        let a = m(1, 2, &[1.0, 2.0]);
        let b = m(2, 1, &[3.0, 4.0]);
        assert_eq!(kron(&a, &b), m(2, 2, &[3.0, 6.0, 4.0, 8.0]));
    }
}
