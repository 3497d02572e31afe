//! Directed communication topology and the spectral quantities the consensus
//! design needs: Laplacian `L`, positive left null vector `r`, and the
//! second-smallest eigenvalue of the symmetrized `L̂ = RL + LᵀR`.

use crate::numerics::{self, Matrix, NumericsError, Vector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("weight table must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("self-loop weight a[{0}][{0}] = {1} must be zero")]
    SelfLoop(usize, f64),
    #[error("weight a[{i}][{j}] = {value} must be finite and nonnegative")]
    BadWeight { i: usize, j: usize, value: f64 },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("spectral gap violation: lambda2(L_hat) = {lambda2:.3e}")]
    SpectralGapViolation { lambda2: f64 },
    #[error("smallest eigenvalue of L_hat is {0:.3e}, expected 0")]
    NonzeroNullEigenvalue(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Weighted directed graph; `weight(i, j) = a_ij` is the weight of edge `j → i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    weights: Matrix,
}

impl DirectedGraph {
    pub fn new(weights: Matrix) -> Result<Self, GraphError> {
        let (rows, cols) = weights.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        if rows < 2 {
            return Err(GraphError::TooFewAgents(rows));
        }
        for i in 0..rows {
            for j in 0..cols {
                let value = weights[(i, j)];
                if i == j && value != 0.0 {
                    return Err(GraphError::SelfLoop(i, value));
                }
                if !value.is_finite() || value < 0.0 {
                    return Err(GraphError::BadWeight { i, j, value });
                }
            }
        }
        Ok(Self { weights })
    }

    /// Build from nested rows, `rows[i][j] = a_ij`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(GraphError::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Matrix::from_row_slice(n, n, &flat))
    }

    pub fn agent_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// In-neighbors `N_i = { j : a_ij > 0 }`.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.agent_count()).filter(move |&j| self.weights[(i, j)] > 0.0)
    }

    /// Out-neighbors `M_i = { j : a_ji > 0 }`, the receivers of `i`'s broadcasts.
    pub fn out_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.agent_count()).filter(move |&j| self.weights[(j, i)] > 0.0)
    }

    /// Sum of incoming weights `Σ_j a_ij`.
    pub fn in_degree(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, GraphError> {
        Self::new(&self.weights * factor)
    }
}

/// Directed Laplacian: `l_ii = Σ_j a_ij`, `l_ij = −a_ij`.
pub fn laplacian(g: &DirectedGraph) -> Matrix {
    let n = g.agent_count();
    let mut l = -g.weights().clone();
    for i in 0..n {
        // diagonal as the negated sum of the row, so rows sum to zero
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| l[(i, j)]).sum();
        l[(i, i)] = -off;
    }
    l
}

/// True iff every node reaches every other node along directed edges.
pub fn is_strongly_connected(g: &DirectedGraph) -> bool {
    let n = g.agent_count();
    // forward: edges j → i exist when a_ij > 0
    let reach = |forward: bool| -> bool {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(node) = stack.pop() {
            for next in 0..n {
                let edge = if forward {
                    g.weight(next, node) > 0.0
                } else {
                    g.weight(node, next) > 0.0
                };
                if edge && !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Positive left null vector `r` of `L` (`Lᵀr = 0`, `rᵀ1 = 1`).
///
/// Solved as a bordered system: the last (redundant) row of `Lᵀ` is replaced
/// by the normalization row.
pub fn left_eigenvector(l: &Matrix) -> Result<Vector, GraphError> {
    let n = l.nrows();
    let mut system = l.transpose();
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = Matrix::zeros(n, 1);
    rhs[(n - 1, 0)] = 1.0;
    let r = match numerics::solve_linear(&system, &rhs) {
        Ok(r) => r,
        Err(NumericsError::SingularMatrix { .. }) => return Err(GraphError::NotStronglyConnected),
        Err(e) => return Err(e.into()),
    };
    let mut r: Vector = r.column(0).into_owned();
    let total = r.sum();
    r /= total;
    if r.iter().any(|&x| x <= 1e-12) {
        return Err(GraphError::NotStronglyConnected);
    }
    Ok(r)
}

/// `L̂ = R L + Lᵀ R` with `R = diag(r)`.
pub fn symmetrized_laplacian(l: &Matrix, r: &Vector) -> Matrix {
    let rm = Matrix::from_diagonal(r);
    &rm * l + l.transpose() * &rm
}

/// Second-smallest eigenvalue of `L̂`.
pub fn lambda2_hat(l: &Matrix, r: &Vector) -> Result<f64, GraphError> {
    let l_hat = symmetrized_laplacian(l, r);
    let eig = numerics::symmetric_eigenvalues(&l_hat)?;
    let scale = numerics::norm_inf(&l_hat).max(1.0);
    if eig[0].abs() > 1e-8 * scale {
        return Err(GraphError::NonzeroNullEigenvalue(eig[0]));
    }
    if eig[1] <= 1e-10 {
        return Err(GraphError::SpectralGapViolation { lambda2: eig[1] });
    }
    Ok(eig[1])
}

/// Spectral data derived once from a strongly connected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpectra {
    pub laplacian: Matrix,
    pub r: Vector,
    pub r_diag: Matrix,
    pub l_hat: Matrix,
    pub lambda2_hat: f64,
}

impl GraphSpectra {
    pub fn compute(g: &DirectedGraph) -> Result<Self, GraphError> {
        if !is_strongly_connected(g) {
            return Err(GraphError::NotStronglyConnected);
        }
        let laplacian = laplacian(g);
        let r = left_eigenvector(&laplacian)?;
        let lambda2_hat = lambda2_hat(&laplacian, &r)?;
        Ok(Self {
            l_hat: symmetrized_laplacian(&laplacian, &r),
            r_diag: Matrix::from_diagonal(&r),
            laplacian,
            r,
            lambda2_hat,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.r.len()
    }

    /// The strict upper bound `λ₂(L̂)/N` on the Riccati weight λ.
    pub fn lambda_bound(&self) -> f64 {
        self.lambda2_hat / self.agent_count() as f64
    }
}
