//! Dense symmetric linear algebra: Jacobi eigendecomposition, projection
//! onto the PSD cone and truncated Neumann-series inverses.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

/// Numeric tolerances used by the kernels in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    /// Relative off-diagonal norm at which Jacobi sweeps stop.
    pub jacobi_tol: f64,
    /// Hard cap on Jacobi sweeps.
    pub max_sweeps: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            jacobi_tol: 1e-15,
            max_sweeps: 60,
        }
    }
}

/// Square symmetric matrix. Construction averages the input with its
/// transpose, so the stored entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return invalid(format!("matrix is {}x{}, expected square", m.nrows(), m.ncols()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(SymMatrix(sym))
    }

    /// Wraps a matrix the caller already knows to be symmetric.
    pub(crate) fn from_symmetric(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        SymMatrix(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return invalid("ragged or non-square row data");
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    pub fn frobenius(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors
/// stored as columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// Returns `W diag(f(mu)) W^T`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let w = &self.eigenvectors;
        let mut scaled = w.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[k]);
        }
        let m = &scaled * w.transpose();
        SymMatrix(((&m + m.transpose()) * 0.5).into_owned())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map(|mu| mu)
    }
}

/// Symmetric eigendecomposition with default settings.
pub fn eig_sym(a: &SymMatrix) -> Result<SpectralDecomposition> {
    eig_sym_with(a, &Settings::default())
}

/// Cyclic Jacobi eigendecomposition.
pub fn eig_sym_with(a: &SymMatrix, settings: &Settings) -> Result<SpectralDecomposition> {
    let n = a.dim();
    if n == 0 {
        return invalid("empty matrix");
    }
    if a.0.iter().any(|v| !v.is_finite()) {
        return invalid("matrix has non-finite entries");
    }
    // Row-major working copy.
    let mut m: Vec<f64> = (0..n * n).map(|k| a.0[(k / n, k % n)]).collect();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale = a.frobenius().max(f64::MIN_POSITIVE);

    for _ in 0..settings.max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off.sqrt() <= settings.jacobi_tol * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&k| m[k * n + k]));
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Frobenius-nearest positive semidefinite matrix.
pub fn psd_project(a: &SymMatrix) -> Result<SymMatrix> {
    Ok(eig_sym(a)?.map(|mu| mu.max(0.0)))
}

/// Truncated series `sum_{p=0}^{q} (I - M)^p`, evaluated as `S <- I + (I - M) S`.
pub fn neumann_inverse(m: &SymMatrix, q: usize) -> SymMatrix {
    let n = m.dim();
    let eye = DMatrix::<f64>::identity(n, n);
    let r = &eye - &m.0;
    let mut s = eye.clone();
    for _ in 0..q {
        s = &eye + &r * &s;
    }
    SymMatrix((&s + s.transpose()) * 0.5)
}

/// Smallest eigenvalue, used for a-posteriori feasibility checks.
pub fn min_eig(a: &SymMatrix) -> Result<f64> {
    Ok(eig_sym(a)?.min())
}
