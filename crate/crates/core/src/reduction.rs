//! Reduction to the complement of the all-ones vector: the explicit basis
//! `T`, the reduced Hessian `M = J T^T L H L T J^T` and the metric
//! `eps = max(|1 - mu_1(M_delta)|, |1 - mu_{n-1}(M_Delta)|)`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::graph::WeightedLaplacian;
use crate::linalg::{eig_sym, SymMatrix};

/// The `n x n` matrix `T`. Its first `n - 1` columns span the complement of
/// `1`; the last column is `1 / sqrt(n)`.
#[derive(Debug, Clone)]
pub struct ProjectorT {
    n: usize,
    t: DMatrix<f64>,
}

impl ProjectorT {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// `T J^T`: the first `n - 1` columns.
    pub fn basis(&self) -> DMatrix<f64> {
        self.t.columns(0, self.n - 1).into_owned()
    }
}

fn construct_t(n: usize) -> ProjectorT {
    let nf = n as f64;
    let s = nf.sqrt();
    let rho = 1.0 / (nf * (nf + 1.0 + 2.0 * s)).sqrt();
    let t = DMatrix::from_fn(n, n, |i, j| {
        if j == n - 1 {
            1.0 / s
        } else if i == n - 1 {
            (-1.0 - s) * rho
        } else if i == j {
            (nf - 1.0 + s) * rho
        } else {
            -rho
        }
    });
    ProjectorT { n, t }
}

/// Cached construction of `T` for dimension `n >= 2`.
pub fn build_t(n: usize) -> Result<Arc<ProjectorT>> {
    if n < 2 {
        return invalid(format!("T needs n >= 2, got {n}"));
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ProjectorT>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("T cache poisoned");
    Ok(guard.entry(n).or_insert_with(|| Arc::new(construct_t(n))).clone())
}

/// `W^T L diag(h) L W` with `W = T J^T`.
pub fn reduced_hessian(l: &WeightedLaplacian, h: &[f64]) -> Result<SymMatrix> {
    let n = l.n();
    if h.len() != n {
        return invalid(format!("{} curvatures for {n} agents", h.len()));
    }
    let w = build_t(n)?.basis();
    let lw = l.matrix().matrix() * &w;
    let mut hlw = lw.clone();
    for (i, mut row) in hlw.row_iter_mut().enumerate() {
        row *= h[i];
    }
    let m = lw.transpose() * hlw;
    SymMatrix::new(m)
}

/// Value of the metric together with its two witnesses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonMetric {
    pub value: f64,
    /// Smallest eigenvalue of `M` at the lower curvature bounds.
    pub mu_min: f64,
    /// Largest eigenvalue of `M` at the upper curvature bounds.
    pub mu_max: f64,
}

impl EpsilonMetric {
    pub fn from_extremes(mu_min: f64, mu_max: f64) -> Self {
        EpsilonMetric {
            value: (1.0 - mu_min).abs().max((1.0 - mu_max).abs()),
            mu_min,
            mu_max,
        }
    }

    /// Whether the Neumann series converges for every admissible Hessian.
    pub fn admissible(&self) -> bool {
        self.value < 1.0
    }
}

/// Evaluates the metric at the two curvature bound matrices.
pub fn epsilon_of(l: &WeightedLaplacian, delta: &[f64], big_delta: &[f64]) -> Result<EpsilonMetric> {
    if delta.iter().zip(big_delta).any(|(a, b)| a > b) {
        return invalid("lower curvature bound exceeds the upper bound");
    }
    let lo = eig_sym(&reduced_hessian(l, delta)?)?;
    let hi = eig_sym(&reduced_hessian(l, big_delta)?)?;
    Ok(EpsilonMetric::from_extremes(lo.min(), hi.max()))
}
