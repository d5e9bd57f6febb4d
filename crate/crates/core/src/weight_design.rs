//! Laplacian edge-weight design: the convex surrogate of the bilinear
//! design problem, spectral post-scaling and the best-case lower bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{assemble_laplacian, khop_neighbors, GraphTopology, WeightedLaplacian};
use crate::linalg::{eig_sym, SymMatrix};
use crate::reduction::{build_t, epsilon_of, reduced_hessian, EpsilonMetric};
use crate::sdp::{Block, DiagBlock, IpmSettings, IpmStatus, PsdBlock, SdpProblem, SdpSolution, SlackValue};

/// Feasibility tolerance for a-posteriori LMI checks.
pub const LMI_TOL: f64 = 1e-7;

/// Solver report attached to every design.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    /// Smallest eigenvalue over all constraint blocks at the returned point.
    pub min_block_eig: f64,
}

impl SolverDiagnostics {
    fn from_solution(sol: &SdpSolution, min_block_eig: f64) -> Self {
        SolverDiagnostics {
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
            min_block_eig,
        }
    }
}

/// Optimal point of the convex design surrogate.
#[derive(Debug, Clone)]
pub struct P4Solution {
    pub weights: Vec<f64>,
    pub eps_minus: f64,
    pub eps_plus: f64,
    pub diagnostics: SolverDiagnostics,
}

fn check_bounds(g: &GraphTopology, delta: &[f64], big_delta: &[f64]) -> Result<()> {
    let n = g.n();
    if n < 2 {
        return invalid("weight design needs at least two agents");
    }
    if delta.len() != n || big_delta.len() != n {
        return invalid("curvature bounds have the wrong length");
    }
    if delta.iter().zip(big_delta).any(|(&d, &b)| !(d > 0.0) || !(d <= b) || !b.is_finite()) {
        return invalid("curvature bounds must satisfy 0 < delta <= Delta");
    }
    Ok(())
}

fn min_slack_eig(prob: &SdpProblem, y: &[f64]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for s in prob.slack(y) {
        let m = match s {
            SlackValue::Psd(m) => eig_sym(&SymMatrix::new(m)?)?.min(),
            SlackValue::Diag(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        };
        worst = worst.min(m);
    }
    Ok(worst)
}

fn edge_vectors(g: &GraphTopology, w: &DMatrix<f64>, scale: Option<&[f64]>) -> Vec<DVector<f64>> {
    let n = g.n();
    g.edges()
        .iter()
        .map(|&(i, j)| {
            let mut d = DVector::zeros(n);
            let (si, sj) = scale.map_or((1.0, 1.0), |s| (s[i], s[j]));
            d[i] = si;
            d[j] = -sj;
            w.transpose() * d
        })
        .collect()
}

fn pad(v: &DVector<f64>, dim: usize, offset: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    out.rows_mut(offset, v.len()).copy_from(v);
    out
}

/// Minimizes `max(eps_-, eps_+)` over nonnegative edge weights subject to
/// the two linear matrix inequalities of the convex surrogate.
///
/// The two deviations are separate variables bounded by a common `t`.
pub fn solve_p4(g: &GraphTopology, delta: &[f64], big_delta: &[f64]) -> Result<P4Solution> {
    check_bounds(g, delta, big_delta)?;
    let n = g.n();
    let m = g.m();
    let r = n - 1;
    let w = build_t(n)?.basis();
    let (em, ep, tv) = (m, m + 1, m + 2);
    let nv = m + 3;
    let mut c = vec![0.0; nv];
    c[tv] = 1.0;

    // [(eps_- + 1) I, W^T L; L W, H_delta^{-1}] ⪰ 0
    let dim1 = r + n;
    let mut b1 = PsdBlock::new(dim1, nv);
    let mut c1 = DMatrix::zeros(dim1, dim1);
    for k in 0..r {
        c1[(k, k)] = 1.0;
    }
    for i in 0..n {
        c1[(r + i, r + i)] = 1.0 / delta[i];
    }
    b1.set_constant(c1);
    let mut e1 = DMatrix::zeros(dim1, dim1);
    for k in 0..r {
        e1[(k, k)] = 1.0;
    }
    b1.add_dense(em, e1);
    let us = edge_vectors(g, &w, None);
    for (e, &(i, j)) in g.edges().iter().enumerate() {
        let p = b1.push_vector(pad(&us[e], dim1, 0));
        let mut q = DVector::zeros(dim1);
        q[r + i] = 1.0;
        q[r + j] = -1.0;
        let q = b1.push_vector(q);
        b1.add_low_rank(e, 1.0, p, q);
    }

    // [S - (1 - eps_+/2) I, eps_+/sqrt(8) I; eps_+/sqrt(8) I, I] ⪰ 0 with
    // S = W^T (sqrt(H_Delta) L + L sqrt(H_Delta)) W / 2.
    let dim2 = 2 * r;
    let mut b2 = PsdBlock::new(dim2, nv);
    let mut c2 = DMatrix::zeros(dim2, dim2);
    for k in 0..r {
        c2[(k, k)] = -1.0;
        c2[(r + k, r + k)] = 1.0;
    }
    b2.set_constant(c2);
    let mut e2 = DMatrix::zeros(dim2, dim2);
    let off = 1.0 / 8f64.sqrt();
    for k in 0..r {
        e2[(k, k)] = 0.5;
        e2[(k, r + k)] = off;
        e2[(r + k, k)] = off;
    }
    b2.add_dense(ep, e2);
    let sq: Vec<f64> = big_delta.iter().map(|v| v.sqrt()).collect();
    let avs = edge_vectors(g, &w, Some(&sq));
    for e in 0..m {
        let a = b2.push_vector(pad(&avs[e], dim2, 0));
        let u = b2.push_vector(pad(&us[e], dim2, 0));
        b2.add_low_rank(e, 0.5, a, u);
    }

    // x >= 0, eps_- >= 0, eps_+ >= 0, t >= eps_-, t >= eps_+.
    let mut lp = DiagBlock::new(m + 4, nv);
    for e in 0..m {
        lp.add(e, e, 1.0);
    }
    lp.add(em, m, 1.0);
    lp.add(ep, m + 1, 1.0);
    lp.add(tv, m + 2, 1.0);
    lp.add(em, m + 2, -1.0);
    lp.add(tv, m + 3, 1.0);
    lp.add(ep, m + 3, -1.0);

    let prob = SdpProblem {
        c,
        blocks: vec![Block::Psd(b1), Block::Psd(b2), Block::Diag(lp)],
    };
    let sol = prob.solve(&IpmSettings::default());
    let min_eig = min_slack_eig(&prob, &sol.y)?;
    if sol.status != IpmStatus::Optimal && min_eig < -LMI_TOL {
        return Err(Error::NoFeasiblePoint(format!(
            "design solver stopped with {:?} (min block eigenvalue {min_eig:.3e})",
            sol.status
        )));
    }
    let wmax = sol.y[..m].iter().copied().fold(0.0, f64::max);
    if !(wmax > 0.0) {
        return Err(Error::NoFeasiblePoint("all designed weights vanished".into()));
    }
    // Interior-point weights are positive up to the solver residual; keep
    // every edge strictly positive so the Laplacian keeps the graph pattern.
    let floor = wmax * 1e-14;
    let weights = sol.y[..m].iter().map(|&v| v.max(floor)).collect();
    Ok(P4Solution {
        weights,
        eps_minus: sol.y[em],
        eps_plus: sol.y[ep],
        diagnostics: SolverDiagnostics::from_solution(&sol, min_eig),
    })
}

/// Designed Laplacian with its guarantee.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub l_star: WeightedLaplacian,
    /// Metric of the scaled Laplacian.
    pub eps: EpsilonMetric,
    pub beta: f64,
    /// Metric before scaling.
    pub eps_pre: EpsilonMetric,
    pub p4: Option<P4Solution>,
}

/// Rescales `L0` so that the extreme eigenvalues of the reduced Hessian are
/// symmetric about one.
pub fn post_scale(l0: &WeightedLaplacian, delta: &[f64], big_delta: &[f64]) -> Result<DesignResult> {
    let eps_pre = epsilon_of(l0, delta, big_delta)?;
    let s = eps_pre.mu_min + eps_pre.mu_max;
    if !(s > 0.0) || !s.is_finite() {
        return invalid("Laplacian has a vanishing reduced Hessian");
    }
    let beta = (2.0 / s).sqrt();
    let mut l_star = l0.scaled(beta)?;
    let mu_min = beta * beta * eps_pre.mu_min;
    let mu_max = beta * beta * eps_pre.mu_max;
    let eps = EpsilonMetric::from_extremes(mu_min, mu_max);
    l_star.meta.epsilon = Some(eps.value);
    l_star.meta.beta = Some(beta);
    Ok(DesignResult {
        l_star,
        eps,
        beta,
        eps_pre,
        p4: None,
    })
}

/// Which curvature bounds the design sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    /// Per-agent bounds.
    Local,
    /// Only the network-wide extremes `min delta_i` and `max Delta_i`.
    Global,
}

/// Bound vectors used by a design in the given mode.
pub fn design_bounds(delta: &[f64], big_delta: &[f64], mode: BoundsMode) -> (Vec<f64>, Vec<f64>) {
    match mode {
        BoundsMode::Local => (delta.to_vec(), big_delta.to_vec()),
        BoundsMode::Global => {
            let lo = delta.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = big_delta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (vec![lo; delta.len()], vec![hi; big_delta.len()])
        }
    }
}

/// Full pipeline: convex surrogate followed by post-scaling. The returned
/// metric is measured against the bounds the mode exposes.
pub fn design(g: &GraphTopology, delta: &[f64], big_delta: &[f64], mode: BoundsMode) -> Result<DesignResult> {
    let (lo, hi) = design_bounds(delta, big_delta, mode);
    let p4 = solve_p4(g, &lo, &hi)?;
    let l0 = assemble_laplacian(g, &p4.weights)?;
    let mut res = post_scale(&l0, &lo, &hi)?;
    if !res.eps.admissible() {
        return Err(Error::AssumptionViolated(format!(
            "post-scaled design has eps = {}",
            res.eps.value
        )));
    }
    res.l_star.meta.provenance = Some(match mode {
        BoundsMode::Local => "design/local".into(),
        BoundsMode::Global => "design/global".into(),
    });
    res.p4 = Some(p4);
    Ok(res)
}

/// Support allowed for the matrix in the lower-bound problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerBoundSupport {
    /// Entries on graph edges (the pattern of a Laplacian).
    OneHop,
    /// Entries between agents at most two hops apart (the pattern of `L H L`).
    TwoHop,
}

/// Best-case metric over symmetric matrices with zero row sums and the
/// chosen support.
#[derive(Debug, Clone)]
pub struct LowerBoundResult {
    pub eps_a: f64,
    pub a_star: SymMatrix,
    pub pairs: Vec<(usize, usize)>,
    pub diagnostics: SolverDiagnostics,
}

fn support_pairs(g: &GraphTopology, support: LowerBoundSupport) -> Vec<(usize, usize)> {
    match support {
        LowerBoundSupport::OneHop => g.edges().to_vec(),
        LowerBoundSupport::TwoHop => (0..g.n())
            .flat_map(|i| {
                khop_neighbors(g, i, 2)
                    .into_iter()
                    .filter(move |&j| j > i)
                    .map(move |j| (i, j))
            })
            .collect(),
    }
}

/// Minimizes `eps` subject to `(1 - eps) I ⪯ W^T A W ⪯ (1 + eps) I`,
/// `A 1 = 0`, `A ⪰ 0` and the support pattern. `A` is parameterized as
/// `sum_p a_p (e_i - e_j)(e_i - e_j)^T` over allowed pairs with free-sign
/// coefficients, which spans exactly the symmetric zero-row-sum matrices on
/// that support.
pub fn solve_p5(g: &GraphTopology, support: LowerBoundSupport) -> Result<LowerBoundResult> {
    let n = g.n();
    if n < 2 {
        return invalid("lower bound needs at least two agents");
    }
    let r = n - 1;
    let w = build_t(n)?.basis();
    let pairs = support_pairs(g, support);
    let np = pairs.len();
    let ev = np;
    let nv = np + 1;
    let mut c = vec![0.0; nv];
    c[ev] = 1.0;
    let eye = DMatrix::<f64>::identity(r, r);
    let mut lower = PsdBlock::new(r, nv);
    let mut upper = PsdBlock::new(r, nv);
    let mut psd = PsdBlock::new(r, nv);
    lower.set_constant(-eye.clone());
    lower.add_dense(ev, eye.clone());
    upper.set_constant(eye.clone());
    upper.add_dense(ev, eye.clone());
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let u = DVector::from_iterator(r, (0..r).map(|k| w[(i, k)] - w[(j, k)]));
        let a = lower.push_vector(u.clone());
        lower.add_low_rank(p, 0.5, a, a);
        let b = upper.push_vector(u.clone());
        upper.add_low_rank(p, -0.5, b, b);
        let s = psd.push_vector(u);
        psd.add_low_rank(p, 0.5, s, s);
    }
    let prob = SdpProblem {
        c,
        blocks: vec![Block::Psd(lower), Block::Psd(upper), Block::Psd(psd)],
    };
    let sol = prob.solve(&IpmSettings::default());
    let min_eig = min_slack_eig(&prob, &sol.y)?;
    if sol.status != IpmStatus::Optimal && min_eig < -LMI_TOL {
        return Err(Error::NoFeasiblePoint(format!(
            "lower-bound solver stopped with {:?} (min block eigenvalue {min_eig:.3e})",
            sol.status
        )));
    }
    let mut a = DMatrix::zeros(n, n);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let v = sol.y[p];
        a[(i, i)] += v;
        a[(j, j)] += v;
        a[(i, j)] -= v;
        a[(j, i)] -= v;
    }
    Ok(LowerBoundResult {
        eps_a: sol.y[ev],
        a_star: SymMatrix::new(a)?,
        pairs,
        diagnostics: SolverDiagnostics::from_solution(&sol, min_eig),
    })
}

/// Reduced matrix `W^T A W` for an arbitrary symmetric `A`.
pub fn reduced_matrix(a: &SymMatrix) -> Result<SymMatrix> {
    let w = build_t(a.dim())?.basis();
    SymMatrix::new(w.transpose() * a.matrix() * &w)
}

/// Evaluates the surrogate LMIs at given weights and deviations; returns the
/// smallest eigenvalue of each block.
pub fn p4_block_eigs(
    g: &GraphTopology,
    weights: &[f64],
    delta: &[f64],
    big_delta: &[f64],
    eps_minus: f64,
    eps_plus: f64,
) -> Result<(f64, f64)> {
    let n = g.n();
    let r = n - 1;
    let l = assemble_laplacian(g, weights)?;
    let w = build_t(n)?.basis();
    let lm = l.matrix().matrix();
    let mut b1 = DMatrix::zeros(r + n, r + n);
    let wl = w.transpose() * lm;
    for k in 0..r {
        b1[(k, k)] = 1.0 + eps_minus;
    }
    for i in 0..n {
        b1[(r + i, r + i)] = 1.0 / delta[i];
    }
    b1.view_mut((0, r), (r, n)).copy_from(&wl);
    b1.view_mut((r, 0), (n, r)).copy_from(&wl.transpose());
    let sq = DMatrix::from_diagonal(&DVector::from_iterator(n, big_delta.iter().map(|v| v.sqrt())));
    let s = (w.transpose() * (&sq * lm + lm * &sq) * &w) * 0.5;
    let mut b2 = DMatrix::zeros(2 * r, 2 * r);
    b2.view_mut((0, 0), (r, r)).copy_from(&(s - DMatrix::identity(r, r) * (1.0 - 0.5 * eps_plus)));
    for k in 0..r {
        b2[(k, r + k)] = eps_plus / 8f64.sqrt();
        b2[(r + k, k)] = eps_plus / 8f64.sqrt();
        b2[(r + k, r + k)] = 1.0;
    }
    Ok((
        eig_sym(&SymMatrix::new(b1)?)?.min(),
        eig_sym(&SymMatrix::new(b2)?)?.min(),
    ))
}

/// Metric of a matrix `M` given directly (used for the lower bound).
pub fn metric_of_reduced(m: &SymMatrix) -> Result<EpsilonMetric> {
    let sd = eig_sym(m)?;
    Ok(EpsilonMetric::from_extremes(sd.min(), sd.max()))
}

/// Convenience: reduced Hessian spectrum extremes of a Laplacian at a single
/// curvature vector.
pub fn hessian_extremes(l: &WeightedLaplacian, h: &[f64]) -> Result<(f64, f64)> {
    let sd = eig_sym(&reduced_hessian(l, h)?)?;
    Ok((sd.min(), sd.max()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_connected, unweighted_laplacian};

    #[test]
    fn two_node_design_is_exact() {
        // K_2 with unit curvature: M = 4 w^2 after projection, so a single
        // weight reaches M = 1 and the optimum is zero.
        let g = GraphTopology::new(2, &[(0, 1)]).unwrap();
        let sweep = (1..2000)
            .map(|k| {
                let w = k as f64 * 1e-3;
                let l = assemble_laplacian(&g, &[w]).unwrap();
                epsilon_of(&l, &[1.0, 1.0], &[1.0, 1.0]).unwrap().value
            })
            .fold(f64::INFINITY, f64::min);
        let p4 = solve_p4(&g, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!(p4.eps_minus.max(p4.eps_plus) <= 1e-2);
        assert!(sweep <= 1e-2);
        let d = design(&g, &[1.0, 1.0], &[1.0, 1.0], BoundsMode::Local).unwrap();
        assert!(d.eps.value < 1e-6);
    }

    #[test]
    fn surrogate_lmis_hold_at_solution() {
        let g = random_connected(8, 14, 3).unwrap();
        let delta: Vec<f64> = (0..8).map(|i| 0.8 + 0.05 * i as f64).collect();
        let big: Vec<f64> = delta.iter().map(|d| d + 0.3).collect();
        let p4 = solve_p4(&g, &delta, &big).unwrap();
        let (m1, m2) = p4_block_eigs(&g, &p4.weights, &delta, &big, p4.eps_minus, p4.eps_plus).unwrap();
        assert!(m1 >= -LMI_TOL && m2 >= -LMI_TOL, "{m1} {m2}");
        assert!(p4.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn uniform_scaling_collapses_spectrum() {
        // Vertex-transitive graph with uniform curvature: unit weights already
        // give M = c I on K_n, so post-scaling reaches eps = 0.
        let l = unweighted_laplacian(&GraphTopology::complete(5));
        let r = post_scale(&l, &[2.0; 5], &[2.0; 5]).unwrap();
        assert!(r.eps.value < 1e-12);
        assert!((r.beta - 1.0 / (2.0f64 * 25.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn post_scaling_balances_and_is_scale_invariant() {
        let g = GraphTopology::complete(3);
        let l = unweighted_laplacian(&g);
        let a = post_scale(&l, &[1.0; 3], &[1.0; 3]).unwrap();
        assert!(a.eps.value < 1.0);
        let b = post_scale(&l.scaled(7.5).unwrap(), &[1.0; 3], &[1.0; 3]).unwrap();
        for (x, y) in a.l_star.weights().iter().zip(b.l_star.weights()) {
            assert!((x - y).abs() < 1e-12);
        }
        let g = random_connected(9, 15, 2).unwrap();
        let l = unweighted_laplacian(&g);
        let delta = vec![0.5; 9];
        let big = vec![2.0; 9];
        let r = post_scale(&l, &delta, &big).unwrap();
        let check = epsilon_of(&r.l_star, &delta, &big).unwrap();
        assert!(((1.0 - check.mu_min) + (1.0 - check.mu_max)).abs() < 1e-8);
    }

    #[test]
    fn homogeneous_modes_agree() {
        let g = random_connected(6, 9, 5).unwrap();
        let a = design(&g, &[1.5; 6], &[1.5; 6], BoundsMode::Local).unwrap();
        let b = design(&g, &[1.5; 6], &[1.5; 6], BoundsMode::Global).unwrap();
        assert_eq!(a.l_star.weights(), b.l_star.weights());
    }

    #[test]
    fn complete_graph_lower_bound_vanishes() {
        for support in [LowerBoundSupport::OneHop, LowerBoundSupport::TwoHop] {
            let lb = solve_p5(&GraphTopology::complete(6), support).unwrap();
            assert!(lb.eps_a <= 1e-2, "{}", lb.eps_a);
        }
    }

    #[test]
    fn lower_bound_structure() {
        let g = random_connected(9, 12, 8).unwrap();
        let lb = solve_p5(&g, LowerBoundSupport::TwoHop).unwrap();
        let ones = DVector::from_element(9, 1.0);
        assert!((lb.a_star.matrix() * ones).amax() < 1e-12);
        assert!(eig_sym(&lb.a_star).unwrap().min() >= -1e-8);
        for i in 0..9 {
            let allowed = khop_neighbors(&g, i, 2);
            for j in 0..9 {
                if i != j && !allowed.contains(&j) {
                    assert_eq!(lb.a_star.get(i, j), 0.0);
                }
            }
        }
        let m = metric_of_reduced(&reduced_matrix(&lb.a_star).unwrap()).unwrap();
        assert!((m.value - lb.eps_a).abs() < 1e-6);
        let one = solve_p5(&g, LowerBoundSupport::OneHop).unwrap();
        assert!(one.eps_a >= lb.eps_a - 1e-7);
    }
}
