//! Ground-truth optimizers and the first-order baseline.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dana_d::{drive, RunOptions, RunResult, Update};
use crate::error::{invalid, Error, Result};
use crate::graph::WeightedLaplacian;
use crate::linalg::eig_sym;
use crate::problem::DispatchProblem;

/// Enumeration is limited to `3^12` active sets.
pub const BRUTEFORCE_MAX_N: usize = 12;

/// Status of one variable at the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    Free,
    Lower,
    Upper,
}

/// Optimizer with multipliers, using the sign convention
/// `grad f(x*) - lambda_lo + lambda_hi = nu 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    /// `[lambda_lo; lambda_hi]`, length `2n`.
    pub lambda_star: Vec<f64>,
    pub nu_star: f64,
    pub active_set: Vec<Activity>,
}

impl OracleSolution {
    pub fn n(&self) -> usize {
        self.x_star.len()
    }

    pub fn f_star(&self, p: &DispatchProblem) -> f64 {
        p.f(&self.x_star)
    }

    /// Largest violation among stationarity, the demand constraint, the box
    /// limits, dual signs and complementary slackness.
    pub fn kkt_residual(&self, p: &DispatchProblem) -> f64 {
        let n = self.n();
        let (ll, lu) = self.lambda_star.split_at(n);
        let mut r = (self.x_star.iter().sum::<f64>() - p.d).abs();
        for i in 0..n {
            let stat = p.costs[i].grad(self.x_star[i]) - ll[i] + lu[i] - self.nu_star;
            r = r.max(stat.abs()).max(-ll[i]).max(-lu[i]);
            if let Some(b) = &p.boxes {
                let lo = b.lo[i] - self.x_star[i];
                let hi = self.x_star[i] - b.hi[i];
                r = r.max(lo).max(hi).max((ll[i] * lo).abs()).max((lu[i] * hi).abs());
            } else {
                r = r.max(ll[i].abs()).max(lu[i].abs());
            }
        }
        r
    }

    /// The `z` with `x0 + L z = x*` and the same mean as `z0`.
    pub fn z_star(&self, p: &DispatchProblem, l: &WeightedLaplacian, z0_mean: f64) -> Result<Vec<f64>> {
        if l.n() != self.n() || p.n() != self.n() {
            return invalid("dimension mismatch in z_star");
        }
        let sd = eig_sym(l.matrix())?;
        let cut = 1e-10 * sd.max().max(1.0);
        let pinv = sd.map(|v| if v > cut { 1.0 / v } else { 0.0 });
        let r = DVector::from_column_slice(&self.x_star) - DVector::from_column_slice(&p.x0);
        Ok((pinv.matrix() * r).iter().map(|v| v + z0_mean).collect())
    }
}

fn require_quadratic(p: &DispatchProblem) -> Result<()> {
    if !p.is_quadratic() {
        return invalid("oracle needs quadratic costs");
    }
    Ok(())
}

fn from_multiplier(p: &DispatchProblem, x: Vec<f64>, nu: f64, act: Vec<Activity>) -> OracleSolution {
    let n = x.len();
    let mut lambda = vec![0.0; 2 * n];
    for i in 0..n {
        let gap = p.costs[i].grad(x[i]) - nu;
        match act[i] {
            Activity::Lower => lambda[i] = gap,
            Activity::Upper => lambda[n + i] = -gap,
            Activity::Free => {}
        }
    }
    OracleSolution {
        x_star: x,
        lambda_star: lambda,
        nu_star: nu,
        active_set: act,
    }
}

/// Closed-form optimizer of the demand-constrained quadratic, ignoring
/// any box limits.
pub fn solve_equality_qp(p: &DispatchProblem) -> Result<OracleSolution> {
    require_quadratic(p)?;
    let inv: f64 = p.costs.iter().map(|c| 1.0 / c.a).sum();
    let bsum: f64 = p.costs.iter().map(|c| c.b / c.a).sum();
    let nu = (p.d + bsum) / inv;
    let x = p.costs.iter().map(|c| (nu - c.b) / c.a).collect();
    Ok(from_multiplier(&p.relaxed(), x, nu, vec![Activity::Free; p.n()]))
}

/// Optimizer of the demand-constrained problem for any admissible costs,
/// by bisection on the multiplier `nu` with `x_i = (f_i')^{-1}(nu)`.
pub fn solve_equality(p: &DispatchProblem) -> Result<OracleSolution> {
    if p.is_quadratic() {
        return solve_equality_qp(p);
    }
    let total = |nu: f64| p.costs.iter().map(|c| c.grad_inverse(nu)).sum::<f64>() - p.d;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while total(lo) > 0.0 {
        lo *= 2.0;
    }
    while total(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let x = p.costs.iter().map(|c| c.grad_inverse(nu)).collect();
    Ok(from_multiplier(&p.relaxed(), x, nu, vec![Activity::Free; p.n()]))
}

fn strict_interior(p: &DispatchProblem) -> Result<&crate::problem::BoxLimits> {
    let Some(b) = &p.boxes else {
        return invalid("instance has no box limits");
    };
    let lo: f64 = b.lo.iter().sum();
    let hi: f64 = b.hi.iter().sum();
    if !(lo < p.d && p.d < hi) {
        return Err(Error::InfeasibleOrDegenerate(format!(
            "demand {} is not strictly between {lo} and {hi}",
            p.d
        )));
    }
    Ok(b)
}

/// Optimizer of the box-constrained quadratic by enumerating the `3^n`
/// free/lower/upper assignments and keeping the KKT-consistent one.
pub fn solve_box_qp_bruteforce(p: &DispatchProblem) -> Result<OracleSolution> {
    require_quadratic(p)?;
    let n = p.n();
    if n > BRUTEFORCE_MAX_N {
        return invalid(format!("enumeration is limited to n <= {BRUTEFORCE_MAX_N}"));
    }
    let b = strict_interior(p)?;
    let scale = 1.0 + p.d.abs() + b.hi.iter().chain(&b.lo).fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mut act = vec![Activity::Free; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for a in act.iter_mut() {
            *a = [Activity::Free, Activity::Lower, Activity::Upper][c % 3];
            c /= 3;
        }
        if let Some(sol) = candidate(p, b, &act, tol) {
            return Ok(sol);
        }
    }
    Err(Error::InfeasibleOrDegenerate("no active set satisfies the KKT conditions".into()))
}

fn candidate(p: &DispatchProblem, b: &crate::problem::BoxLimits, act: &[Activity], tol: f64) -> Option<OracleSolution> {
    let n = act.len();
    let mut x = vec![0.0; n];
    let mut fixed = 0.0;
    let (mut inv, mut bsum) = (0.0, 0.0);
    for i in 0..n {
        match act[i] {
            Activity::Lower => {
                x[i] = b.lo[i];
                fixed += x[i];
            }
            Activity::Upper => {
                x[i] = b.hi[i];
                fixed += x[i];
            }
            Activity::Free => {
                inv += 1.0 / p.costs[i].a;
                bsum += p.costs[i].b / p.costs[i].a;
            }
        }
    }
    let nu = if inv > 0.0 {
        (p.d - fixed + bsum) / inv
    } else {
        if (fixed - p.d).abs() > tol {
            return None;
        }
        // Any nu between the largest upper-bound slope and the smallest
        // lower-bound slope works; take the midpoint.
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..n {
            let g = p.costs[i].grad(x[i]);
            match act[i] {
                Activity::Lower => hi = hi.min(g),
                _ => lo = lo.max(g),
            }
        }
        if lo > hi {
            return None;
        }
        if lo.is_finite() && hi.is_finite() {
            0.5 * (lo + hi)
        } else if lo.is_finite() {
            lo
        } else {
            hi
        }
    };
    for i in 0..n {
        let c = &p.costs[i];
        match act[i] {
            Activity::Free => {
                x[i] = (nu - c.b) / c.a;
                if x[i] < b.lo[i] - tol || x[i] > b.hi[i] + tol {
                    return None;
                }
            }
            Activity::Lower => {
                if c.grad(x[i]) - nu < -tol {
                    return None;
                }
            }
            Activity::Upper => {
                if nu - c.grad(x[i]) < -tol {
                    return None;
                }
            }
        }
    }
    Some(from_multiplier(p, x, nu, act.to_vec()))
}

/// Optimizer of the box-constrained quadratic for any `n`: bisection on
/// `nu` with `x_i(nu) = clamp((nu - b_i) / a_i, lo_i, hi_i)`, then an exact
/// solve on the free set.
pub fn solve_box_qp(p: &DispatchProblem) -> Result<OracleSolution> {
    require_quadratic(p)?;
    let b = strict_interior(p)?;
    let n = p.n();
    let at = |nu: f64, i: usize| ((nu - p.costs[i].b) / p.costs[i].a).clamp(b.lo[i], b.hi[i]);
    let total = |nu: f64| (0..n).map(|i| at(nu, i)).sum::<f64>() - p.d;
    let mut lo = (0..n).map(|i| p.costs[i].grad(b.lo[i])).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|i| p.costs[i].grad(b.hi[i])).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let act: Vec<Activity> = (0..n)
        .map(|i| {
            let u = (nu - p.costs[i].b) / p.costs[i].a;
            if u <= b.lo[i] {
                Activity::Lower
            } else if u >= b.hi[i] {
                Activity::Upper
            } else {
                Activity::Free
            }
        })
        .collect();
    let scale = 1.0 + p.d.abs();
    candidate(p, b, &act, 1e-9 * scale)
        .ok_or_else(|| Error::InfeasibleOrDegenerate("water-filling produced an inconsistent active set".into()))
}

/// Exact box oracle: enumeration when small enough, water-filling otherwise.
pub fn solve_box(p: &DispatchProblem) -> Result<OracleSolution> {
    if p.n() <= BRUTEFORCE_MAX_N {
        solve_box_qp_bruteforce(p)
    } else {
        solve_box_qp(p)
    }
}

/// On-disk oracle description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub nu_star: f64,
    pub active_set: Vec<Activity>,
}

impl From<&OracleSolution> for OracleFile {
    fn from(s: &OracleSolution) -> Self {
        OracleFile {
            x_star: s.x_star.clone(),
            lambda_star: s.lambda_star.clone(),
            nu_star: s.nu_star,
            active_set: s.active_set.clone(),
        }
    }
}

/// Gradient descent on `g(z) = f(x0 + L z)`: `x+ = x - alpha L (L grad f(x))`.
pub fn run_dgd(p: &DispatchProblem, l: &WeightedLaplacian, alpha: f64, opts: &RunOptions) -> Result<RunResult> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return invalid(format!("step size {alpha} must be positive"));
    }
    drive(p, l, &vec![0.0; p.n()], alpha, opts, 2, |_, y| {
        let s = l.apply(y);
        Ok(Update {
            dz: y.iter().map(|v| alpha * -v).collect(),
            dx: s.iter().map(|v| alpha * -v).collect(),
        })
    })
}
