//! Separable cost models and dispatch instances.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::WeightedLaplacian;

/// `f(x) = a x^2 / 2 + b x + c sin(x + theta)`; `c = 0` gives the quadratic
/// model. The curvature lies in `[a - c, a + c]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFunction {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub theta: f64,
}

impl CostFunction {
    pub fn quadratic(a: f64, b: f64) -> Self {
        CostFunction { a, b, c: 0.0, theta: 0.0 }
    }

    pub fn sinusoid(a: f64, b: f64, c: f64, theta: f64) -> Self {
        CostFunction { a, b, c, theta }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.c, self.theta].iter().all(|v| v.is_finite());
        if !finite || self.c < 0.0 || self.a - self.c <= 0.0 {
            return invalid(format!("cost {self:?} must satisfy c >= 0 and a - c > 0"));
        }
        Ok(())
    }

    pub fn is_quadratic(&self) -> bool {
        self.c == 0.0
    }

    /// Lower curvature bound.
    pub fn delta(&self) -> f64 {
        self.a - self.c
    }

    /// Upper curvature bound.
    pub fn big_delta(&self) -> f64 {
        self.a + self.c
    }

    pub fn value(&self, x: f64) -> f64 {
        0.5 * self.a * x * x + self.b * x + self.c * (x + self.theta).sin()
    }

    pub fn grad(&self, x: f64) -> f64 {
        self.a * x + self.b + self.c * (x + self.theta).cos()
    }

    pub fn hess(&self, x: f64) -> f64 {
        self.a - self.c * (x + self.theta).sin()
    }

    /// `f(x + dx) - f(x)` without cancellation against `f(x)`.
    pub fn increment(&self, x: f64, dx: f64) -> f64 {
        let quad = dx * (self.a * x + self.b + 0.5 * self.a * dx);
        if self.c == 0.0 {
            quad
        } else {
            quad + 2.0 * self.c * (x + self.theta + 0.5 * dx).cos() * (0.5 * dx).sin()
        }
    }

    /// Unique `x` with `f'(x) = nu` (the derivative is strictly increasing).
    pub fn grad_inverse(&self, nu: f64) -> f64 {
        if self.c == 0.0 {
            return (nu - self.b) / self.a;
        }
        let delta = self.delta();
        let mut lo = (nu - self.b - self.c) / self.a;
        let mut hi = (nu - self.b + self.c) / self.a;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let r = self.grad(x) - nu;
            if r == 0.0 {
                break;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let step = x - r / self.hess(x).max(delta);
            if step == x {
                break;
            }
            x = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * (1.0 + x.abs()) {
                break;
            }
        }
        x
    }
}

/// Box limits per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxLimits {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Resource allocation instance: minimize `sum f_i(x_i)` with `sum x_i = d`
/// and, when present, `lo <= x <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProblem {
    pub costs: Vec<CostFunction>,
    pub d: f64,
    pub boxes: Option<BoxLimits>,
    pub x0: Vec<f64>,
}

/// Curvature evaluations at a point plus the constant bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianDiagonal {
    pub h: Vec<f64>,
    pub delta: Vec<f64>,
    pub big_delta: Vec<f64>,
}

impl DispatchProblem {
    pub fn new(costs: Vec<CostFunction>, d: f64, boxes: Option<BoxLimits>, x0: Vec<f64>) -> Result<Self> {
        let p = DispatchProblem { costs, d, boxes, x0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.costs.len();
        if n == 0 {
            return invalid("instance has no agents");
        }
        for c in &self.costs {
            c.validate()?;
        }
        if self.x0.len() != n {
            return invalid(format!("x0 has {} entries for {n} agents", self.x0.len()));
        }
        if !self.d.is_finite() || self.x0.iter().any(|v| !v.is_finite()) {
            return invalid("demand and x0 must be finite");
        }
        let s: f64 = self.x0.iter().sum();
        if (s - self.d).abs() > 1e-9 * self.d.abs().max(1.0) {
            return invalid(format!("x0 sums to {s}, demand is {}", self.d));
        }
        if let Some(b) = &self.boxes {
            if b.lo.len() != n || b.hi.len() != n {
                return invalid("box limits have the wrong length");
            }
            if b.lo.iter().zip(&b.hi).any(|(l, h)| !(l <= h)) {
                return invalid("box limits must satisfy lo <= hi");
            }
            let slo: f64 = b.lo.iter().sum();
            let shi: f64 = b.hi.iter().sum();
            if !(slo < self.d && self.d < shi) {
                return invalid(format!(
                    "demand {} must lie strictly between {slo} and {shi}",
                    self.d
                ));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.costs.len()
    }

    pub fn is_quadratic(&self) -> bool {
        self.costs.iter().all(|c| c.is_quadratic())
    }

    pub fn delta(&self) -> Vec<f64> {
        self.costs.iter().map(|c| c.delta()).collect()
    }

    pub fn big_delta(&self) -> Vec<f64> {
        self.costs.iter().map(|c| c.big_delta()).collect()
    }

    /// Same instance without box limits.
    pub fn relaxed(&self) -> DispatchProblem {
        DispatchProblem { boxes: None, ..self.clone() }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n() {
            return invalid(format!("point has {} entries for {} agents", x.len(), self.n()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("point has non-finite entries");
        }
        Ok(())
    }

    pub fn eval_f(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.f(x))
    }

    pub fn eval_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.grad(x))
    }

    pub fn eval_hess(&self, x: &[f64]) -> Result<HessianDiagonal> {
        self.check(x)?;
        Ok(HessianDiagonal {
            h: self.hess(x),
            delta: self.delta(),
            big_delta: self.big_delta(),
        })
    }

    pub(crate) fn f(&self, x: &[f64]) -> f64 {
        self.costs.iter().zip(x).map(|(c, &v)| c.value(v)).sum()
    }

    pub(crate) fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.costs.iter().zip(x).map(|(c, &v)| c.grad(v)).collect()
    }

    pub(crate) fn hess(&self, x: &[f64]) -> Vec<f64> {
        self.costs.iter().zip(x).map(|(c, &v)| c.hess(v)).collect()
    }

    /// `f(x + dx) - f(x)` summed term by term without cancellation.
    pub fn increment(&self, x: &[f64], dx: &[f64]) -> f64 {
        self.costs
            .iter()
            .zip(x.iter().zip(dx))
            .map(|(c, (&xi, &di))| c.increment(xi, di))
            .sum()
    }
}

/// `g(z) = f(x0 + L z)`.
pub fn reduced_objective(p: &DispatchProblem, l: &WeightedLaplacian, z: &[f64]) -> Result<f64> {
    let x = reduced_point(p, l, z)?;
    p.eval_f(x.as_slice())
}

/// `grad g(z) = L grad f(x0 + L z)`.
pub fn reduced_gradient(p: &DispatchProblem, l: &WeightedLaplacian, z: &[f64]) -> Result<Vec<f64>> {
    let x = reduced_point(p, l, z)?;
    let gf = DVector::from_vec(p.eval_grad(x.as_slice())?);
    Ok(l.apply(&gf).as_slice().to_vec())
}

/// `x0 + L z`.
pub fn reduced_point(p: &DispatchProblem, l: &WeightedLaplacian, z: &[f64]) -> Result<DVector<f64>> {
    if z.len() != p.n() || l.n() != p.n() {
        return invalid("dimension mismatch between instance, Laplacian and z");
    }
    let lz = l.apply(&DVector::from_column_slice(z));
    Ok(DVector::from_column_slice(&p.x0) + lz)
}

/// How total demand is fixed for a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Demand {
    Total(f64),
    PerAgent(f64),
}

/// Sampling ranges for random instances. Every range is a closed interval
/// `[lo, hi]`; `c` and `theta` absent means quadratic costs, box ranges
/// absent means no box limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDistribution {
    pub a: (f64, f64),
    pub b: (f64, f64),
    #[serde(default)]
    pub c: Option<(f64, f64)>,
    #[serde(default)]
    pub theta: Option<(f64, f64)>,
    #[serde(default)]
    pub x_lo: Option<(f64, f64)>,
    #[serde(default)]
    pub x_hi: Option<(f64, f64)>,
    pub demand: Demand,
}

impl CostDistribution {
    /// Quadratic-plus-sinusoid family used for the discrete-time study.
    pub fn sinusoid() -> Self {
        CostDistribution {
            a: (2.0, 4.0),
            b: (-1.0, 1.0),
            c: Some((0.0, 1.0)),
            theta: Some((0.0, 2.0 * std::f64::consts::PI)),
            x_lo: None,
            x_hi: None,
            demand: Demand::Total(200.0),
        }
    }

    /// Box-constrained quadratic family used for the continuous-time study
    /// (demand 3 per agent, so 120 for 40 agents).
    pub fn boxed() -> Self {
        CostDistribution {
            a: (0.5, 3.0),
            b: (-2.0, 2.0),
            c: None,
            theta: None,
            x_lo: Some((1.5, 3.0)),
            x_hi: Some((3.0, 4.5)),
            demand: Demand::PerAgent(3.0),
        }
    }

    /// Quadratic costs with curvature in `[lo, hi]` and `b` in `[0, 1]`.
    pub fn quadratic(lo: f64, hi: f64) -> Self {
        CostDistribution {
            a: (lo, hi),
            b: (0.0, 1.0),
            c: None,
            theta: None,
            x_lo: None,
            x_hi: None,
            demand: Demand::PerAgent(1.0),
        }
    }

    pub fn tight() -> Self {
        Self::quadratic(0.8, 1.2)
    }

    pub fn wide() -> Self {
        Self::quadratic(0.2, 5.0)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

/// Draws a random instance; `x0 = (d/n) 1`.
pub fn random_instance(n: usize, dist: &CostDistribution, seed: u64) -> Result<DispatchProblem> {
    if n == 0 {
        return invalid("instance needs at least one agent");
    }
    let ranges = [Some(dist.a), Some(dist.b), dist.c, dist.theta, dist.x_lo, dist.x_hi];
    for r in ranges.iter().flatten() {
        if !(r.0 <= r.1) || !r.0.is_finite() || !r.1.is_finite() {
            return invalid(format!("bad sampling range {r:?}"));
        }
    }
    if dist.x_lo.is_some() != dist.x_hi.is_some() {
        return invalid("both box ranges must be given together");
    }
    let d = match dist.demand {
        Demand::Total(d) => d,
        Demand::PerAgent(v) => v * n as f64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut costs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tries = 0;
        let cost = loop {
            let a = uniform(&mut rng, dist.a);
            let b = uniform(&mut rng, dist.b);
            let c = dist.c.map_or(0.0, |r| uniform(&mut rng, r));
            let theta = dist.theta.map_or(0.0, |r| uniform(&mut rng, r));
            let cost = CostFunction { a, b, c, theta };
            if cost.validate().is_ok() {
                break cost;
            }
            tries += 1;
            if tries > 1000 {
                return invalid("cost distribution never yields a - c > 0");
            }
        };
        costs.push(cost);
    }
    let boxes = match (dist.x_lo, dist.x_hi) {
        (Some(rl), Some(rh)) => {
            let mut tries = 0;
            loop {
                let lo: Vec<f64> = (0..n).map(|_| uniform(&mut rng, rl)).collect();
                let hi: Vec<f64> = lo.iter().map(|&l| uniform(&mut rng, rh).max(l)).collect();
                let slo: f64 = lo.iter().sum();
                let shi: f64 = hi.iter().sum();
                if slo < d && d < shi {
                    break Some(BoxLimits { lo, hi });
                }
                tries += 1;
                if tries > 1000 {
                    return invalid("box ranges never bracket the demand");
                }
            }
        }
        _ => None,
    };
    DispatchProblem::new(costs, d, boxes, vec![d / n as f64; n])
}

/// Three-agent box-constrained instance used for trajectory plots and as
/// the reference case for the continuous-time solver.
pub fn three_node_instance() -> DispatchProblem {
    let costs = vec![
        CostFunction::quadratic(0.5, 0.5),
        CostFunction::quadratic(1.5, 0.5),
        CostFunction::quadratic(4.0, 0.5),
    ];
    let boxes = BoxLimits {
        lo: vec![0.2, 2.5, 1.5],
        hi: vec![1.0, 6.0, 4.0],
    };
    DispatchProblem::new(costs, 6.0, Some(boxes), vec![5.0, -1.0, 2.0]).expect("fixed instance is valid")
}

/// Initial duals `(lower, upper)` paired with [`three_node_instance`].
pub fn three_node_initial_duals() -> (Vec<f64>, Vec<f64>) {
    (vec![1.5, 0.5, 0.0], vec![0.0, 2.0, 1.0])
}

/// On-disk instance description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub costs: Vec<CostFunction>,
    pub d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl InstanceFile {
    pub fn from_problem(p: &DispatchProblem) -> Self {
        InstanceFile {
            costs: p.costs.clone(),
            d: p.d,
            x_lo: p.boxes.as_ref().map(|b| b.lo.clone()),
            x_hi: p.boxes.as_ref().map(|b| b.hi.clone()),
            x0: Some(p.x0.clone()),
        }
    }

    /// Missing `x0` defaults to `(d/n) 1`.
    pub fn problem(&self) -> Result<DispatchProblem> {
        let n = self.costs.len();
        let boxes = match (&self.x_lo, &self.x_hi) {
            (Some(lo), Some(hi)) => Some(BoxLimits { lo: lo.clone(), hi: hi.clone() }),
            (None, None) => None,
            _ => return invalid("x_lo and x_hi must be given together"),
        };
        let x0 = self.x0.clone().unwrap_or_else(|| vec![self.d / n.max(1) as f64; n]);
        DispatchProblem::new(self.costs.clone(), self.d, boxes, x0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{assemble_laplacian, random_connected};

    #[test]
    fn three_node_cost_value() {
        let p = three_node_instance();
        assert!((p.costs[0].value(1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quadratic_stationary_at_zero() {
        assert_eq!(CostFunction::quadratic(2.0, 0.0).grad(0.0), 0.0);
    }

    #[test]
    fn sinusoid_curvature_in_bounds() {
        let c = CostFunction::sinusoid(3.0, 0.0, 1.0, 0.0);
        for k in 0..=1000 {
            let x = -10.0 + 0.02 * k as f64;
            let h = c.hess(x);
            assert!((2.0..=4.0).contains(&h));
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let dist = CostDistribution::sinusoid();
        for seed in 0..50 {
            let p = random_instance(6, &dist, seed).unwrap();
            for (k, c) in p.costs.iter().enumerate() {
                let x = -3.0 + k as f64;
                let h = 1e-5;
                let fd = (c.value(x + h) - c.value(x - h)) / (2.0 * h);
                assert!((fd - c.grad(x)).abs() <= 1e-5 * (1.0 + c.grad(x).abs()));
                let fd2 = (c.grad(x + h) - c.grad(x - h)) / (2.0 * h);
                assert!((fd2 - c.hess(x)).abs() <= 1e-5 * (1.0 + c.hess(x).abs()));
            }
        }
    }

    #[test]
    fn increment_matches_difference() {
        let c = CostFunction::sinusoid(2.5, -0.3, 0.7, 1.1);
        for &(x, dx) in &[(0.3, 0.2), (-4.0, 1e-3), (10.0, -2.0)] {
            let direct = c.value(x + dx) - c.value(x);
            assert!((c.increment(x, dx) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_inverse_roundtrip() {
        let c = CostFunction::sinusoid(2.0, 0.4, 1.0, 0.3);
        for nu in [-5.0, 0.0, 0.7, 12.0] {
            assert!((c.grad(c.grad_inverse(nu)) - nu).abs() < 1e-12);
        }
    }

    #[test]
    fn reduced_objective_properties() {
        let p = random_instance(8, &CostDistribution::sinusoid(), 2).unwrap();
        let g = random_connected(8, 12, 2).unwrap();
        let l = assemble_laplacian(&g, &vec![0.3; 12]).unwrap();
        let z0 = vec![0.0; 8];
        assert_eq!(reduced_objective(&p, &l, &z0).unwrap(), p.eval_f(&p.x0).unwrap());
        let z: Vec<f64> = (0..8).map(|k| (k as f64 * 0.7).sin()).collect();
        let zs: Vec<f64> = z.iter().map(|v| v + 2.5).collect();
        let g1 = reduced_objective(&p, &l, &z).unwrap();
        let g2 = reduced_objective(&p, &l, &zs).unwrap();
        assert!((g1 - g2).abs() < 1e-10);
        let grad = reduced_gradient(&p, &l, &z).unwrap();
        for k in 0..8 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += 1e-5;
            zm[k] -= 1e-5;
            let fd = (reduced_objective(&p, &l, &zp).unwrap() - reduced_objective(&p, &l, &zm).unwrap()) / 2e-5;
            assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + grad[k].abs()));
        }
        let x = reduced_point(&p, &l, &z).unwrap();
        assert!((x.sum() - p.d).abs() < 1e-9);
    }

    #[test]
    fn families_conserve_demand() {
        let p = random_instance(100, &CostDistribution::sinusoid(), 4).unwrap();
        assert!((p.x0.iter().sum::<f64>() - 200.0).abs() < 1e-9);
        assert!(p.x0.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        let q = random_instance(40, &CostDistribution::boxed(), 4).unwrap();
        assert_eq!(q.d, 120.0);
        assert!(q.x0.iter().all(|&v| v == 3.0));
        assert!(q.boxes.is_some());
    }

    #[test]
    fn instance_file_round_trip() {
        let p = three_node_instance();
        let s = serde_json::to_string(&InstanceFile::from_problem(&p)).unwrap();
        let back: InstanceFile = serde_json::from_str(&s).unwrap();
        assert_eq!(back.problem().unwrap(), p);
        let bad = r#"{"costs":[{"a":1,"b":0}],"d":1,"x0":[1],"extra":3}"#;
        assert!(serde_json::from_str::<InstanceFile>(bad).is_err());
    }
}
