//! Continuous-time projected primal-dual flow for the box-constrained
//! problem, its Lyapunov function, and a variant that tolerates an
//! infeasible start and state perturbations.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::WeightedLaplacian;
use crate::linalg::{eig_sym, SymMatrix};
use crate::problem::{BoxLimits, DispatchProblem};
use crate::reference::OracleSolution;

/// Consecutive Lyapunov increases tolerated before the step is rejected.
pub const RISE_WINDOW: usize = 100;

/// Primal `z`, duals `[lambda_lo; lambda_hi]` and time.
#[derive(Debug, Clone, PartialEq)]
pub struct SaddleState {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: f64,
}

impl SaddleState {
    pub fn new(z: Vec<f64>, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != 2 * z.len() {
            return invalid(format!("{} duals for {} agents", lambda.len(), z.len()));
        }
        if let Some(v) = lambda.iter().find(|v| !(**v >= 0.0)) {
            return invalid(format!("initial duals must be nonnegative, got {v}"));
        }
        Ok(SaddleState { z, lambda, t: 0.0 })
    }

    pub fn zero(n: usize) -> Self {
        SaddleState {
            z: vec![0.0; n],
            lambda: vec![0.0; 2 * n],
            t: 0.0,
        }
    }
}

fn boxes(p: &DispatchProblem) -> Result<&BoxLimits> {
    p.boxes.as_ref().ok_or_else(|| Error::InvalidInput("instance has no box limits".into()))
}

fn point(p: &DispatchProblem, l: &WeightedLaplacian, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != p.n() || l.n() != p.n() {
        return invalid("dimension mismatch between instance, Laplacian and state");
    }
    Ok(p
        .x0
        .iter()
        .zip(l.apply(&DVector::from_column_slice(z)).iter())
        .map(|(a, b)| a + b)
        .collect())
}

fn stacked_residual(b: &BoxLimits, x: &[f64]) -> Vec<f64> {
    let lo = b.lo.iter().zip(x).map(|(l, v)| l - v);
    let hi = x.iter().zip(&b.hi).map(|(v, h)| v - h);
    lo.chain(hi).collect()
}

/// `P(z) = [lo - x; x - hi]` with `x = x0 + L z`.
pub fn box_residual(p: &DispatchProblem, l: &WeightedLaplacian, z: &[f64]) -> Result<Vec<f64>> {
    Ok(stacked_residual(boxes(p)?, &point(p, l, z)?))
}

fn grads_at(p: &DispatchProblem, l: &WeightedLaplacian, x: &[f64], lambda: &[f64]) -> Vec<f64> {
    let n = x.len();
    let v: Vec<f64> = (0..n)
        .map(|i| p.costs[i].grad(x[i]) - lambda[i] + lambda[n + i])
        .collect();
    l.apply(&DVector::from_vec(v)).as_slice().to_vec()
}

/// `(L grad f(x) + [-L L] lambda, P(z))`.
pub fn lagrangian_grads(p: &DispatchProblem, l: &WeightedLaplacian, s: &SaddleState) -> Result<(Vec<f64>, Vec<f64>)> {
    let b = boxes(p)?;
    if s.lambda.len() != 2 * p.n() {
        return invalid("dual vector has the wrong length");
    }
    let x = point(p, l, &s.z)?;
    Ok((grads_at(p, l, &x, &s.lambda), stacked_residual(b, &x)))
}

/// `[u]^+_lambda`: `u_i` where `lambda_i > 0`, `max(0, u_i)` otherwise.
pub fn projected_dual_rate(u: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    if u.len() != lambda.len() {
        return invalid("rate and dual vectors differ in length");
    }
    u.iter()
        .zip(lambda)
        .enumerate()
        .map(|(i, (&ui, &li))| {
            if li < -1e-12 {
                Err(Error::StateCorruption(format!("dual {i} is {li}")))
            } else if li > 0.0 {
                Ok(ui)
            } else {
                Ok(ui.max(0.0))
            }
        })
        .collect()
}

/// Curvature used inside the truncated inverse: exact for quadratics and
/// the midpoint of the bounds otherwise.
fn model_curvature(p: &DispatchProblem) -> Vec<f64> {
    p.costs.iter().map(|c| 0.5 * (c.delta() + c.big_delta())).collect()
}

/// `A_q v = sum_{p<=q} (I - L H L)^p v`.
fn apply_aq(l: &WeightedLaplacian, h: &[f64], q: usize, v: &[f64]) -> Vec<f64> {
    let mut y = DVector::from_column_slice(v);
    let mut acc = y.clone();
    for _ in 0..q {
        let ly = l.apply(&y);
        let r = DVector::from_iterator(y.len(), ly.iter().zip(h).map(|(a, b)| a * b));
        y -= l.apply(&r);
        acc += &y;
    }
    acc.as_slice().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub compslack: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.compslack)
    }
}

pub fn kkt_residuals(p: &DispatchProblem, l: &WeightedLaplacian, s: &SaddleState) -> Result<KktResiduals> {
    let (gz, pz) = lagrangian_grads(p, l, s)?;
    Ok(KktResiduals {
        stationarity: gz.iter().fold(0.0, |m, v| m.max(v.abs())),
        primal: pz.iter().fold(0.0f64, |m, &v| m.max(v)),
        dual: s.lambda.iter().fold(0.0f64, |m, &v| m.max(-v)) + 0.0,
        compslack: s.lambda.iter().zip(&pz).fold(0.0, |m, (a, b)| m.max((a * b).abs())),
    })
}

/// `A_q^{-1}` from the eigenvalues `mu` of `L H L`: each eigenvalue maps to
/// `mu / (1 - (1 - mu)^{q+1})`, and the null direction to `1 / (q + 1)`.
#[derive(Debug, Clone)]
pub struct AqInverse {
    pub q: usize,
    pub matrix: SymMatrix,
}

impl AqInverse {
    pub fn new(l: &WeightedLaplacian, h: &[f64], q: usize) -> Result<Self> {
        if h.len() != l.n() {
            return invalid("curvature vector has the wrong length");
        }
        let lm = l.matrix().matrix();
        let lhl = lm * nalgebra::DMatrix::from_diagonal(&DVector::from_column_slice(h)) * lm;
        let sd = eig_sym(&SymMatrix::new(lhl)?)?;
        let tiny = 1e-12 * sd.max().abs().max(1.0);
        let qp = q as i32 + 1;
        let matrix = sd.map(|mu| {
            if mu.abs() <= tiny {
                1.0 / qp as f64
            } else {
                mu / (1.0 - (1.0 - mu).powi(qp))
            }
        });
        Ok(AqInverse { q, matrix })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovRecord {
    pub value: f64,
    /// `(z - z*)^T A_q^{-1} (z - z*)`.
    pub primal: f64,
    /// `||lambda - lambda*||^2`.
    pub dual: f64,
}

pub fn lyapunov_vq(s: &SaddleState, z_star: &[f64], lambda_star: &[f64], aq: &AqInverse) -> LyapunovRecord {
    let dz = DVector::from_iterator(s.z.len(), s.z.iter().zip(z_star).map(|(a, b)| a - b));
    let primal = dz.dot(&(aq.matrix.matrix() * &dz));
    let dual: f64 = s.lambda.iter().zip(lambda_star).map(|(a, b)| (a - b) * (a - b)).sum();
    LyapunovRecord {
        value: 0.5 * (primal + dual),
        primal,
        dual,
    }
}

/// Known optimizer in the coordinates of the flow.
#[derive(Debug, Clone)]
pub struct FlowOracle {
    pub x_star: Vec<f64>,
    pub z_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub nu_star: f64,
    pub f_star: f64,
}

impl FlowOracle {
    /// `z*` is the representative sharing the mean of `z0`.
    pub fn new(p: &DispatchProblem, l: &WeightedLaplacian, sol: &OracleSolution, z0: &[f64]) -> Result<Self> {
        let mean = z0.iter().sum::<f64>() / z0.len().max(1) as f64;
        Ok(FlowOracle {
            x_star: sol.x_star.clone(),
            z_star: sol.z_star(p, l, mean)?,
            lambda_star: sol.lambda_star.clone(),
            nu_star: sol.nu_star,
            f_star: sol.f_star(p),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DanaCConfig {
    pub q: usize,
    pub h: f64,
    pub horizon: f64,
    /// Trace row every this many steps.
    pub record_every: usize,
}

impl Default for DanaCConfig {
    fn default() -> Self {
        DanaCConfig {
            q: 0,
            h: 1e-3,
            horizon: 50.0,
            record_every: 100,
        }
    }
}

impl DanaCConfig {
    fn steps(&self) -> Result<usize> {
        if !(self.h > 0.0) || !(self.horizon >= 0.0) || !self.h.is_finite() || !self.horizon.is_finite() {
            return invalid("step and horizon must be positive and finite");
        }
        if self.record_every == 0 {
            return invalid("record_every must be positive");
        }
        Ok((self.horizon / self.h).round() as usize)
    }
}

/// One row of a continuous-time trace. Oracle-dependent columns are empty
/// without an oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRecord {
    pub t: f64,
    pub primal_err: Option<f64>,
    pub dual_err: Option<f64>,
    pub v_q: Option<f64>,
    pub obj_gap: Option<f64>,
    pub feas_box: f64,
    pub feas_sum: f64,
    pub compslack: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
}

impl FlowTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let err = |e: csv::Error| Error::InvalidInput(format!("cannot write trace: {e}"));
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "primal_err", "dual_err", "V_Q", "obj_gap", "feas_box", "feas_sum", "compslack"])
            .map_err(err)?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        for r in &self.records {
            out.write_record(&[
                format!("{}", r.t),
                opt(r.primal_err),
                opt(r.dual_err),
                opt(r.v_q),
                opt(r.obj_gap),
                format!("{:e}", r.feas_box),
                format!("{:e}", r.feas_sum),
                format!("{:e}", r.compslack),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(format!("cannot write trace: {e}")))
    }

    /// Earliest recorded time from which the primal error stays at or
    /// below `tol`.
    pub fn settle_time(&self, tol: f64) -> Option<f64> {
        let mut t = None;
        for r in &self.records {
            match r.primal_err {
                Some(e) if e <= tol => t = t.or(Some(r.t)),
                _ => t = None,
            }
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct FlowRun {
    pub trace: FlowTrace,
    pub state: SaddleState,
    pub x: Vec<f64>,
    pub kkt: KktResiduals,
    /// Largest one-step increase of `V_Q`; present with an oracle.
    pub max_vq_increase: Option<f64>,
    /// Steps whose `V_Q` increase exceeded `1e-8 h`.
    pub vq_violations: usize,
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Projected forward-Euler integration of
/// `z' = -A_q grad_z L(z, lambda)`, `lambda' = [P(z)]^+_lambda`.
pub fn integrate(
    p: &DispatchProblem,
    l: &WeightedLaplacian,
    cfg: &DanaCConfig,
    init: &SaddleState,
    oracle: Option<&FlowOracle>,
) -> Result<FlowRun> {
    let b = boxes(p)?.clone();
    let steps = cfg.steps()?;
    let n = p.n();
    if init.z.len() != n || init.lambda.len() != 2 * n || l.n() != n {
        return invalid("initial state does not match the instance");
    }
    let hmod = model_curvature(p);
    let aq = match oracle {
        Some(_) => Some(AqInverse::new(l, &hmod, cfg.q)?),
        None => None,
    };
    let mut s = init.clone();
    let mut records = Vec::new();
    let mut prev_v: Option<f64> = None;
    let mut max_rise: Option<f64> = None;
    let mut rises = 0;
    let mut violations = 0;
    let h = cfg.h;
    for k in 0..=steps {
        let x = point(p, l, &s.z)?;
        let gz = grads_at(p, l, &x, &s.lambda);
        let pz = stacked_residual(&b, &x);
        let v = match (oracle, &aq) {
            (Some(o), Some(a)) => Some(lyapunov_vq(&s, &o.z_star, &o.lambda_star, a).value),
            _ => None,
        };
        if let (Some(v), Some(pv)) = (v, prev_v) {
            let rise = v - pv;
            max_rise = Some(max_rise.map_or(rise, |m: f64| m.max(rise)));
            if rise > 1e-8 * h {
                violations += 1;
            }
            rises = if rise > 1e-6 * h { rises + 1 } else { 0 };
            if rises >= RISE_WINDOW {
                return Err(Error::StepTooLarge(rises));
            }
        }
        prev_v = v;
        if k % cfg.record_every == 0 || k == steps {
            records.push(FlowRecord {
                t: s.t,
                primal_err: oracle.map(|o| l2_dist(&x, &o.x_star)),
                dual_err: oracle.map(|o| l2_dist(&s.lambda, &o.lambda_star)),
                v_q: v,
                obj_gap: oracle.map(|o| p.f(&x) - o.f_star),
                feas_box: pz.iter().fold(0.0f64, |m, &v| m.max(v)),
                feas_sum: (x.iter().sum::<f64>() - p.d).abs(),
                compslack: s.lambda.iter().zip(&pz).fold(0.0, |m, (a, b)| m.max((a * b).abs())),
            });
        }
        if k == steps {
            break;
        }
        let dz = apply_aq(l, &hmod, cfg.q, &gz);
        let dl = projected_dual_rate(&pz, &s.lambda)?;
        for (zi, di) in s.z.iter_mut().zip(&dz) {
            *zi -= h * di;
        }
        for (li, di) in s.lambda.iter_mut().zip(&dl) {
            *li = (*li + h * di).max(0.0);
        }
        if s.z.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepTooLarge(rises + 1));
        }
        s.t = (k + 1) as f64 * h;
    }
    let x = point(p, l, &s.z)?;
    let kkt = kkt_residuals(p, l, &s)?;
    Ok(FlowRun {
        trace: FlowTrace { records },
        state: s,
        x,
        kkt,
        max_vq_increase: max_rise,
        vq_violations: violations,
    })
}

/// Additive uniform noise of half-width `amplitude` on `x` and `z` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Perturbation {
    pub t: f64,
    pub amplitude: f64,
}

impl std::str::FromStr for Perturbation {
    type Err = Error;

    /// Parses `t:amplitude`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("perturbation `{s}` is not of the form t:amplitude"));
        let (t, a) = s.split_once(':').ok_or_else(bad)?;
        let t: f64 = t.trim().parse().map_err(|_| bad())?;
        let amplitude: f64 = a.trim().parse().map_err(|_| bad())?;
        if !(t >= 0.0) || !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(bad());
        }
        Ok(Perturbation { t, amplitude })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustConfig {
    pub q: usize,
    pub h: f64,
    pub horizon: f64,
    pub record_every: usize,
    /// Weight of the augmentation `rho ||x + L z - d_bar||^2 / 2`.
    pub rho: f64,
    /// Gain of the multiplier updates.
    pub kappa: f64,
    /// Seed of the perturbation noise.
    pub seed: u64,
    /// Starting allocation; the instance's `x0` when absent.
    pub x_start: Option<Vec<f64>>,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            q: 0,
            h: 1e-3,
            horizon: 100.0,
            record_every: 100,
            rho: 100.0,
            kappa: 2500.0,
            seed: 0,
            x_start: None,
        }
    }
}

/// Full state of the robust flow.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone)]
pub struct RobustRun {
    pub trace: FlowTrace,
    pub state: RobustState,
}

/// Saddle flow on `f(x) + nu^T e + rho ||e||^2 / 2 + lambda^T [lo - x; x - hi]`
/// with `e = x + L z - d_bar`: descent in `(x, z)` (the `z` block
/// preconditioned by `A_q`), ascent in `nu`, projected ascent in `lambda`.
/// The `feas_sum` column holds `||e||_inf`.
pub fn integrate_robust(
    p: &DispatchProblem,
    l: &WeightedLaplacian,
    d_bar: &[f64],
    cfg: &RobustConfig,
    perturbations: &[Perturbation],
    oracle: Option<&OracleSolution>,
) -> Result<RobustRun> {
    let b = boxes(p)?.clone();
    let n = p.n();
    if d_bar.len() != n || l.n() != n {
        return invalid("demand split does not match the instance");
    }
    let split: f64 = d_bar.iter().sum();
    if (split - p.d).abs() > 1e-9 * p.d.abs().max(1.0) {
        return invalid(format!("demand split sums to {split}, not {}", p.d));
    }
    if !(cfg.rho >= 0.0 && cfg.kappa > 0.0) {
        return invalid("gains must satisfy rho >= 0 and kappa > 0");
    }
    let steps = DanaCConfig {
        q: cfg.q,
        h: cfg.h,
        horizon: cfg.horizon,
        record_every: cfg.record_every,
    }
    .steps()?;
    let mut x = cfg.x_start.clone().unwrap_or_else(|| p.x0.clone());
    if x.len() != n {
        return invalid("starting allocation has the wrong length");
    }
    let hmod = model_curvature(p);
    let mut hits: Vec<(usize, f64)> = perturbations
        .iter()
        .map(|pt| ((pt.t / cfg.h).round() as usize, pt.amplitude))
        .collect();
    hits.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = vec![0.0; n];
    let mut nu = vec![0.0; n];
    let mut lambda = vec![0.0; 2 * n];
    let mut records = Vec::new();
    let h = cfg.h;
    let mut next = 0;
    for k in 0..=steps {
        while next < hits.len() && hits[next].0 == k {
            let amp = hits[next].1;
            for v in x.iter_mut().chain(z.iter_mut()) {
                *v += rng.gen_range(-amp..=amp);
            }
            next += 1;
        }
        let lz = l.apply(&DVector::from_column_slice(&z));
        let e: Vec<f64> = (0..n).map(|i| x[i] + lz[i] - d_bar[i]).collect();
        let pz = stacked_residual(&b, &x);
        if k % cfg.record_every == 0 || k == steps {
            let nu_err = oracle.map(|o| nu.iter().map(|v| (v + o.nu_star).powi(2)).sum::<f64>());
            records.push(FlowRecord {
                t: k as f64 * h,
                primal_err: oracle.map(|o| l2_dist(&x, &o.x_star)),
                dual_err: oracle.map(|o| {
                    let lam: f64 = lambda.iter().zip(&o.lambda_star).map(|(a, b)| (a - b) * (a - b)).sum();
                    (lam + nu_err.unwrap_or(0.0)).sqrt()
                }),
                v_q: None,
                obj_gap: oracle.map(|o| p.f(&x) - o.f_star(p)),
                feas_box: pz.iter().fold(0.0f64, |m, &v| m.max(v)),
                feas_sum: e.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                compslack: lambda.iter().zip(&pz).fold(0.0, |m, (a, b)| m.max((a * b).abs())),
            });
        }
        if k == steps {
            break;
        }
        let pull: Vec<f64> = (0..n).map(|i| nu[i] + cfg.rho * e[i]).collect();
        let gz = l.apply(&DVector::from_column_slice(&pull));
        let dz = apply_aq(l, &hmod, cfg.q, gz.as_slice());
        let dl = projected_dual_rate(&pz, &lambda)?;
        for i in 0..n {
            let gx = p.costs[i].grad(x[i]) + pull[i] - lambda[i] + lambda[n + i];
            x[i] -= h * gx;
            z[i] -= h * dz[i];
            nu[i] += h * cfg.kappa * e[i];
        }
        for (li, di) in lambda.iter_mut().zip(&dl) {
            *li = (*li + h * cfg.kappa * di).max(0.0);
        }
        if x.iter().chain(&z).any(|v| !v.is_finite()) {
            return Err(Error::StepTooLarge(1));
        }
    }
    Ok(RobustRun {
        trace: FlowTrace { records },
        state: RobustState {
            x,
            z,
            nu,
            lambda,
            t: steps as f64 * h,
        },
    })
}
