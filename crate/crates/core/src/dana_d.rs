//! Discrete-time approximate Newton iteration on `g(z) = f(x0 + L z)`,
//! in matrix-vector form and as a synchronous per-agent simulation.

use std::collections::BTreeSet;
use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{khop_neighbors, WeightedLaplacian};
use crate::problem::DispatchProblem;
use crate::reduction::epsilon_of;

/// Consecutive objective increases tolerated before a run is declared
/// divergent.
pub const DIVERGENCE_WINDOW: usize = 10;

fn check_eps(eps: f64, n: usize) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::AssumptionViolated(format!("eps = {eps} is outside [0, 1)")));
    }
    if n < 2 {
        return invalid("need at least two agents");
    }
    Ok(())
}

/// Largest admissible constant step for truncation order `q`.
pub fn step_bound_thm1(eps: f64, n: usize, q: usize) -> Result<f64> {
    check_eps(eps, n)?;
    let nm1 = (n - 1) as f64;
    Ok(2.0 * (1.0 - eps) / (nm1 * (1.0 + eps) * (1.0 - eps.powi(q as i32 + 1))))
}

/// Step size at which the per-iteration decrease is certified, and the
/// certified decrease (a nonpositive number) for a point at distance `dist`
/// from the optimizer.
pub fn rate_bound_thm2(eps: f64, n: usize, q: usize, dist: f64) -> Result<(f64, f64)> {
    check_eps(eps, n)?;
    let nm1 = (n - 1) as f64;
    let qi = q as i32;
    let alpha = (1.0 - eps) / (nm1 * (1.0 + eps) * (1.0 - eps.powi(qi + 1)));
    let lead = 1.0 + eps * (-eps).powi(qi);
    let num = (1.0 - eps).powi(4) * lead * lead * dist * dist;
    let den = 2.0 * nm1 * nm1 * (1.0 + eps).powi(3) * (1.0 - eps.powi(2 * qi + 2));
    Ok((alpha, -num / den))
}

/// `L z_nt = -L sum_{p<=q} (I - L H L)^p L grad`, via `y <- y - L(h * (L y))`.
pub fn newton_direction(l: &WeightedLaplacian, h: &[f64], grad: &[f64], q: usize) -> Result<DVector<f64>> {
    if h.len() != l.n() || grad.len() != l.n() {
        return invalid("dimension mismatch in newton_direction");
    }
    let zt = accumulate(l, h, l.apply(&DVector::from_column_slice(grad)), q);
    Ok(l.apply(&zt))
}

/// `-sum_{p<=q} (I - L H L)^p y0`, the quantity each agent accumulates.
fn accumulate(l: &WeightedLaplacian, h: &[f64], mut y: DVector<f64>, q: usize) -> DVector<f64> {
    let mut acc = -&y;
    for _ in 0..q {
        let ly = l.apply(&y);
        let r = DVector::from_iterator(y.len(), ly.iter().zip(h).map(|(v, hi)| hi * v));
        y -= l.apply(&r);
        acc -= &y;
    }
    acc
}

/// How the constant step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    Fixed(f64),
    /// A fraction in `(0, 1)` of the largest admissible step.
    Theorem1(f64),
    /// The step paired with the certified decrease.
    Theorem2,
}

/// Options shared by every discrete-time run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    pub max_iters: usize,
    /// Stop once `||L grad f||_inf <= tol`.
    pub tol: f64,
    /// Optimal value; fills the objective-gap column when present.
    pub f_star: Option<f64>,
    /// Keep `x`, `z` and the objective change of every iterate.
    pub record_history: bool,
    /// Record wall time; off keeps traces byte-reproducible.
    pub timing: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_iters: 100_000,
            tol: 1e-10,
            f_star: None,
            record_history: false,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DanaDConfig {
    pub q: usize,
    pub step: StepPolicy,
    /// Metric of the Laplacian; taken from its metadata or computed when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub run: RunOptions,
}

impl DanaDConfig {
    pub fn new(q: usize, step: StepPolicy) -> Self {
        DanaDConfig {
            q,
            step,
            epsilon: None,
            run: RunOptions::default(),
        }
    }

    /// Resolves the step for the given instance and Laplacian.
    pub fn alpha(&self, p: &DispatchProblem, l: &WeightedLaplacian) -> Result<f64> {
        let alpha = match self.step {
            StepPolicy::Fixed(a) => a,
            StepPolicy::Theorem1(frac) => {
                if !(frac > 0.0 && frac < 1.0) {
                    return invalid(format!("step fraction {frac} must lie in (0, 1)"));
                }
                frac * step_bound_thm1(resolve_eps(self.epsilon, p, l)?, l.n(), self.q)?
            }
            StepPolicy::Theorem2 => rate_bound_thm2(resolve_eps(self.epsilon, p, l)?, l.n(), self.q, 0.0)?.0,
        };
        if !(alpha > 0.0) || !alpha.is_finite() {
            return invalid(format!("step size {alpha} must be positive"));
        }
        Ok(alpha)
    }
}

/// `eps` from an explicit value, the Laplacian metadata, or the curvature
/// bounds of the instance, in that order.
pub fn resolve_eps(explicit: Option<f64>, p: &DispatchProblem, l: &WeightedLaplacian) -> Result<f64> {
    match explicit.or(l.meta.epsilon) {
        Some(e) => Ok(e),
        None => Ok(epsilon_of(l, &p.delta(), &p.big_delta())?.value),
    }
}

/// One row of a discrete-time trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub obj_gap: Option<f64>,
    pub grad_norm: f64,
    pub feas_err: f64,
    /// Cumulative one-hop communication rounds.
    pub msgs: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
}

impl SolverTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::InvalidInput(format!("cannot write trace: {e}"));
        out.write_record(["iter", "obj_gap", "grad_norm", "feas_err", "msgs", "elapsed_s"])
            .map_err(io)?;
        for r in &self.records {
            out.write_record(&[
                r.iter.to_string(),
                r.obj_gap.map(|g| format!("{g:e}")).unwrap_or_default(),
                format!("{:e}", r.grad_norm),
                format!("{:e}", r.feas_err),
                r.msgs.to_string(),
                format!("{:.6}", r.elapsed_s),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::InvalidInput(format!("cannot write trace: {e}")))
    }

    /// First iteration whose objective gap is at most `tol`.
    pub fn iters_to_gap(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.obj_gap.is_some_and(|g| g <= tol))
            .map(|r| r.iter)
    }
}

/// Iterate `k` of a run: `x^k`, `z^k` and `g(z^k) - g(z^{k-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub g_change: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: SolverTrace,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub alpha: f64,
    pub converged: bool,
    /// Present when `record_history` is set; entry `k` is iterate `k`.
    pub history: Option<Vec<IterState>>,
}

/// Output of one outer iteration: the `z` increment and the `x` increment.
pub(crate) struct Update {
    pub dz: Vec<f64>,
    pub dx: Vec<f64>,
}

/// Runs the common outer loop. `step` maps `(x, L grad f(x))` to the
/// iterate update; `rounds` is the number of communication rounds it uses.
pub(crate) fn drive<F>(
    p: &DispatchProblem,
    l: &WeightedLaplacian,
    z0: &[f64],
    alpha: f64,
    opts: &RunOptions,
    rounds: usize,
    mut step: F,
) -> Result<RunResult>
where
    F: FnMut(&[f64], &DVector<f64>) -> Result<Update>,
{
    if p.boxes.is_some() {
        return invalid("discrete-time runs take instances without box limits");
    }
    if l.n() != p.n() || z0.len() != p.n() {
        return invalid(format!("instance has {} agents, Laplacian {}", p.n(), l.n()));
    }
    let start = Instant::now();
    let mut x: Vec<f64> = (DVector::from_column_slice(&p.x0) + l.apply(&DVector::from_column_slice(z0)))
        .as_slice()
        .to_vec();
    let mut z = z0.to_vec();
    let mut f_cur = p.f(&x);
    let mut records = Vec::new();
    let mut history = opts.record_history.then(|| {
        vec![IterState {
            x: x.clone(),
            z: z.clone(),
            g_change: 0.0,
        }]
    });
    let mut rises = 0;
    let mut msgs = 0;
    let mut converged = false;
    for k in 0..=opts.max_iters {
        let y = l.apply(&DVector::from_vec(p.grad(&x)));
        let grad_norm = y.amax();
        records.push(TraceRecord {
            iter: k,
            obj_gap: opts.f_star.map(|fs| f_cur - fs),
            grad_norm,
            feas_err: (x.iter().sum::<f64>() - p.d).abs(),
            msgs,
            elapsed_s: if opts.timing { start.elapsed().as_secs_f64() } else { 0.0 },
        });
        if grad_norm <= opts.tol {
            converged = true;
            break;
        }
        if k == opts.max_iters {
            break;
        }
        let up = step(&x, &y)?;
        let change = p.increment(&x, &up.dx);
        if !change.is_finite() {
            return Err(Error::StepSizeTooLarge(rises + 1));
        }
        rises = if change > 0.0 { rises + 1 } else { 0 };
        if rises >= DIVERGENCE_WINDOW {
            return Err(Error::StepSizeTooLarge(rises));
        }
        for (xi, di) in x.iter_mut().zip(&up.dx) {
            *xi += di;
        }
        for (zi, di) in z.iter_mut().zip(&up.dz) {
            *zi += di;
        }
        f_cur += change;
        msgs += rounds;
        if let Some(h) = history.as_mut() {
            h.push(IterState {
                x: x.clone(),
                z: z.clone(),
                g_change: change,
            });
        }
    }
    Ok(RunResult {
        trace: SolverTrace { records },
        x,
        z,
        alpha,
        converged,
        history,
    })
}

/// One-hop rounds per outer iteration: the gradient exchange, two rounds
/// per Neumann term, and the final exchange of the accumulated direction.
pub fn rounds_per_iteration(q: usize) -> usize {
    2 * q + 2
}

/// Matrix-vector form of the iteration, starting from `z = 0`.
pub fn run_matrix_form(p: &DispatchProblem, l: &WeightedLaplacian, cfg: &DanaDConfig) -> Result<RunResult> {
    run_matrix_form_from(p, l, cfg, &vec![0.0; p.n()])
}

/// Matrix-vector form starting from an arbitrary `z0`.
pub fn run_matrix_form_from(
    p: &DispatchProblem,
    l: &WeightedLaplacian,
    cfg: &DanaDConfig,
    z0: &[f64],
) -> Result<RunResult> {
    let alpha = cfg.alpha(p, l)?;
    let q = cfg.q;
    drive(p, l, z0, alpha, &cfg.run, rounds_per_iteration(q), |x, y| {
        let h = p.hess(x);
        let acc = accumulate(l, &h, y.clone(), q);
        let lz = l.apply(&acc);
        Ok(Update {
            dz: acc.iter().map(|v| alpha * v).collect(),
            dx: lz.iter().map(|v| alpha * v).collect(),
        })
    })
}

/// Per-agent locals of the synchronous simulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Running sum of the Neumann terms (negated).
    pub z: f64,
    pub w: f64,
    pub p: usize,
    /// Curvature evaluated at the start of the outer iteration.
    pub h: f64,
}

/// Message exchange with locality enforcement. Each round, every agent
/// posts one value; reads are allowed only from agents within two hops.
#[derive(Debug, Clone)]
pub struct Network {
    allowed: Vec<BTreeSet<usize>>,
    posted: Vec<f64>,
    rounds: usize,
    reads: usize,
    breaches: usize,
}

impl Network {
    pub fn new(l: &WeightedLaplacian) -> Self {
        let g = l.graph();
        let allowed = (0..g.n())
            .map(|i| {
                let mut s = khop_neighbors(g, i, 2);
                s.insert(i);
                s
            })
            .collect();
        Network {
            allowed,
            posted: vec![0.0; g.n()],
            rounds: 0,
            reads: 0,
            breaches: 0,
        }
    }

    /// Starts a round: the posted values become visible to readers.
    pub fn broadcast(&mut self, values: impl IntoIterator<Item = f64>) {
        for (slot, v) in self.posted.iter_mut().zip(values) {
            *slot = v;
        }
        self.rounds += 1;
    }

    /// Value posted by `sender` in the current round, as seen by `reader`.
    pub fn read(&mut self, reader: usize, sender: usize) -> Result<f64> {
        self.reads += 1;
        if !self.allowed[reader].contains(&sender) {
            self.breaches += 1;
            return Err(Error::LocalityBreach { reader, sender });
        }
        Ok(self.posted[sender])
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn reads(&self) -> usize {
        self.reads
    }

    pub fn breaches(&self) -> usize {
        self.breaches
    }
}

/// `row_i . v` with `v` gathered through the network.
fn gather_dot(net: &mut Network, l: &WeightedLaplacian, i: usize, buf: &mut Vec<f64>) -> Result<f64> {
    let row = l.row(i);
    buf.clear();
    for &(j, _) in row {
        buf.push(net.read(i, j)?);
    }
    let mut acc = 0.0;
    for (&(_, lij), v) in row.iter().zip(buf.iter()) {
        acc += lij * v;
    }
    Ok(acc)
}

/// Communication statistics of a simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    /// Rounds spent computing the direction in each outer iteration.
    pub direction_rounds: Vec<usize>,
    /// Rounds spent exchanging the direction before the `x` update.
    pub step_rounds: Vec<usize>,
    pub reads: usize,
    pub breaches: usize,
}

#[derive(Debug, Clone)]
pub struct AgentRun {
    pub result: RunResult,
    pub agents: Vec<AgentState>,
    pub rounds: RoundLog,
}

/// Synchronous per-agent simulation. Each agent holds only its own cost,
/// its row of `L` and the values it reads from the network.
pub fn run_message_passing(p: &DispatchProblem, l: &WeightedLaplacian, cfg: &DanaDConfig) -> Result<AgentRun> {
    let alpha = cfg.alpha(p, l)?;
    let n = p.n();
    let q = cfg.q;
    let mut net = Network::new(l);
    let mut agents: Vec<AgentState> = p.x0.iter().map(|&x| AgentState { x, ..Default::default() }).collect();
    let mut direction_rounds = Vec::new();
    let mut step_rounds = Vec::new();
    let mut buf = Vec::new();
    let result = drive(p, l, &vec![0.0; n], alpha, &cfg.run, rounds_per_iteration(q), |x, _| {
        for (a, &xi) in agents.iter_mut().zip(x) {
            a.x = xi;
        }
        let r0 = net.rounds();
        let grads: Vec<f64> = (0..n).map(|i| p.costs[i].grad(agents[i].x)).collect();
        for (a, c) in agents.iter_mut().zip(&p.costs) {
            a.h = c.hess(a.x);
        }
        net.broadcast(grads);
        for i in 0..n {
            let y = gather_dot(&mut net, l, i, &mut buf)?;
            let a = &mut agents[i];
            a.y = y;
            a.z = -y;
            a.p = 1;
        }
        while agents.iter().all(|a| a.p <= q) {
            net.broadcast(agents.iter().map(|a| a.y));
            for i in 0..n {
                let ly = gather_dot(&mut net, l, i, &mut buf)?;
                agents[i].w = agents[i].h * ly;
            }
            net.broadcast(agents.iter().map(|a| a.w));
            for i in 0..n {
                let lr = gather_dot(&mut net, l, i, &mut buf)?;
                let a = &mut agents[i];
                a.w = a.y - lr;
                a.y = a.w;
                a.z -= a.y;
                a.p += 1;
            }
        }
        let r1 = net.rounds();
        net.broadcast(agents.iter().map(|a| a.z));
        let mut dx = Vec::with_capacity(n);
        for i in 0..n {
            dx.push(alpha * gather_dot(&mut net, l, i, &mut buf)?);
        }
        direction_rounds.push(r1 - r0);
        step_rounds.push(net.rounds() - r1);
        Ok(Update {
            dz: agents.iter().map(|a| alpha * a.z).collect(),
            dx,
        })
    })?;
    for (a, &xi) in agents.iter_mut().zip(&result.x) {
        a.x = xi;
    }
    Ok(AgentRun {
        result,
        agents,
        rounds: RoundLog {
            direction_rounds,
            step_rounds,
            reads: net.reads(),
            breaches: net.breaches(),
        },
    })
}
