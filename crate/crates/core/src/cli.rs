//! Command-line experiment runner: instance generation, weight design,
//! Table-1 statistics, solver runs and oracles.
//!
//! Every subcommand reads an optional JSON config; flags given on the
//! command line take precedence over config entries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dana_c::{integrate, integrate_robust, DanaCConfig, FlowOracle, FlowRun, Perturbation, RobustConfig, SaddleState};
use crate::dana_d::{run_matrix_form, run_message_passing, DanaDConfig, RunOptions, StepPolicy};
use crate::error::{invalid, Error, Result};
use crate::graph::{random_connected, unweighted_laplacian, GraphFile, GraphTopology, WeightedLaplacian};
use crate::problem::{
    random_instance, three_node_initial_duals, three_node_instance, CostDistribution, DispatchProblem, InstanceFile,
};
use crate::reference::{run_dgd, solve_box, solve_equality, OracleFile, OracleSolution};
use crate::weight_design::{design, post_scale, solve_p5, BoundsMode, LowerBoundSupport};

#[derive(Debug, Parser)]
#[command(name = "dana", version, about = "Distributed approximate Newton experiments")]
pub struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config; command-line flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Design Laplacian weights for a random graph and instance.
    Design(DesignArgs),
    /// Mean and spread of the designed metric and its gap to the lower bound.
    Table1(Table1Args),
    /// Run a solver and write its trace.
    Run(RunArgs),
    /// Solve an instance exactly.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    /// Quadratic, curvature uniform on [0.8, 1.2].
    Tight,
    /// Quadratic, curvature uniform on [0.2, 5].
    Wide,
    /// Quadratic plus a sinusoid.
    Sinusoid,
    /// Quadratic with box limits.
    Boxed,
}

impl CostKind {
    pub fn distribution(self) -> CostDistribution {
        match self {
            CostKind::Tight => CostDistribution::tight(),
            CostKind::Wide => CostDistribution::wide(),
            CostKind::Sinusoid => CostDistribution::sinusoid(),
            CostKind::Boxed => CostDistribution::boxed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Three agents on a path with box limits and fixed initial duals.
    ThreeNode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    DanaD,
    DanaDAgents,
    DanaC,
    DanaCRobust,
    Dgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Convex design followed by post-scaling.
    Designed,
    /// Unit weights followed by post-scaling.
    Unweighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    OneHop,
    TwoHop,
}

impl From<Support> for LowerBoundSupport {
    fn from(s: Support) -> Self {
        match s {
            Support::OneHop => LowerBoundSupport::OneHop,
            Support::TwoHop => LowerBoundSupport::TwoHop,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum)]
    pub cost: Option<CostKind>,
    /// Also design against the network-wide curvature bounds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub global_bounds: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Args {
    /// Rows as `NxM`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub rows: Option<Vec<String>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, value_enum)]
    pub cost: Option<CostKind>,
    /// Support of the lower-bound matrix.
    #[arg(long, value_enum)]
    pub support: Option<Support>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    /// Instance JSON; generated from `--n`, `--m`, `--cost` when absent.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Laplacian JSON; designed for the instance when absent.
    #[arg(long)]
    pub laplacian: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum)]
    pub cost: Option<CostKind>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, value_enum)]
    pub weights: Option<Weighting>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub global_bounds: Option<bool>,
    /// Truncation orders, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub q: Option<Vec<usize>>,
    /// Explicit step size for the discrete-time methods.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Fraction of the largest admissible step.
    #[arg(long)]
    pub step_fraction: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
    /// Integration step of the continuous-time methods.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Initial duals `[lower; upper]`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambda0: Option<Vec<f64>>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Perturbations as `t:amplitude`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub perturbations: Option<Vec<Perturbation>>,
    /// Starting allocation drawn uniformly from `lo,hi` for the robust flow.
    #[arg(long, value_delimiter = ',')]
    pub x_start_range: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleArgs {
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
}

macro_rules! prefer_flags {
    ($flags:expr, $file:expr, $($f:ident),+) => {
        $( if $flags.$f.is_none() { $flags.$f = $file.$f; } )+
    };
}

/// Validated settings shared by all subcommands.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
}

/// Splits a config file into the shared keys and the subcommand's keys.
fn read_config(path: &Path) -> Result<(Option<u64>, Option<PathBuf>, serde_json::Value)> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let mut v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    let Some(obj) = v.as_object_mut() else {
        return invalid(format!("{}: config must be a JSON object", path.display()));
    };
    let seed = match obj.remove("seed") {
        Some(s) => Some(s.as_u64().ok_or_else(|| Error::InvalidInput("seed must be a nonnegative integer".into()))?),
        None => None,
    };
    let out = match obj.remove("out") {
        Some(s) => Some(PathBuf::from(
            s.as_str().ok_or_else(|| Error::InvalidInput("out must be a string".into()))?,
        )),
        None => None,
    };
    Ok((seed, out, v))
}

fn from_value<T: for<'de> Deserialize<'de>>(v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::InvalidInput(format!("config: {e}")))
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let (file_seed, file_out, body) = match &cli.config {
        Some(p) => read_config(p)?,
        None => (None, None, serde_json::Value::Object(Default::default())),
    };
    let cfg = ExperimentConfig {
        seed: cli.seed.or(file_seed).unwrap_or(0),
        out: cli.out.or(file_out).unwrap_or_else(|| PathBuf::from("out")),
    };
    match cli.command {
        Command::Design(mut a) => {
            let f: DesignArgs = from_value(body)?;
            prefer_flags!(a, f, n, m, cost, global_bounds);
            cmd_design(&cfg, &a)
        }
        Command::Table1(mut a) => {
            let f: Table1Args = from_value(body)?;
            prefer_flags!(a, f, rows, trials, cost, support);
            cmd_table1(&cfg, &a)
        }
        Command::Run(mut a) => {
            let f: RunArgs = from_value(body)?;
            prefer_flags!(
                a, f, algo, instance, laplacian, n, m, cost, preset, weights, global_bounds, q, alpha, step_fraction,
                max_iters, tol, timing, h, horizon, record_every, lambda0, rho, kappa, perturbations, x_start_range
            );
            cmd_run(&cfg, &a)
        }
        Command::Oracle(mut a) => {
            let f: OracleArgs = from_value(body)?;
            prefer_flags!(a, f, instance, preset);
            cmd_oracle(&cfg, &a)
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    Ok(&cfg.out)
}

/// Writes `l` and checks that it loads back as a valid Laplacian.
fn write_laplacian(path: &Path, l: &WeightedLaplacian) -> Result<()> {
    write_json(path, &GraphFile::from_laplacian(l))?;
    let back: GraphFile = read_json(path)?;
    let lb = back.laplacian()?;
    lb.validate()?;
    if lb.weights() != l.weights() {
        return Err(Error::StateCorruption(format!("{} did not round-trip", path.display())));
    }
    Ok(())
}

fn sub_seed(base: u64, stream: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

#[derive(Debug, Serialize)]
struct DesignReport {
    n: usize,
    m: usize,
    cost: CostKind,
    seed: u64,
    epsilon: f64,
    mu_min: f64,
    mu_max: f64,
    beta: f64,
    epsilon_pre_scale: f64,
    eps_minus: f64,
    eps_plus: f64,
    iterations: usize,
    min_block_eig: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_global: Option<f64>,
}

fn cmd_design(cfg: &ExperimentConfig, a: &DesignArgs) -> Result<()> {
    let (Some(n), Some(m)) = (a.n, a.m) else {
        return invalid("design needs --n and --m");
    };
    let cost = a.cost.unwrap_or(CostKind::Tight);
    let g = random_connected(n, m, sub_seed(cfg.seed, 1))?;
    let p = random_instance(n, &cost.distribution(), sub_seed(cfg.seed, 2))?;
    let res = design(&g, &p.delta(), &p.big_delta(), BoundsMode::Local)?;
    let p4 = res.p4.as_ref().expect("design records the surrogate solution");
    let epsilon_global = if a.global_bounds.unwrap_or(false) {
        let gres = design(&g, &p.delta(), &p.big_delta(), BoundsMode::Global)?;
        if gres.eps.value < res.eps.value {
            eprintln!(
                "note: global-bound design eps {:.6} is below the local-bound eps {:.6}",
                gres.eps.value, res.eps.value
            );
        }
        Some(gres.eps.value)
    } else {
        None
    };
    let dir = out_dir(cfg)?;
    write_json(&dir.join("instance.json"), &InstanceFile::from_problem(&p))?;
    write_laplacian(&dir.join("laplacian.json"), &res.l_star)?;
    let report = DesignReport {
        n,
        m,
        cost,
        seed: cfg.seed,
        epsilon: res.eps.value,
        mu_min: res.eps.mu_min,
        mu_max: res.eps.mu_max,
        beta: res.beta,
        epsilon_pre_scale: res.eps_pre.value,
        eps_minus: p4.eps_minus,
        eps_plus: p4.eps_plus,
        iterations: p4.diagnostics.iterations,
        min_block_eig: p4.diagnostics.min_block_eig,
        epsilon_global,
    };
    write_json(&dir.join("design.json"), &report)?;
    print!("n={n} m={m} epsilon={:.6} beta={:.6}", res.eps.value, res.beta);
    if let Some(e) = epsilon_global {
        print!(" epsilon_global={e:.6}");
    }
    println!();
    Ok(())
}

fn parse_row(s: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| t.trim().parse::<usize>().ok();
    match s.split_once(['x', 'X']) {
        Some((a, b)) => match (parse(a), parse(b)) {
            (Some(n), Some(m)) => Ok((n, m)),
            _ => invalid(format!("row `{s}` is not of the form NxM")),
        },
        None => invalid(format!("row `{s}` is not of the form NxM")),
    }
}

/// Statistics of one Table-1 row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowStats {
    pub n: usize,
    pub m: usize,
    pub trials: usize,
    pub mean_eps: f64,
    pub std_eps: f64,
    pub mean_gap: f64,
    pub std_gap: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Designed metric and lower bound for each trial of a row, fanned out over
/// a worker pool; results are in trial order.
pub fn table1_row(
    n: usize,
    m: usize,
    trials: usize,
    dist: &CostDistribution,
    support: LowerBoundSupport,
    seed: u64,
) -> Result<(RowStats, Vec<(f64, f64)>)> {
    if trials < 2 {
        return invalid("table1 needs at least two trials");
    }
    let per: Vec<Result<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let s = sub_seed(seed, t as u64 + 1);
            let g = random_connected(n, m, s)?;
            let p = random_instance(n, dist, s ^ 0x5555)?;
            let d = design(&g, &p.delta(), &p.big_delta(), BoundsMode::Local)?;
            let lb = solve_p5(&g, support)?;
            Ok((d.eps.value, lb.eps_a))
        })
        .collect();
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let eps: Vec<f64> = per.iter().map(|v| v.0).collect();
    let gap: Vec<f64> = per.iter().map(|v| v.0 - v.1).collect();
    let (mean_eps, std_eps) = mean_std(&eps);
    let (mean_gap, std_gap) = mean_std(&gap);
    Ok((
        RowStats {
            n,
            m,
            trials,
            mean_eps,
            std_eps,
            mean_gap,
            std_gap,
        },
        per,
    ))
}

fn cmd_table1(cfg: &ExperimentConfig, a: &Table1Args) -> Result<()> {
    let trials = a.trials.unwrap_or(20);
    if trials < 2 {
        return invalid("table1 needs --trials >= 2");
    }
    let rows = match &a.rows {
        Some(r) => r.iter().map(|s| parse_row(s)).collect::<Result<Vec<_>>>()?,
        None => vec![(10, 30), (30, 90), (30, 144)],
    };
    let cost = a.cost.unwrap_or(CostKind::Tight);
    let support = a.support.unwrap_or(Support::OneHop).into();
    let dir = out_dir(cfg)?;
    let path = dir.join("table1.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    let tpath = dir.join("table1_trials.csv");
    let mut tw = csv::Writer::from_path(&tpath).map_err(|e| io_err(&tpath, e))?;
    tw.write_record(["n", "m", "trial", "eps_l", "eps_a"]).map_err(|e| io_err(&tpath, e))?;
    for (k, &(n, m)) in rows.iter().enumerate() {
        let (stats, per) = table1_row(n, m, trials, &cost.distribution(), support, sub_seed(cfg.seed, 100 + k as u64))?;
        println!(
            "n={n} m={m} trials={trials} mean_eps={:.4} std_eps={:.4} mean_gap={:.4} std_gap={:.4}",
            stats.mean_eps, stats.std_eps, stats.mean_gap, stats.std_gap
        );
        w.serialize(&stats).map_err(|e| io_err(&path, e))?;
        for (t, (e, ea)) in per.iter().enumerate() {
            tw.write_record(&[n.to_string(), m.to_string(), t.to_string(), format!("{e:e}"), format!("{ea:e}")])
                .map_err(|e| io_err(&tpath, e))?;
        }
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    tw.flush().map_err(|e| io_err(&tpath, e))
}

/// Instance, Laplacian and optional initial duals for a run.
struct Setup {
    p: DispatchProblem,
    l: WeightedLaplacian,
    lambda0: Option<Vec<f64>>,
}

fn build_setup(cfg: &ExperimentConfig, a: &RunArgs, dir: &Path) -> Result<Setup> {
    let mut lambda0 = None;
    let (p, graph) = match (a.preset, &a.instance) {
        (Some(Preset::ThreeNode), _) => {
            let (lo, hi) = three_node_initial_duals();
            lambda0 = Some([lo, hi].concat());
            (three_node_instance(), Some(GraphTopology::path(3)))
        }
        (None, Some(path)) => (read_json::<InstanceFile>(path)?.problem()?, None),
        (None, None) => {
            let (Some(n), Some(m)) = (a.n, a.m) else {
                return invalid("run needs --instance or --n and --m");
            };
            let cost = a.cost.unwrap_or(CostKind::Sinusoid);
            let g = random_connected(n, m, sub_seed(cfg.seed, 1))?;
            let p = random_instance(n, &cost.distribution(), sub_seed(cfg.seed, 2))?;
            write_json(&dir.join("instance.json"), &InstanceFile::from_problem(&p))?;
            (p, Some(g))
        }
    };
    let l = match (&a.laplacian, graph) {
        (Some(path), _) => read_json::<GraphFile>(path)?.laplacian()?,
        (None, Some(g)) => {
            let mode = if a.global_bounds.unwrap_or(false) { BoundsMode::Global } else { BoundsMode::Local };
            let l = match a.weights.unwrap_or(Weighting::Designed) {
                Weighting::Designed => design(&g, &p.delta(), &p.big_delta(), mode)?.l_star,
                Weighting::Unweighted => {
                    let (lo, hi) = crate::weight_design::design_bounds(&p.delta(), &p.big_delta(), mode);
                    post_scale(&unweighted_laplacian(&g), &lo, &hi)?.l_star
                }
            };
            write_laplacian(&dir.join("laplacian.json"), &l)?;
            l
        }
        (None, None) => return invalid("--instance needs a matching --laplacian"),
    };
    l.validate()?;
    if l.n() != p.n() {
        return invalid(format!("instance has {} agents but the Laplacian has {}", p.n(), l.n()));
    }
    if let Some(l0) = a.lambda0.clone() {
        lambda0 = Some(l0);
    }
    Ok(Setup { p, l, lambda0 })
}

fn oracle_for(p: &DispatchProblem) -> Result<Option<OracleSolution>> {
    match (&p.boxes, p.is_quadratic()) {
        (None, _) => solve_equality(p).map(Some),
        (Some(_), true) => solve_box(p).map(Some),
        (Some(_), false) => Ok(None),
    }
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f(&mut file)?;
    file.flush().map_err(|e| io_err(path, e))
}

fn cmd_run(cfg: &ExperimentConfig, a: &RunArgs) -> Result<()> {
    let Some(algo) = a.algo else {
        return invalid("run needs --algo");
    };
    let dir = out_dir(cfg)?.to_path_buf();
    let setup = build_setup(cfg, a, &dir)?;
    let (p, l) = (&setup.p, &setup.l);
    let qs = a.q.clone().unwrap_or_else(|| vec![0]);
    let name = algo.to_possible_value().expect("no skipped variants").get_name().to_string();
    let oracle = oracle_for(p)?;
    match algo {
        Algo::DanaD | Algo::DanaDAgents | Algo::Dgd => {
            let run_opts = RunOptions {
                max_iters: a.max_iters.unwrap_or(100_000),
                tol: a.tol.unwrap_or(1e-10),
                f_star: oracle.as_ref().map(|o| o.f_star(p)),
                record_history: false,
                timing: a.timing.unwrap_or(false),
            };
            let step = match a.alpha {
                Some(alpha) => StepPolicy::Fixed(alpha),
                None => StepPolicy::Theorem1(a.step_fraction.unwrap_or(0.99)),
            };
            let qs = if algo == Algo::Dgd { vec![0] } else { qs };
            for q in qs {
                let dcfg = DanaDConfig {
                    q,
                    step,
                    epsilon: None,
                    run: run_opts.clone(),
                };
                let (res, extra) = match algo {
                    Algo::DanaD => (run_matrix_form(p, l, &dcfg)?, String::new()),
                    Algo::DanaDAgents => {
                        let r = run_message_passing(p, l, &dcfg)?;
                        let extra = format!(
                            " rounds_per_direction={} reads={} breaches={}",
                            r.rounds.direction_rounds.first().copied().unwrap_or(0),
                            r.rounds.reads,
                            r.rounds.breaches
                        );
                        (r.result, extra)
                    }
                    _ => {
                        let alpha = dcfg.alpha(p, l)?;
                        (run_dgd(p, l, alpha, &run_opts)?, String::new())
                    }
                };
                let path = dir.join(format!("trace_{name}_q{q}.csv"));
                write_csv_file(&path, |f| res.trace.write_csv(f))?;
                let last = res.trace.records.last().expect("traces hold the initial point");
                let to_gap = res
                    .trace
                    .iters_to_gap(1e-6)
                    .map(|k| k.to_string())
                    .unwrap_or_else(|| "none".into());
                println!(
                    "algo={name} q={q} alpha={:.6e} iters={} converged={} iters_to_gap_1e-6={to_gap} grad_norm={:.3e}{extra}",
                    res.alpha, last.iter, res.converged, last.grad_norm
                );
            }
        }
        Algo::DanaC => {
            let n = p.n();
            let lambda0 = setup.lambda0.clone().unwrap_or_else(|| vec![0.0; 2 * n]);
            let init = SaddleState::new(vec![0.0; n], lambda0)?;
            let flow_oracle = match &oracle {
                Some(o) => Some(FlowOracle::new(p, l, o, &init.z)?),
                None => None,
            };
            for q in qs {
                let ccfg = DanaCConfig {
                    q,
                    h: a.h.unwrap_or(1e-3),
                    horizon: a.horizon.unwrap_or(50.0),
                    record_every: a.record_every.unwrap_or(100),
                };
                let run = integrate(p, l, &ccfg, &init, flow_oracle.as_ref())?;
                let path = dir.join(format!("trace_{name}_q{q}.csv"));
                write_csv_file(&path, |f| run.trace.write_csv(f))?;
                report_flow(&name, q, &run);
            }
        }
        Algo::DanaCRobust => {
            let n = p.n();
            let d_bar = vec![p.d / n as f64; n];
            let x_start = match &a.x_start_range {
                Some(r) if r.len() == 2 && r[0] < r[1] => {
                    use rand::{Rng, SeedableRng};
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, 3));
                    Some((0..n).map(|_| rng.gen_range(r[0]..r[1])).collect())
                }
                Some(_) => return invalid("x_start_range must be `lo,hi` with lo < hi"),
                None => None,
            };
            let perturbations = a.perturbations.clone().unwrap_or_default();
            for q in qs {
                let rcfg = RobustConfig {
                    q,
                    h: a.h.unwrap_or(1e-3),
                    horizon: a.horizon.unwrap_or(100.0),
                    record_every: a.record_every.unwrap_or(100),
                    rho: a.rho.unwrap_or(100.0),
                    kappa: a.kappa.unwrap_or(2500.0),
                    seed: sub_seed(cfg.seed, 4),
                    x_start: x_start.clone(),
                };
                let run = integrate_robust(p, l, &d_bar, &rcfg, &perturbations, oracle.as_ref())?;
                let path = dir.join(format!("trace_{name}_q{q}.csv"));
                write_csv_file(&path, |f| run.trace.write_csv(f))?;
                let last = run.trace.records.last().expect("traces hold the initial point");
                println!(
                    "algo={name} q={q} t={} equality_violation={:.3e} primal_err={}",
                    last.t,
                    last.feas_sum,
                    last.primal_err.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "n/a".into())
                );
            }
        }
    }
    Ok(())
}

fn report_flow(name: &str, q: usize, run: &FlowRun) {
    let k = run.kkt;
    let settle = run
        .trace
        .settle_time(1e-4)
        .map(|t| format!("{t}"))
        .unwrap_or_else(|| "none".into());
    println!(
        "algo={name} q={q} t={} stationarity={:.3e} primal={:.3e} dual={:.3e} compslack={:.3e} settle_1e-4={settle} vq_violations={}",
        run.state.t, k.stationarity, k.primal, k.dual, k.compslack, run.vq_violations
    );
}

fn cmd_oracle(cfg: &ExperimentConfig, a: &OracleArgs) -> Result<()> {
    let p = match (a.preset, &a.instance) {
        (Some(Preset::ThreeNode), _) => three_node_instance(),
        (None, Some(path)) => read_json::<InstanceFile>(path)?.problem()?,
        (None, None) => return invalid("oracle needs --instance or --preset"),
    };
    let sol = match &p.boxes {
        Some(_) => solve_box(&p)?,
        None => solve_equality(&p)?,
    };
    let dir = out_dir(cfg)?;
    write_json(&dir.join("oracle.json"), &OracleFile::from(&sol))?;
    println!(
        "nu={:.9} f={:.9} kkt_residual={:.3e}",
        sol.nu_star,
        sol.f_star(&p),
        sol.kkt_residual(&p)
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(dir: &Path, args: &[&str]) -> i32 {
        let mut v = vec!["dana".to_string()];
        v.extend(args.iter().map(|s| s.to_string()));
        v.push("--out".into());
        v.push(dir.display().to_string());
        main_with_args(v)
    }

    #[test]
    fn design_writes_valid_outputs() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_in(dir.path(), &["design", "--n", "10", "--m", "30", "--cost", "tight", "--seed", "1"]), 0);
        let rep: serde_json::Value = read_json(&dir.path().join("design.json")).unwrap();
        assert!(rep["epsilon"].as_f64().unwrap() < 1.0);
        let l: GraphFile = read_json(&dir.path().join("laplacian.json")).unwrap();
        l.laplacian().unwrap().validate().unwrap();
    }

    #[test]
    fn design_records_global_metric() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_in(dir.path(), &["design", "--n", "8", "--m", "14", "--cost", "wide", "--global-bounds"]);
        assert_eq!(code, 0);
        let rep: serde_json::Value = read_json(&dir.path().join("design.json")).unwrap();
        assert!(rep["epsilon_global"].as_f64().is_some());
    }

    #[test]
    fn usage_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_in(dir.path(), &["design", "--n", "10"]), 2);
        assert_eq!(run_in(dir.path(), &["table1", "--trials", "1"]), 2);
        assert_eq!(run_in(dir.path(), &["bogus"]), 2);
    }

    #[test]
    fn config_rejects_unknown_keys_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let cfgp = dir.path().join("c.json");
        fs::write(&cfgp, r#"{"n": 6, "m": 8, "colour": 1}"#).unwrap();
        assert_eq!(run_in(dir.path(), &["design", "--config", cfgp.to_str().unwrap()]), 2);
        fs::write(&cfgp, r#"{"n": 6, "m": 100, "seed": 3}"#).unwrap();
        assert_eq!(run_in(dir.path(), &["design", "--config", cfgp.to_str().unwrap(), "--m", "8"]), 0);
        let rep: serde_json::Value = read_json(&dir.path().join("design.json")).unwrap();
        assert_eq!(rep["m"], 8);
        assert_eq!(rep["seed"], 3);
    }

    #[test]
    fn run_outputs_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let args = ["run", "--algo", "dana-d", "--n", "8", "--m", "14", "--q", "0,2", "--seed", "4"];
        assert_eq!(run_in(a.path(), &args), 0);
        assert_eq!(run_in(b.path(), &args), 0);
        for f in ["trace_dana-d_q0.csv", "trace_dana-d_q2.csv", "laplacian.json", "instance.json"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn dgd_and_q0_traces_coincide() {
        let dir = tempfile::tempdir().unwrap();
        let base = ["--n", "8", "--m", "14", "--seed", "2", "--max-iters", "300"];
        let mut a = vec!["run", "--algo", "dana-d"];
        a.extend(base);
        let mut b = vec!["run", "--algo", "dgd"];
        b.extend(base);
        assert_eq!(run_in(dir.path(), &a), 0);
        assert_eq!(run_in(dir.path(), &b), 0);
        assert_eq!(
            fs::read(dir.path().join("trace_dana-d_q0.csv")).unwrap(),
            fs::read(dir.path().join("trace_dgd_q0.csv")).unwrap()
        );
    }

    #[test]
    fn dimension_mismatch_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_in(dir.path(), &["design", "--n", "6", "--m", "8"]), 0);
        let inst = dir.path().join("instance.json");
        let other = tempfile::tempdir().unwrap();
        assert_eq!(run_in(other.path(), &["design", "--n", "7", "--m", "9"]), 0);
        let lap = other.path().join("laplacian.json");
        let code = run_in(
            dir.path(),
            &["run", "--algo", "dana-d", "--instance", inst.to_str().unwrap(), "--laplacian", lap.to_str().unwrap()],
        );
        assert_eq!(code, 2);
    }

    #[test]
    fn three_node_flow_and_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_in(
            dir.path(),
            &["run", "--algo", "dana-c", "--preset", "three-node", "--q", "3", "--horizon", "5"],
        );
        assert_eq!(code, 0);
        assert_eq!(run_in(dir.path(), &["oracle", "--preset", "three-node"]), 0);
        let o: OracleFile = read_json(&dir.path().join("oracle.json")).unwrap();
        assert!((o.nu_star - 5.75).abs() < 1e-12);
        let trace = fs::read_to_string(dir.path().join("trace_dana-c_q3.csv")).unwrap();
        assert!(trace.starts_with("t,primal_err,dual_err,V_Q,obj_gap,feas_box,feas_sum,compslack\n"));
    }

    #[test]
    fn rows_parse() {
        assert_eq!(parse_row("10x30").unwrap(), (10, 30));
        assert!(parse_row("10-30").is_err());
    }

    #[test]
    fn table1_small_run() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run_in(dir.path(), &["table1", "--rows", "6x9", "--trials", "3", "--seed", "5"]), 0);
        let text = fs::read_to_string(dir.path().join("table1.csv")).unwrap();
        assert!(text.starts_with("n,m,trials,mean_eps,std_eps,mean_gap,std_gap\n6,9,3,"));
    }
}
