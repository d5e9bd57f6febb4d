//! Acceptance suite. Prints one `criterion N: PASS|FAIL` line per
//! criterion with the measured quantities and exits nonzero if any fails.

use std::time::Instant;

use dana::cli::table1_row;
use dana::dana_c::{integrate, integrate_robust, DanaCConfig, FlowOracle, Perturbation, RobustConfig, SaddleState};
use dana::dana_d::{
    newton_direction, rate_bound_thm2, resolve_eps, run_matrix_form, run_message_passing, step_bound_thm1,
    DanaDConfig, RunOptions, StepPolicy,
};
use dana::graph::{random_connected, unweighted_laplacian, GraphTopology, WeightedLaplacian};
use dana::problem::{
    random_instance, three_node_initial_duals, three_node_instance, CostDistribution, DispatchProblem,
};
use dana::reduction::epsilon_of;
use dana::reference::{run_dgd, solve_box, solve_box_qp_bruteforce, solve_equality, solve_equality_qp};
use dana::weight_design::{design, post_scale, BoundsMode, LowerBoundSupport};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn report(k: usize, pass: bool, detail: String) {
    println!("criterion {k}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

/// A connected random graph with `n` nodes and about `per_node * n` edges.
fn graph(n: usize, per_node: f64, seed: u64) -> GraphTopology {
    let max = n * (n - 1) / 2;
    let m = ((per_node * n as f64) as usize).clamp(n - 1, max);
    random_connected(n, m, seed).unwrap()
}

fn designed(g: &GraphTopology, p: &DispatchProblem) -> WeightedLaplacian {
    design(g, &p.delta(), &p.big_delta(), BoundsMode::Local).unwrap().l_star
}

fn history_opts(max_iters: usize) -> RunOptions {
    RunOptions {
        max_iters,
        record_history: true,
        ..RunOptions::default()
    }
}

fn criterion_01_conservation() -> bool {
    let start = Instant::now();
    let worst: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            let n = rng.gen_range(5..=30);
            let q = rng.gen_range(0..=3);
            let dist = if s % 2 == 0 { CostDistribution::sinusoid() } else { CostDistribution::wide() };
            let p = random_instance(n, &dist, s).unwrap();
            let l = designed(&graph(n, 3.0, s), &p);
            let mut cfg = DanaDConfig::new(q, StepPolicy::Theorem1(0.99));
            cfg.run = history_opts(400);
            let res = run_matrix_form(&p, &l, &cfg).unwrap();
            res.history
                .unwrap()
                .iter()
                .map(|st| (st.x.iter().sum::<f64>() - p.d).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let max = worst.iter().copied().fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let pass = max <= 1e-9 && secs < 30.0;
    report(1, pass, format!("50 runs, max |1'x - d| = {max:.2e}, {secs:.1} s"));
    pass
}

fn criterion_02_theorem1_descent() -> bool {
    let cases: Vec<(u64, bool)> = (0..20u64).flat_map(|s| [(s, false), (s, true)]).collect();
    let out: Vec<(usize, bool, usize)> = cases
        .par_iter()
        .map(|&(s, sinus)| {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + s);
            let n = rng.gen_range(5..=12);
            let q = (s % 4) as usize;
            let dist = if sinus { CostDistribution::sinusoid() } else { CostDistribution::wide() };
            let p = random_instance(n, &dist, 200 + s).unwrap();
            let l = designed(&graph(n, 2.0, 200 + s), &p);
            let mut cfg = DanaDConfig::new(q, StepPolicy::Theorem1(0.99));
            cfg.run = history_opts(500_000);
            let res = run_matrix_form(&p, &l, &cfg).unwrap();
            let h = res.history.unwrap();
            let rises = h.iter().skip(1).filter(|st| !(st.g_change < 0.0)).count();
            (rises, res.converged, h.len() - 1)
        })
        .collect();
    let rises: usize = out.iter().map(|o| o.0).sum();
    let unconverged = out.iter().filter(|o| !o.1).count();
    let max_iters = out.iter().map(|o| o.2).max().unwrap();
    let pass = rises == 0 && unconverged == 0;
    report(
        2,
        pass,
        format!("40 runs, {rises} non-decreasing steps, {unconverged} unconverged, longest run {max_iters} iterations"),
    );
    pass
}

fn criterion_03_theorem2_rate() -> bool {
    let cases: Vec<(u64, usize)> = (0..20u64).flat_map(|s| (0..3).map(move |q| (s, q))).collect();
    let out: Vec<(usize, f64)> = cases
        .par_iter()
        .map(|&(s, q)| {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + s);
            let n = rng.gen_range(5..=12);
            let p = random_instance(n, &CostDistribution::wide(), 300 + s).unwrap();
            let l = designed(&graph(n, 2.0, 300 + s), &p);
            let eps = resolve_eps(None, &p, &l).unwrap();
            let z_star = solve_equality_qp(&p).unwrap().z_star(&p, &l, 0.0).unwrap();
            let mut cfg = DanaDConfig::new(q, StepPolicy::Theorem2);
            cfg.run = history_opts(200_000);
            let h = run_matrix_form(&p, &l, &cfg).unwrap().history.unwrap();
            let mut bad = 0;
            let mut slack = f64::INFINITY;
            for w in h.windows(2) {
                let dist = w[0].z.iter().zip(&z_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let bound = rate_bound_thm2(eps, n, q, dist).unwrap().1;
                slack = slack.min(bound + 1e-12 - w[1].g_change);
                if w[1].g_change > bound + 1e-12 {
                    bad += 1;
                }
            }
            (bad, slack)
        })
        .collect();
    let bad: usize = out.iter().map(|o| o.0).sum();
    let slack = out.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
    let pass = bad == 0;
    report(3, pass, format!("60 runs, {bad} steps above the certified decrease, min slack {slack:.2e}"));
    pass
}

fn criterion_04_neumann_accuracy() -> bool {
    let mut worst_excess = f64::NEG_INFINITY;
    let mut details = Vec::new();
    for s in 0..10u64 {
        let n = 8 + s as usize;
        let dist = if s % 2 == 0 { CostDistribution::wide() } else { CostDistribution::sinusoid() };
        let p = random_instance(n, &dist, 400 + s).unwrap();
        let g = graph(n, 2.5, 400 + s);
        let d = design(&g, &p.delta(), &p.big_delta(), BoundsMode::Local).unwrap();
        let l = d.l_star;
        let mut x = p.x0.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let shift: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = shift.iter().sum::<f64>() / n as f64;
        for (xi, si) in x.iter_mut().zip(&shift) {
            *xi += si - mean;
        }
        let h = p.eval_hess(&x).unwrap().h;
        let grad = p.eval_grad(&x).unwrap();
        // Exact reduced Newton step -L (L H L)^+ L grad via an SVD pseudo-inverse.
        let lm: DMatrix<f64> = l.matrix().matrix().clone();
        let lhl = &lm * DMatrix::from_diagonal(&DVector::from_column_slice(&h)) * &lm;
        let pinv = lhl.pseudo_inverse(1e-10).unwrap();
        let exact = -(&lm * pinv * &lm * DVector::from_column_slice(&grad));
        let errs: Vec<f64> = (0..=10)
            .map(|q| (newton_direction(&l, &h, &grad, q).unwrap() - &exact).norm())
            .collect();
        let (xs, ys): (Vec<f64>, Vec<f64>) = errs.iter().enumerate().map(|(q, e)| (q as f64, e.ln())).unzip();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = ys.iter().sum::<f64>() / ys.len() as f64;
        let slope = xs.iter().zip(&ys).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>()
            / xs.iter().map(|a| (a - xm).powi(2)).sum::<f64>();
        let ratio = slope.exp();
        worst_excess = worst_excess.max(ratio - (d.eps.value + 0.05));
        details.push(format!("{ratio:.3}/{:.3}", d.eps.value));
    }
    let pass = worst_excess <= 0.0;
    report(4, pass, format!("fitted ratio / eps per instance: {}", details.join(" ")));
    pass
}

fn criterion_05_design_soundness() -> bool {
    let out: Vec<(f64, f64)> = (0..200u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + s);
            let n = rng.gen_range(3..=30);
            let per = rng.gen_range(1.0..5.0);
            let dist = match s % 3 {
                0 => CostDistribution::tight(),
                1 => CostDistribution::wide(),
                _ => CostDistribution::sinusoid(),
            };
            let p = random_instance(n, &dist, 500 + s).unwrap();
            let d = design(&graph(n, per, 500 + s), &p.delta(), &p.big_delta(), BoundsMode::Local).unwrap();
            let e = epsilon_of(&d.l_star, &p.delta(), &p.big_delta()).unwrap();
            (e.value.max(d.eps.value), ((1.0 - e.mu_min) + (1.0 - e.mu_max)).abs())
        })
        .collect();
    let max_eps = out.iter().map(|o| o.0).fold(0.0, f64::max);
    let max_bal = out.iter().map(|o| o.1).fold(0.0, f64::max);
    let pass = max_eps < 1.0 && max_bal <= 1e-8;
    report(5, pass, format!("200 designs, max eps {max_eps:.4}, max balance error {max_bal:.2e}"));
    pass
}

fn criterion_06_table1() -> bool {
    let start = Instant::now();
    let dist = CostDistribution::tight();
    let (r10, _) = table1_row(10, 30, 20, &dist, LowerBoundSupport::OneHop, 101).unwrap();
    let (r90, _) = table1_row(30, 90, 20, &dist, LowerBoundSupport::OneHop, 102).unwrap();
    let (r144, _) = table1_row(30, 144, 20, &dist, LowerBoundSupport::OneHop, 103).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = (0.55..=0.75).contains(&r10.mean_eps)
        && (0.20..=0.35).contains(&r10.mean_gap)
        && r144.mean_eps < r90.mean_eps
        && secs < 600.0;
    report(
        6,
        pass,
        format!(
            "n=10 m=30 eps {:.4} +- {:.4} gap {:.4}; n=30 m=90 eps {:.4}; n=30 m=144 eps {:.4}; {secs:.1} s",
            r10.mean_eps, r10.std_eps, r10.mean_gap, r90.mean_eps, r144.mean_eps
        ),
    );
    pass
}

fn criterion_07_message_passing() -> bool {
    let cases: Vec<(u64, usize)> = (0..20u64).flat_map(|s| (0..4).map(move |q| (s, q))).collect();
    let out: Vec<(f64, usize, bool)> = cases
        .par_iter()
        .map(|&(s, q)| {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + s);
            let n = rng.gen_range(5..=20);
            let p = random_instance(n, &CostDistribution::sinusoid(), 700 + s).unwrap();
            let l = designed(&graph(n, 2.0, 700 + s), &p);
            let mut cfg = DanaDConfig::new(q, StepPolicy::Theorem1(0.99));
            cfg.run = history_opts(60);
            let m = run_matrix_form(&p, &l, &cfg).unwrap().history.unwrap();
            let a = run_message_passing(&p, &l, &cfg).unwrap();
            let ah = a.result.history.as_ref().unwrap();
            let mut diff: f64 = if ah.len() == m.len() { 0.0 } else { f64::INFINITY };
            for (u, v) in ah.iter().zip(&m) {
                for (p, r) in u.x.iter().zip(&v.x).chain(u.z.iter().zip(&v.z)) {
                    diff = diff.max((p - r).abs());
                }
            }
            let rounds_ok = !a.rounds.direction_rounds.is_empty()
                && a.rounds.direction_rounds.iter().all(|&r| r == 2 * q + 1);
            (diff, a.rounds.breaches, rounds_ok)
        })
        .collect();
    let diff = out.iter().map(|o| o.0).fold(0.0, f64::max);
    let breaches: usize = out.iter().map(|o| o.1).sum();
    let rounds_ok = out.iter().all(|o| o.2);
    let pass = diff <= 1e-12 && breaches == 0 && rounds_ok;
    report(
        7,
        pass,
        format!("80 runs, max deviation {diff:.2e}, {breaches} locality breaches, 2q+1 rounds per direction: {rounds_ok}"),
    );
    pass
}

fn criterion_08_continuous_time() -> bool {
    let p = three_node_instance();
    let l = designed(&GraphTopology::path(3), &p);
    let (lo, hi) = three_node_initial_duals();
    let init = SaddleState::new(vec![0.0; 3], [lo, hi].concat()).unwrap();
    let sol = solve_box_qp_bruteforce(&p).unwrap();
    let oracle = FlowOracle::new(&p, &l, &sol, &init.z).unwrap();
    let mut pass = true;
    let mut details = Vec::new();
    for q in 0..4 {
        let cfg = DanaCConfig {
            q,
            h: 1e-3,
            horizon: 50.0,
            record_every: 1000,
        };
        let run = integrate(&p, &l, &cfg, &init, Some(&oracle)).unwrap();
        let x_err = run.x.iter().zip(&sol.x_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let ok = run.kkt.max() <= 1e-5 && run.vq_violations == 0 && x_err <= 1e-5;
        pass &= ok;
        details.push(format!(
            "q={q} kkt {:.1e} (stat {:.1e} prim {:.1e} dual {:.1e} cs {:.1e}) |x-x*| {x_err:.1e} V_Q rises {}",
            run.kkt.max(),
            run.kkt.stationarity,
            run.kkt.primal,
            run.kkt.dual,
            run.kkt.compslack,
            run.vq_violations
        ));
    }
    report(8, pass, details.join("; "));
    pass
}

fn criterion_09_baseline_ordering() -> bool {
    let n = 30;
    let p = random_instance(n, &CostDistribution::sinusoid(), 9).unwrap();
    let g = random_connected(n, 90, 9).unwrap();
    let l_star = designed(&g, &p);
    let l_unw = post_scale(&unweighted_laplacian(&g), &p.delta(), &p.big_delta()).unwrap().l_star;
    let eps_star = resolve_eps(None, &p, &l_star).unwrap();
    let eps_unw = resolve_eps(None, &p, &l_unw).unwrap();
    let alpha = 0.99
        * step_bound_thm1(eps_star, n, 2)
            .unwrap()
            .min(step_bound_thm1(eps_star, n, 0).unwrap())
            .min(step_bound_thm1(eps_unw, n, 0).unwrap());
    let opts = RunOptions {
        max_iters: 400_000,
        tol: 1e-10,
        f_star: Some(solve_equality(&p).unwrap().f_star(&p)),
        ..RunOptions::default()
    };
    let mut cfg = DanaDConfig::new(0, StepPolicy::Fixed(alpha));
    cfg.run = opts.clone();
    let count = |r: dana::dana_d::RunResult| r.trace.iters_to_gap(1e-6);
    let q0 = count(run_matrix_form(&p, &l_star, &cfg).unwrap());
    cfg.q = 2;
    let q2 = count(run_matrix_form(&p, &l_star, &cfg).unwrap());
    let dgd_star = count(run_dgd(&p, &l_star, alpha, &opts).unwrap());
    let dgd_unw = count(run_dgd(&p, &l_unw, alpha, &opts).unwrap());
    let pass = match (q2, q0, dgd_star, dgd_unw) {
        (Some(a), Some(b), Some(c), Some(d)) => a < b && b == c && c <= d,
        _ => false,
    };
    report(
        9,
        pass,
        format!(
            "alpha {alpha:.4e}; iterations to gap 1e-6: q=2 {q2:?}, q=0 {q0:?}, DGD(L*) {dgd_star:?}, DGD(unweighted) {dgd_unw:?}"
        ),
    );
    pass
}

fn criterion_10_robust_recovery() -> bool {
    let n = 20;
    let p = random_instance(n, &CostDistribution::boxed(), 7).unwrap();
    let l = designed(&random_connected(n, 40, 7).unwrap(), &p);
    let sol = solve_box(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x_start: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..6.0)).collect();
    let injections = [25.0, 50.0, 75.0];
    let pert: Vec<Perturbation> = injections.iter().map(|&t| Perturbation { t, amplitude: 0.5 }).collect();
    let d_bar = vec![p.d / n as f64; n];
    let mut pass = true;
    let mut details = Vec::new();
    for q in 0..4 {
        let cfg = RobustConfig {
            q,
            x_start: Some(x_start.clone()),
            seed: 3,
            record_every: 10,
            ..RobustConfig::default()
        };
        let run = integrate_robust(&p, &l, &d_bar, &cfg, &pert, Some(&sol)).unwrap();
        let recs = &run.trace.records;
        let mut recover = Vec::new();
        for (k, &t0) in injections.iter().enumerate() {
            let t1 = injections.get(k + 1).copied().unwrap_or(cfg.horizon + 1.0);
            let win: Vec<_> = recs.iter().filter(|r| r.t > t0 && r.t < t1).collect();
            let back = win.iter().find(|r| r.feas_sum < 1e-4).map(|r| r.t - t0);
            pass &= back.is_some_and(|dt| dt <= 10.0);
            recover.push(back.map_or("never".to_string(), |dt| format!("{dt:.2}")));
            // Trend of the error to the optimizer: maxima over successive
            // five-unit blocks must fall.
            let blocks: Vec<f64> = (0..5)
                .map(|j| {
                    let (a, b) = (t0 + 5.0 * j as f64, t0 + 5.0 * (j + 1) as f64);
                    win.iter()
                        .filter(|r| r.t >= a && r.t < b)
                        .map(|r| r.primal_err.unwrap())
                        .fold(0.0, f64::max)
                })
                .collect();
            pass &= blocks.windows(2).all(|w| w[1] < w[0]);
        }
        details.push(format!("q={q} recovery times [{}]", recover.join(", ")));
    }
    report(10, pass, details.join("; "));
    pass
}

fn main() {
    let criteria: [fn() -> bool; 10] = [
        criterion_01_conservation,
        criterion_02_theorem1_descent,
        criterion_03_theorem2_rate,
        criterion_04_neumann_accuracy,
        criterion_05_design_soundness,
        criterion_06_table1,
        criterion_07_message_passing,
        criterion_08_continuous_time,
        criterion_09_baseline_ordering,
        criterion_10_robust_recovery,
    ];
    let mut failed = Vec::new();
    for (k, c) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(c) {
            Ok(true) => {}
            Ok(false) => failed.push(k + 1),
            Err(_) => {
                report(k + 1, false, "panicked".into());
                failed.push(k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
