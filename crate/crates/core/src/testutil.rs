//! Shared strategies and builders for property tests.

use proptest::prelude::*;

use crate::dana_d::RunOptions;
use crate::graph::{random_connected, GraphTopology};
use crate::problem::{BoxLimits, CostFunction, DispatchProblem};

/// Connected graphs with 3 to `max_n` nodes and any edge count.
pub fn graph_strategy(max_n: usize) -> impl Strategy<Value = GraphTopology> {
    (3..=max_n, 0.0f64..1.0, any::<u64>()).prop_map(|(n, frac, seed)| {
        let max = n * (n - 1) / 2;
        let m = (n - 1) + ((max - (n - 1)) as f64 * frac) as usize;
        random_connected(n, m, seed).unwrap()
    })
}

pub fn history_opts(max_iters: usize) -> RunOptions {
    RunOptions {
        max_iters,
        record_history: true,
        ..RunOptions::default()
    }
}

/// Box-constrained quadratic instance whose demand lies strictly inside
/// the box sums.
pub fn boxed_quadratic(a: &[f64], b: &[f64], lo: &[f64], width: &[f64], frac: f64) -> DispatchProblem {
    let costs = a.iter().zip(b).map(|(&a, &b)| CostFunction::quadratic(a, b)).collect();
    let hi: Vec<f64> = lo.iter().zip(width).map(|(l, w)| l + w).collect();
    let slo: f64 = lo.iter().sum();
    let shi: f64 = hi.iter().sum();
    let d = slo + frac * (shi - slo);
    let n = a.len();
    DispatchProblem::new(costs, d, Some(BoxLimits { lo: lo.to_vec(), hi }), vec![d / n as f64; n]).unwrap()
}
