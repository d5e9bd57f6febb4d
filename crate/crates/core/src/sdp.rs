//! Primal-dual interior-point solver for small semidefinite programs.
//!
//! Problem form, over a free vector `y`:
//!
//! ```text
//! minimize   c^T y
//! subject to Z_b = C_b + sum_i y_i G_{i,b}  ⪰ 0   for every block b
//! ```
//!
//! Blocks are either dense PSD blocks or diagonal (nonnegativity) blocks.
//! Coefficients of PSD blocks are given as sums of symmetric rank-two
//! factors `s (u v^T + v u^T)` over a per-block vector pool, optionally
//! plus a dense part. The solver uses the HKM search direction with a
//! Mehrotra predictor-corrector.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// A PSD block `C + sum_i y_i G_i ⪰ 0`.
#[derive(Debug, Clone)]
pub struct PsdBlock {
    dim: usize,
    constant: DMatrix<f64>,
    pool: Vec<DVector<f64>>,
    /// Per variable: `(s, u, v)` meaning `s (p_u p_v^T + p_v p_u^T)`.
    low_rank: Vec<Vec<(f64, usize, usize)>>,
    dense: Vec<Option<DMatrix<f64>>>,
}

impl PsdBlock {
    pub fn new(dim: usize, n_vars: usize) -> Self {
        PsdBlock {
            dim,
            constant: DMatrix::zeros(dim, dim),
            pool: Vec::new(),
            low_rank: vec![Vec::new(); n_vars],
            dense: vec![None; n_vars],
        }
    }

    pub fn set_constant(&mut self, c: DMatrix<f64>) {
        assert_eq!(c.shape(), (self.dim, self.dim));
        self.constant = (&c + c.transpose()) * 0.5;
    }

    /// Adds a vector to the pool and returns its index.
    pub fn push_vector(&mut self, v: DVector<f64>) -> usize {
        assert_eq!(v.len(), self.dim);
        self.pool.push(v);
        self.pool.len() - 1
    }

    /// Adds `s (p_u p_v^T + p_v p_u^T)` to the coefficient of variable `var`.
    pub fn add_low_rank(&mut self, var: usize, s: f64, u: usize, v: usize) {
        self.low_rank[var].push((s, u, v));
    }

    /// Adds a dense symmetric part to the coefficient of variable `var`.
    pub fn add_dense(&mut self, var: usize, m: DMatrix<f64>) {
        let m = (&m + m.transpose()) * 0.5;
        let slot = &mut self.dense[var];
        *slot = Some(match slot.take() {
            Some(prev) => prev + m,
            None => m,
        });
    }

    /// `C + sum_i y_i G_i`.
    pub fn evaluate(&self, y: &[f64]) -> DMatrix<f64> {
        let mut z = self.constant.clone();
        self.accumulate(&mut z, y);
        z
    }

    fn accumulate(&self, z: &mut DMatrix<f64>, y: &[f64]) {
        for (var, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            if let Some(d) = &self.dense[var] {
                *z += d * yi;
            }
            for &(s, u, v) in &self.low_rank[var] {
                add_sym_outer(z, s * yi, &self.pool[u], &self.pool[v]);
            }
        }
    }

    /// `tr(G_var M)` for a (not necessarily symmetric) matrix `M`, given
    /// `mp = M * pool` column by column.
    fn trace_with(&self, var: usize, m: &DMatrix<f64>, mp: &[DVector<f64>]) -> f64 {
        let mut acc = 0.0;
        if let Some(d) = &self.dense[var] {
            acc += d.component_mul(&m.transpose()).sum();
        }
        for &(s, u, v) in &self.low_rank[var] {
            // tr((u v^T + v u^T) M) = v^T M u + u^T M v
            acc += s * (self.pool[v].dot(&mp[u]) + self.pool[u].dot(&mp[v]));
        }
        acc
    }
}

fn add_sym_outer(m: &mut DMatrix<f64>, s: f64, u: &DVector<f64>, v: &DVector<f64>) {
    m.ger(s, u, v, 1.0);
    m.ger(s, v, u, 1.0);
}

/// A block of scalar constraints `c_k + sum_i y_i g_{i,k} >= 0`.
#[derive(Debug, Clone)]
pub struct DiagBlock {
    dim: usize,
    constant: Vec<f64>,
    entries: Vec<Vec<(usize, f64)>>,
}

impl DiagBlock {
    pub fn new(dim: usize, n_vars: usize) -> Self {
        DiagBlock {
            dim,
            constant: vec![0.0; dim],
            entries: vec![Vec::new(); n_vars],
        }
    }

    pub fn set_constant(&mut self, k: usize, c: f64) {
        self.constant[k] = c;
    }

    pub fn add(&mut self, var: usize, k: usize, g: f64) {
        self.entries[var].push((k, g));
    }

    pub fn evaluate(&self, y: &[f64]) -> Vec<f64> {
        let mut z = self.constant.clone();
        for (var, &yi) in y.iter().enumerate() {
            for &(k, g) in &self.entries[var] {
                z[k] += yi * g;
            }
        }
        z
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Psd(PsdBlock),
    Diag(DiagBlock),
}

impl Block {
    fn dim(&self) -> usize {
        match self {
            Block::Psd(b) => b.dim,
            Block::Diag(b) => b.dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub c: Vec<f64>,
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub step_fraction: f64,
    pub initial_scale: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            tol: 1e-9,
            max_iters: 200,
            step_fraction: 0.95,
            initial_scale: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    IterationLimit,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: Vec<f64>,
    pub objective: f64,
    pub status: IpmStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

/// Primal-dual iterate: `x` is the multiplier, `z` the slack.
#[derive(Clone)]
enum Pair {
    Psd { x: DMatrix<f64>, z: DMatrix<f64> },
    Diag { x: Vec<f64>, z: Vec<f64> },
}

enum Dir {
    Psd { dx: DMatrix<f64>, dz: DMatrix<f64> },
    Diag { dx: Vec<f64>, dz: Vec<f64> },
}

struct Cache {
    zinv: Vec<Option<DMatrix<f64>>>,
}

impl SdpProblem {
    fn n_vars(&self) -> usize {
        self.c.len()
    }

    /// Slack values at `y`.
    pub fn slack(&self, y: &[f64]) -> Vec<SlackValue> {
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Psd(p) => SlackValue::Psd(p.evaluate(y)),
                Block::Diag(d) => SlackValue::Diag(d.evaluate(y)),
            })
            .collect()
    }

    pub fn solve(&self, settings: &IpmSettings) -> SdpSolution {
        let nv = self.n_vars();
        let total_dim: usize = self.blocks.iter().map(|b| b.dim()).sum();
        let s0 = settings.initial_scale;
        let mut y = vec![0.0; nv];
        let mut pairs: Vec<Pair> = self
            .blocks
            .iter()
            .map(|b| match b {
                Block::Psd(p) => Pair::Psd {
                    x: DMatrix::identity(p.dim, p.dim) * s0,
                    z: DMatrix::identity(p.dim, p.dim) * s0,
                },
                Block::Diag(d) => Pair::Diag {
                    x: vec![s0; d.dim],
                    z: vec![s0; d.dim],
                },
            })
            .collect();
        let c_norm = 1.0 + self.c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let k_norm = 1.0
            + self
                .blocks
                .iter()
                .map(|b| match b {
                    Block::Psd(p) => p.constant.norm_squared(),
                    Block::Diag(d) => d.constant.iter().map(|v| v * v).sum(),
                })
                .sum::<f64>()
                .sqrt();

        let mut status = IpmStatus::IterationLimit;
        let mut iterations = 0;
        let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for it in 0..settings.max_iters {
            iterations = it;
            // Residuals.
            let rp: Vec<f64> = (0..nv).map(|i| self.c[i] - self.a_op_x(i, &pairs)).collect();
            let rd: Vec<Resid> = self.dual_residuals(&y, &pairs);
            let mu = pairs.iter().map(pair_inner).sum::<f64>() / total_dim as f64;
            let pres = rp.iter().map(|v| v * v).sum::<f64>().sqrt() / c_norm;
            let dres = rd.iter().map(resid_norm_sq).sum::<f64>().sqrt() / k_norm;
            let pobj: f64 = self.c.iter().zip(&y).map(|(a, b)| a * b).sum();
            let dobj = -self.constant_inner(&pairs);
            let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
            last = (pres, dres, gap);
            if pres < settings.tol && dres < settings.tol && gap < settings.tol {
                status = IpmStatus::Optimal;
                break;
            }

            let cache = match self.factor(&pairs) {
                Some(c) => c,
                None => {
                    status = IpmStatus::NumericalFailure;
                    break;
                }
            };
            let schur = self.schur(&pairs, &cache);
            let chol = match Cholesky::new(schur) {
                Some(ch) => ch,
                None => {
                    status = IpmStatus::NumericalFailure;
                    break;
                }
            };

            // Predictor.
            let pred = self.direction(&pairs, &cache, &chol, &rd, 0.0, mu, None);
            let (ap, ad) = self.step_lengths(&pairs, &pred.1, 1.0);
            let mu_aff = pairs
                .iter()
                .zip(&pred.1)
                .map(|(p, d)| stepped_inner(p, d, ap, ad))
                .sum::<f64>()
                / total_dim as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // Corrector.
            let corr = self.direction(&pairs, &cache, &chol, &rd, sigma, mu, Some(&pred.1));
            let (ap, ad) = self.step_lengths(&pairs, &corr.1, settings.step_fraction);
            if !(ap > 0.0 && ad > 0.0) || !ap.is_finite() || !ad.is_finite() {
                status = IpmStatus::NumericalFailure;
                break;
            }
            for (yi, dyi) in y.iter_mut().zip(&corr.0) {
                *yi += ad * dyi;
            }
            for (p, d) in pairs.iter_mut().zip(&corr.1) {
                match (p, d) {
                    (Pair::Psd { x, z }, Dir::Psd { dx, dz }) => {
                        *x += dx * ap;
                        *z += dz * ad;
                    }
                    (Pair::Diag { x, z }, Dir::Diag { dx, dz }) => {
                        for k in 0..x.len() {
                            x[k] += ap * dx[k];
                            z[k] += ad * dz[k];
                        }
                    }
                    _ => unreachable!(),
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                status = IpmStatus::NumericalFailure;
                break;
            }
        }
        let objective = self.c.iter().zip(&y).map(|(a, b)| a * b).sum();
        SdpSolution {
            y,
            objective,
            status,
            iterations,
            primal_residual: last.0,
            dual_residual: last.1,
            gap: last.2,
        }
    }

    /// `tr(G_i X)` summed over blocks.
    fn a_op_x(&self, var: usize, pairs: &[Pair]) -> f64 {
        let mut acc = 0.0;
        for (b, p) in self.blocks.iter().zip(pairs) {
            match (b, p) {
                (Block::Psd(blk), Pair::Psd { x, .. }) => {
                    if blk.low_rank[var].is_empty() && blk.dense[var].is_none() {
                        continue;
                    }
                    let mut t = 0.0;
                    if let Some(d) = &blk.dense[var] {
                        t += d.component_mul(x).sum();
                    }
                    for &(s, u, v) in &blk.low_rank[var] {
                        t += 2.0 * s * blk.pool[v].dot(&(x * &blk.pool[u]));
                    }
                    acc += t;
                }
                (Block::Diag(blk), Pair::Diag { x, .. }) => {
                    for &(k, g) in &blk.entries[var] {
                        acc += g * x[k];
                    }
                }
                _ => unreachable!(),
            }
        }
        acc
    }

    fn constant_inner(&self, pairs: &[Pair]) -> f64 {
        self.blocks
            .iter()
            .zip(pairs)
            .map(|(b, p)| match (b, p) {
                (Block::Psd(blk), Pair::Psd { x, .. }) => blk.constant.component_mul(x).sum(),
                (Block::Diag(blk), Pair::Diag { x, .. }) => {
                    blk.constant.iter().zip(x).map(|(a, b)| a * b).sum()
                }
                _ => unreachable!(),
            })
            .sum()
    }

    fn dual_residuals(&self, y: &[f64], pairs: &[Pair]) -> Vec<Resid> {
        self.blocks
            .iter()
            .zip(pairs)
            .map(|(b, p)| match (b, p) {
                (Block::Psd(blk), Pair::Psd { z, .. }) => Resid::Psd(blk.evaluate(y) - z),
                (Block::Diag(blk), Pair::Diag { z, .. }) => {
                    Resid::Diag(blk.evaluate(y).iter().zip(z).map(|(a, b)| a - b).collect())
                }
                _ => unreachable!(),
            })
            .collect()
    }

    fn factor(&self, pairs: &[Pair]) -> Option<Cache> {
        let mut zinv = Vec::with_capacity(pairs.len());
        for p in pairs {
            match p {
                Pair::Psd { z, .. } => {
                    let ch = Cholesky::new(z.clone())?;
                    let inv = ch.inverse();
                    zinv.push(Some((&inv + inv.transpose()) * 0.5));
                }
                Pair::Diag { z, .. } => {
                    if z.iter().any(|v| !(*v > 0.0)) {
                        return None;
                    }
                    zinv.push(None);
                }
            }
        }
        Some(Cache { zinv })
    }

    /// `B_ij = sum_b tr(G_i X G_j Z^{-1})`.
    fn schur(&self, pairs: &[Pair], cache: &Cache) -> DMatrix<f64> {
        let nv = self.n_vars();
        let mut bm = DMatrix::zeros(nv, nv);
        for ((blk, p), zinv) in self.blocks.iter().zip(pairs).zip(&cache.zinv) {
            match (blk, p) {
                (Block::Psd(b), Pair::Psd { x, .. }) => {
                    let zinv = zinv.as_ref().expect("psd block has inverse");
                    schur_psd(b, x, zinv, &mut bm);
                }
                (Block::Diag(b), Pair::Diag { x, z }) => {
                    let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); b.dim];
                    for (var, list) in b.entries.iter().enumerate() {
                        for &(k, g) in list {
                            by_row[k].push((var, g));
                        }
                    }
                    for (k, list) in by_row.iter().enumerate() {
                        let w = x[k] / z[k];
                        for &(i, gi) in list {
                            for &(j, gj) in list {
                                bm[(i, j)] += w * gi * gj;
                            }
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        (&bm + bm.transpose()) * 0.5
    }

    /// Solves for the search direction. With `sigma = 0` and no previous
    /// direction this is the affine predictor.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        pairs: &[Pair],
        cache: &Cache,
        chol: &Cholesky<f64, Dyn>,
        rd: &[Resid],
        sigma: f64,
        mu: f64,
        pred: Option<&Vec<Dir>>,
    ) -> (Vec<f64>, Vec<Dir>) {
        let nv = self.n_vars();
        // G_b = sigma mu Z^{-1} - X R_d Z^{-1} - dXa dZa Z^{-1}.
        let gs: Vec<Resid> = pairs
            .iter()
            .zip(rd)
            .zip(&cache.zinv)
            .enumerate()
            .map(|(bi, ((p, r), zinv))| match (p, r) {
                (Pair::Psd { x, .. }, Resid::Psd(r)) => {
                    let zinv = zinv.as_ref().unwrap();
                    let mut inner = -(x * r);
                    if let Some(pd) = pred {
                        if let Dir::Psd { dx, dz } = &pd[bi] {
                            inner -= dx * dz;
                        }
                    }
                    let mut g = inner * zinv;
                    if sigma > 0.0 {
                        g += zinv * (sigma * mu);
                    }
                    Resid::Psd(g)
                }
                (Pair::Diag { x, z }, Resid::Diag(r)) => {
                    let mut g = vec![0.0; x.len()];
                    for k in 0..x.len() {
                        let mut inner = -x[k] * r[k];
                        if let Some(pd) = pred {
                            if let Dir::Diag { dx, dz } = &pd[bi] {
                                inner -= dx[k] * dz[k];
                            }
                        }
                        g[k] = (inner + sigma * mu) / z[k];
                    }
                    Resid::Diag(g)
                }
                _ => unreachable!(),
            })
            .collect();
        let mut rhs = DVector::from_iterator(nv, self.c.iter().map(|v| -v));
        for (blk, g) in self.blocks.iter().zip(&gs) {
            match (blk, g) {
                (Block::Psd(b), Resid::Psd(g)) => {
                    let gp: Vec<DVector<f64>> = b.pool.iter().map(|v| g * v).collect();
                    for var in 0..nv {
                        if b.low_rank[var].is_empty() && b.dense[var].is_none() {
                            continue;
                        }
                        rhs[var] += b.trace_with(var, g, &gp);
                    }
                }
                (Block::Diag(b), Resid::Diag(g)) => {
                    for (var, list) in b.entries.iter().enumerate() {
                        for &(k, gk) in list {
                            rhs[var] += gk * g[k];
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        let dy = chol.solve(&rhs);
        let dy_vec: Vec<f64> = dy.iter().copied().collect();

        let dirs = self
            .blocks
            .iter()
            .zip(pairs)
            .zip(rd)
            .zip(&gs)
            .zip(&cache.zinv)
            .map(|((((blk, p), r), g), zinv)| match (blk, p, r, g) {
                (Block::Psd(b), Pair::Psd { x, .. }, Resid::Psd(r), Resid::Psd(g)) => {
                    let zinv = zinv.as_ref().unwrap();
                    let mut dz = r.clone();
                    b.accumulate(&mut dz, &dy_vec);
                    // dX = G - X (A^T dy) Z^{-1} - X, with R_d already in G.
                    let mut ady = DMatrix::zeros(b.dim, b.dim);
                    b.accumulate(&mut ady, &dy_vec);
                    let dx = g - x * ady * zinv - x;
                    let dx = (&dx + dx.transpose()) * 0.5;
                    Dir::Psd { dx, dz }
                }
                (Block::Diag(b), Pair::Diag { x, z }, Resid::Diag(r), Resid::Diag(g)) => {
                    let mut ady = vec![0.0; b.dim];
                    for (var, list) in b.entries.iter().enumerate() {
                        for &(k, gk) in list {
                            ady[k] += gk * dy_vec[var];
                        }
                    }
                    let dz: Vec<f64> = (0..b.dim).map(|k| r[k] + ady[k]).collect();
                    let dx: Vec<f64> = (0..b.dim)
                        .map(|k| g[k] - x[k] * ady[k] / z[k] - x[k])
                        .collect();
                    Dir::Diag { dx, dz }
                }
                _ => unreachable!(),
            })
            .collect();
        (dy_vec, dirs)
    }

    fn step_lengths(&self, pairs: &[Pair], dirs: &[Dir], fraction: f64) -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for (p, d) in pairs.iter().zip(dirs) {
            match (p, d) {
                (Pair::Psd { x, z }, Dir::Psd { dx, dz }) => {
                    ap = ap.min(max_step_psd(x, dx));
                    ad = ad.min(max_step_psd(z, dz));
                }
                (Pair::Diag { x, z }, Dir::Diag { dx, dz }) => {
                    for k in 0..x.len() {
                        if dx[k] < 0.0 {
                            ap = ap.min(-x[k] / dx[k]);
                        }
                        if dz[k] < 0.0 {
                            ad = ad.min(-z[k] / dz[k]);
                        }
                    }
                }
                _ => unreachable!(),
            }
        }
        ((fraction * ap).min(1.0), (fraction * ad).min(1.0))
    }
}

fn schur_psd(b: &PsdBlock, x: &DMatrix<f64>, zinv: &DMatrix<f64>, bm: &mut DMatrix<f64>) {
    let nv = b.low_rank.len();
    let np = b.pool.len();
    if np > 0 {
        let mut p = DMatrix::zeros(b.dim, np);
        for (k, v) in b.pool.iter().enumerate() {
            p.set_column(k, v);
        }
        let gx = p.transpose() * x * &p;
        let gz = p.transpose() * zinv * &p;
        let vars: Vec<usize> = (0..nv).filter(|&i| !b.low_rank[i].is_empty()).collect();
        for (ii, &i) in vars.iter().enumerate() {
            for &j in &vars[ii..] {
                let mut acc = 0.0;
                for &(s, u, v) in &b.low_rank[i] {
                    for &(t, a, c) in &b.low_rank[j] {
                        acc += s
                            * t
                            * (gx[(v, a)] * gz[(c, u)]
                                + gx[(v, c)] * gz[(a, u)]
                                + gx[(u, a)] * gz[(c, v)]
                                + gx[(u, c)] * gz[(a, v)]);
                    }
                }
                bm[(i, j)] += acc;
                if i != j {
                    bm[(j, i)] += acc;
                }
            }
        }
    }
    // Dense parts: with K_d = X D_d Z^{-1}, the cross terms are
    // tr(LR_o K_d) (entered at (o,d) and (d,o)) and tr(D_e K_d).
    let dense_vars: Vec<usize> = (0..nv).filter(|&i| b.dense[i].is_some()).collect();
    for &d in &dense_vars {
        let k = x * b.dense[d].as_ref().unwrap() * zinv;
        let kp: Vec<DVector<f64>> = b.pool.iter().map(|v| &k * v).collect();
        for o in 0..nv {
            let mut val = 0.0;
            for &(s, u, v) in &b.low_rank[o] {
                val += s * (b.pool[v].dot(&kp[u]) + b.pool[u].dot(&kp[v]));
            }
            bm[(o, d)] += val;
            bm[(d, o)] += val;
        }
        for &e in &dense_vars {
            bm[(e, d)] += b.dense[e].as_ref().unwrap().component_mul(&k.transpose()).sum();
        }
    }
}

fn max_step_psd(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let ch = match Cholesky::new(x.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = ch.l();
    let s1 = l.solve_lower_triangular(dx).expect("triangular solve");
    let s = l
        .solve_lower_triangular(&s1.transpose())
        .expect("triangular solve");
    let s = (&s + s.transpose()) * 0.5;
    let lmin = s.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

enum Resid {
    Psd(DMatrix<f64>),
    Diag(Vec<f64>),
}

fn resid_norm_sq(r: &Resid) -> f64 {
    match r {
        Resid::Psd(m) => m.norm_squared(),
        Resid::Diag(v) => v.iter().map(|a| a * a).sum(),
    }
}

fn pair_inner(p: &Pair) -> f64 {
    match p {
        Pair::Psd { x, z } => x.component_mul(z).sum(),
        Pair::Diag { x, z } => x.iter().zip(z).map(|(a, b)| a * b).sum(),
    }
}

fn stepped_inner(p: &Pair, d: &Dir, ap: f64, ad: f64) -> f64 {
    match (p, d) {
        (Pair::Psd { x, z }, Dir::Psd { dx, dz }) => (x + dx * ap).component_mul(&(z + dz * ad)).sum(),
        (Pair::Diag { x, z }, Dir::Diag { dx, dz }) => (0..x.len())
            .map(|k| (x[k] + ap * dx[k]) * (z[k] + ad * dz[k]))
            .sum(),
        _ => unreachable!(),
    }
}

/// Slack evaluated at a point, per block.
#[derive(Debug, Clone)]
pub enum SlackValue {
    Psd(DMatrix<f64>),
    Diag(Vec<f64>),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lp() {
        // minimize y subject to y - 2 >= 0.
        let mut d = DiagBlock::new(1, 1);
        d.set_constant(0, -2.0);
        d.add(0, 0, 1.0);
        let prob = SdpProblem { c: vec![1.0], blocks: vec![Block::Diag(d)] };
        let sol = prob.solve(&IpmSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        assert!((sol.y[0] - 2.0).abs() < 1e-7);
    }

    #[test]
    fn max_eigenvalue_bound() {
        // minimize t subject to t I - A ⪰ 0: optimum is lambda_max(A).
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let mut b = PsdBlock::new(3, 1);
        b.set_constant(-a.clone());
        b.add_dense(0, DMatrix::identity(3, 3));
        let prob = SdpProblem { c: vec![1.0], blocks: vec![Block::Psd(b)] };
        let sol = prob.solve(&IpmSettings::default());
        assert_eq!(sol.status, IpmStatus::Optimal);
        let lmax = a.symmetric_eigenvalues().max();
        assert!((sol.y[0] - lmax).abs() < 1e-7, "{} vs {lmax}", sol.y[0]);
    }

    #[test]
    fn low_rank_matches_dense() {
        // minimize t with t I - sum_k w_k e_k e_k^T ... expressed two ways:
        // maximize the smallest eigenvalue of sum_k y_k v_k v_k^T subject to
        // sum_k y_k <= 1, y >= 0, written as min -s.
        let vs = [
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]) / 2f64.sqrt(),
        ];
        let solve = |low_rank: bool| {
            // vars: y0, y1, y2, s
            let mut b = PsdBlock::new(2, 4);
            for (k, v) in vs.iter().enumerate() {
                if low_rank {
                    let idx = b.push_vector(v.clone());
                    b.add_low_rank(k, 0.5, idx, idx);
                } else {
                    b.add_dense(k, v * v.transpose());
                }
            }
            b.add_dense(3, -DMatrix::identity(2, 2));
            let mut d = DiagBlock::new(4, 4);
            for k in 0..3 {
                d.add(k, k, 1.0);
                d.add(k, 3, -1.0);
            }
            d.set_constant(3, 1.0);
            let prob = SdpProblem {
                c: vec![0.0, 0.0, 0.0, -1.0],
                blocks: vec![Block::Psd(b), Block::Diag(d)],
            };
            prob.solve(&IpmSettings::default())
        };
        let a = solve(true);
        let b = solve(false);
        assert_eq!(a.status, IpmStatus::Optimal);
        assert_eq!(b.status, IpmStatus::Optimal);
        assert!((a.objective - b.objective).abs() < 1e-7);
        assert!((a.objective + 0.5).abs() < 1e-6, "{}", a.objective);
    }
}
