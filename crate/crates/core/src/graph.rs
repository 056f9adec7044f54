//! Dynamic dependency-graph estimation and evaluation.
//!
//! Two estimators are provided. The spike-correlation estimator scores every
//! node pair with an exponential coincidence kernel, turns each row of scores
//! into a softmax distribution over partners and thresholds it. The
//! membrane-basis estimator projects kernel-smoothed event signals onto the
//! membrane potentials of the most central neurons and selects neighborhoods
//! by group lasso. Both produce a [`DynamicGraph`].

use std::collections::BTreeSet;
use std::ops::Range;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventSequence, SpikeTrain};
use crate::plasticity::SynapseMatrix;
use crate::rng;
use crate::snn::MembraneTraces;
use crate::synth::Snapshot;

/// Lags beyond this many kernel widths are ignored by pair sums.
pub const LAG_CUTOFF: f64 = 30.0;

/// `Σ_a Σ_b exp(-|a - b| / τ)` over the two trains. Exact in one forward
/// and one backward sweep with running exponential sums; pairs more than
/// [`LAG_CUTOFF`]·τ apart contribute below `e^-30` each.
pub fn pair_score(a: &[f64], b: &[f64], tau: f64) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    // b at or before each a.
    let mut acc = 0.0;
    let mut stamp = f64::NEG_INFINITY;
    let mut j = 0;
    for &x in a {
        while j < b.len() && b[j] <= x {
            acc = if acc == 0.0 { 1.0 } else { acc * (-(b[j] - stamp) / tau).exp() + 1.0 };
            stamp = b[j];
            j += 1;
        }
        if acc != 0.0 {
            total += acc * (-(x - stamp) / tau).exp();
        }
    }
    // b strictly after each a.
    let mut acc = 0.0;
    let mut stamp = f64::INFINITY;
    let mut j = b.len();
    for &x in a.iter().rev() {
        while j > 0 && b[j - 1] > x {
            j -= 1;
            acc = if acc == 0.0 { 1.0 } else { acc * (-(stamp - b[j]) / tau).exp() + 1.0 };
            stamp = b[j];
        }
        if acc != 0.0 {
            total += acc * (-(stamp - x) / tau).exp();
        }
    }
    total
}

/// One time window of a dynamic graph. Matrices are dense, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphWindow {
    pub start: f64,
    pub end: f64,
    pub theta: f64,
    pub probs: Vec<f64>,
    pub adjacency: Vec<bool>,
}

impl GraphWindow {
    pub fn prob(&self, n: usize, i: usize, j: usize) -> f64 {
        self.probs[i * n + j]
    }

    pub fn edge(&self, n: usize, i: usize, j: usize) -> bool {
        self.adjacency[i * n + j]
    }

    pub fn edge_count(&self, n: usize) -> usize {
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| self.edge(n, i, j)).count()
    }

    pub fn to_snapshot(&self, n: usize) -> Snapshot {
        let edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.edge(n, i, j))
            .collect();
        Snapshot { epoch_start: self.start, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicGraph {
    pub num_nodes: usize,
    pub windows: Vec<GraphWindow>,
}

impl DynamicGraph {
    /// Window containing `t`; times past the last window use the last one.
    pub fn window_at(&self, t: f64) -> &GraphWindow {
        let idx = self.windows.partition_point(|w| w.end <= t);
        &self.windows[idx.min(self.windows.len() - 1)]
    }

    pub fn window_index(&self, t: f64) -> usize {
        self.windows.partition_point(|w| w.end <= t).min(self.windows.len() - 1)
    }

    pub fn snapshots(&self) -> Vec<Snapshot> {
        self.windows.iter().map(|w| w.to_snapshot(self.num_nodes)).collect()
    }

    /// Mean edge density over windows (fraction of node pairs).
    pub fn density(&self) -> f64 {
        let n = self.num_nodes;
        let pairs = (n * (n.saturating_sub(1)) / 2).max(1) as f64;
        self.windows.iter().map(|w| w.edge_count(n) as f64 / pairs).sum::<f64>() / self.windows.len().max(1) as f64
    }
}

/// Median and scaled median absolute deviation, falling back to the mean
/// absolute deviation when more than half the values coincide.
fn robust_location_scale(xs: &[f64]) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let median = |s: &[f64]| {
        let k = s.len();
        if k % 2 == 1 {
            s[k / 2]
        } else {
            0.5 * (s[k / 2 - 1] + s[k / 2])
        }
    };
    let med = median(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = 1.4826 * median(&dev);
    if mad > 0.0 {
        return (med, mad);
    }
    let mean_dev = dev.iter().sum::<f64>() / dev.len() as f64;
    (med, mean_dev)
}

/// Standardized scores are clipped to `±Z_CLIP` so that no probability
/// rounds to exactly 0 or 1.
pub const Z_CLIP: f64 = 15.0;

/// Softmax over each row's off-diagonal scores after robust standardization.
pub fn softmax_rows(scores: &[f64], n: usize) -> Vec<f64> {
    let mut probs = vec![0.0; n * n];
    if n < 2 {
        return probs;
    }
    for i in 0..n {
        let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| scores[i * n + j]).collect();
        let (loc, scale) = robust_location_scale(&row);
        let z: Vec<f64> = if scale > 0.0 && scale.is_finite() { row.iter().map(|s| ((s - loc) / scale).clamp(-Z_CLIP, Z_CLIP)).collect() } else { vec![0.0; row.len()] };
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|x| (x - zmax).exp()).collect();
        let total: f64 = exps.iter().sum();
        let mut k = 0;
        for j in 0..n {
            if j != i {
                probs[i * n + j] = exps[k] / total;
                k += 1;
            }
        }
    }
    probs
}

/// Default threshold: 1.5 times the uniform softmax level.
pub fn default_theta(n: usize) -> f64 {
    1.5 / (n.max(2) - 1) as f64
}

/// `p_ij > θ`, symmetrized by OR, diagonal cleared.
pub fn threshold_graph(probs: &[f64], n: usize, theta: f64) -> Vec<bool> {
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (probs[i * n + j] > theta || probs[j * n + i] > theta) {
                adj[i * n + j] = true;
            }
        }
    }
    adj
}

/// Pair scores over `[start, end)` averaged across `sub_windows` equal parts.
pub fn window_scores(trains: &[SpikeTrain], tau: f64, sub_windows: usize, start: f64, end: f64) -> Vec<f64> {
    let n = trains.len();
    let k = sub_windows.max(1);
    let width = (end - start) / k as f64;
    let mut scores = vec![0.0; n * n];
    for w in 0..k {
        let lo = start + w as f64 * width;
        let hi = if w + 1 == k { end } else { lo + width };
        let slices: Vec<&[f64]> = trains.iter().map(|s| s.window(lo, hi)).collect();
        for i in 0..n {
            for j in i + 1..n {
                let s = pair_score(slices[i], slices[j], tau);
                scores[i * n + j] += s;
                scores[j * n + i] += s;
            }
        }
    }
    for s in &mut scores {
        *s /= k as f64;
    }
    scores
}

/// Summed pair scores over `[start, end)` relative to their summed chance
/// level, `2τ n_i n_j / width` per sub-window for independent stationary
/// trains. Sub-windows absorb slow rate changes; pairs that never share a
/// non-empty sub-window score 0.
pub fn coincidence_ratios(trains: &[SpikeTrain], tau: f64, sub_windows: usize, start: f64, end: f64) -> Vec<f64> {
    let n = trains.len();
    let k = sub_windows.max(1);
    let width = (end - start) / k as f64;
    let mut observed = vec![0.0; n * n];
    let mut chance = vec![0.0; n * n];
    for w in 0..k {
        let lo = start + w as f64 * width;
        let hi = if w + 1 == k { end } else { lo + width };
        let slices: Vec<&[f64]> = trains.iter().map(|s| s.window(lo, hi)).collect();
        for i in 0..n {
            for j in i + 1..n {
                let c = 2.0 * tau * (slices[i].len() * slices[j].len()) as f64 / (hi - lo);
                if c > 0.0 {
                    observed[i * n + j] += pair_score(slices[i], slices[j], tau);
                    chance[i * n + j] += c;
                }
            }
        }
    }
    let mut scores = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if chance[i * n + j] > 0.0 {
                let r = observed[i * n + j] / chance[i * n + j];
                scores[i * n + j] = r;
                scores[j * n + i] = r;
            }
        }
    }
    scores
}

/// Spike-correlation edge probabilities for one window.
pub fn edge_probabilities(trains: &[SpikeTrain], tau: f64, sub_windows: usize, start: f64, end: f64, theta: f64) -> Result<GraphWindow> {
    if !(tau > 0.0) {
        return Err(Error::Validation("kernel width must be positive".into()));
    }
    if sub_windows == 0 {
        return Err(Error::Validation("need at least one sub-window".into()));
    }
    let n = trains.len();
    let probs = softmax_rows(&coincidence_ratios(trains, tau, sub_windows, start, end), n);
    let adjacency = threshold_graph(&probs, n, theta);
    Ok(GraphWindow { start, end, theta, probs, adjacency })
}

/// Equal-length windows tiling `[0, horizon]`.
pub fn tile_windows(horizon: f64, count: usize) -> Vec<(f64, f64)> {
    let count = count.max(1);
    let w = horizon / count as f64;
    (0..count).map(|k| (k as f64 * w, if k + 1 == count { horizon } else { (k + 1) as f64 * w })).collect()
}

pub fn spike_graph(trains: &[SpikeTrain], tau: f64, sub_windows: usize, windows: &[(f64, f64)], theta: f64) -> Result<DynamicGraph> {
    let windows = windows
        .iter()
        .map(|&(s, e)| edge_probabilities(trains, tau, sub_windows, s, e, theta))
        .collect::<Result<Vec<_>>>()?;
    Ok(DynamicGraph { num_nodes: trains.len(), windows })
}

/// Exponentially smoothed counting process `Σ_{s ≤ t} exp(-(t - s)/τ) / τ`.
fn smoothed_count(times: &[f64], tau: f64, t: f64) -> f64 {
    let end = times.partition_point(|&s| s <= t);
    let start = times[..end].partition_point(|&s| s < t - LAG_CUTOFF * tau);
    times[start..end].iter().map(|&s| (-(t - s) / tau).exp()).sum::<f64>() / tau
}

/// Monte-Carlo estimate of `E[X_i(t) X_j(t)]` over `t` uniform in the
/// window, with `X_k` the exponentially smoothed counting process of type `k`.
/// Sample points are stratified and seeded.
pub fn dependency_strength(events: &EventSequence, tau: f64, i: usize, j: usize, window: (f64, f64), samples: usize, seed: u64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Validation("kernel width must be positive".into()));
    }
    let trains = crate::events::encode_as_spikes(events);
    let (a, b) = (trains[i].times(), trains[j].times());
    if a.is_empty() || b.is_empty() {
        return Ok(0.0);
    }
    let mut rng = rng::stream(seed, rng::streams::MONTE_CARLO);
    let samples = samples.max(1);
    let width = (window.1 - window.0) / samples as f64;
    let mut total = 0.0;
    for k in 0..samples {
        let t = window.0 + (k as f64 + rng.random::<f64>()) * width;
        total += smoothed_count(a, tau, t) * smoothed_count(b, tau, t);
    }
    Ok(total / samples as f64)
}

/// Eigenvector centrality of the symmetrized magnitude graph `|W| + |W|ᵀ`,
/// by power iteration on the unit-shifted matrix (the shift keeps bipartite
/// graphs from oscillating without changing eigenvectors). Returns a
/// unit-norm non-negative vector; an all-zero graph gives uniform scores.
pub fn eigenvector_centrality(magnitudes: &[Vec<f64>]) -> Vec<f64> {
    let n = magnitudes.len();
    if n == 0 {
        return Vec::new();
    }
    let sym = |i: usize, j: usize| magnitudes[i][j].abs() + magnitudes[j][i].abs();
    let uniform = vec![1.0 / (n as f64).sqrt(); n];
    if (0..n).all(|i| (0..n).all(|j| i == j || sym(i, j) == 0.0)) {
        return uniform;
    }
    let mut x = uniform;
    for _ in 0..100 {
        let mut y: Vec<f64> = (0..n).map(|i| x[i] + (0..n).filter(|&j| j != i).map(|j| sym(i, j) * x[j]).sum::<f64>()).collect();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut y {
            *v /= norm;
        }
        let residual = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        x = y;
        if residual < 1e-10 {
            break;
        }
    }
    x
}

/// Indices of the `m` most central neurons (ties broken by index) and the
/// centrality vector.
pub fn rank_by_centrality(weights: &SynapseMatrix, m: usize) -> (Vec<usize>, Vec<f64>) {
    let c = eigenvector_centrality(&weights.magnitude_matrix());
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
    idx.truncate(m);
    (idx, c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembraneBasis {
    pub basis_neurons: Vec<usize>,
    pub times: Vec<f64>,
    pub traces: Vec<Vec<f64>>,
    pub centrality: Vec<f64>,
}

/// Top-`m` central neurons' traces. `traces` must have probed them.
pub fn select_basis(traces: &MembraneTraces, weights: &SynapseMatrix, m: usize) -> Result<MembraneBasis> {
    if m > weights.num_neurons() {
        return Err(Error::Validation(format!("basis size {m} exceeds {} neurons", weights.num_neurons())));
    }
    let (basis_neurons, centrality) = rank_by_centrality(weights, m);
    let mut series = Vec::with_capacity(m);
    for &neuron in &basis_neurons {
        let k = traces
            .neurons
            .iter()
            .position(|&x| x == neuron)
            .ok_or_else(|| Error::Shape(format!("neuron {neuron} was not probed")))?;
        series.push(traces.series(k));
    }
    Ok(MembraneBasis { basis_neurons, times: traces.times.clone(), traces: series, centrality })
}

/// Trapezoidal `∫ f g dt` on a shared grid.
pub fn trapezoid_product(times: &[f64], f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != times.len() || g.len() != times.len() {
        return Err(Error::Shape(format!("grid of {} points, signals of {} and {}", times.len(), f.len(), g.len())));
    }
    let mut total = 0.0;
    for k in 1..times.len() {
        total += 0.5 * (times[k] - times[k - 1]) * (f[k] * g[k] + f[k - 1] * g[k - 1]);
    }
    Ok(total)
}

/// Projection of `signal` onto every basis trace.
pub fn project(signal: &[f64], basis: &MembraneBasis) -> Result<Vec<f64>> {
    basis.traces.iter().map(|v| trapezoid_product(&basis.times, signal, v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub rho: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { rho: 1.0, tol: 1e-6, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoFit {
    /// `p × q` coefficients; group `g` owns rows `groups[g]`.
    pub coef: DMatrix<f64>,
    pub block_norms: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Solves `min (1/2n)‖Y - Dβ‖²_F + λ Σ_g ‖β_g‖_F` by ADMM.
pub fn group_lasso(design: &DMatrix<f64>, response: &DMatrix<f64>, groups: &[Range<usize>], lambda: f64, cfg: &AdmmConfig) -> Result<GroupLassoFit> {
    let (n, p) = design.shape();
    if response.nrows() != n {
        return Err(Error::Shape(format!("design has {n} rows, response {}", response.nrows())));
    }
    if groups.iter().any(|g| g.end > p) {
        return Err(Error::Shape("group exceeds design width".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Validation("lambda must be non-negative".into()));
    }
    let q = response.ncols();
    let nf = n.max(1) as f64;
    let rho = cfg.rho;
    let mut gram = design.transpose() * design / nf;
    for k in 0..p {
        gram[(k, k)] += rho;
    }
    let chol = gram.cholesky().ok_or_else(|| Error::Invariant("ADMM system not positive definite".into()))?;
    let dty = design.transpose() * response / nf;

    let mut z = DMatrix::<f64>::zeros(p, q);
    let mut u = DMatrix::<f64>::zeros(p, q);
    let mut converged = false;
    let mut iterations = 0;
    let shrink = lambda / rho;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let beta = chol.solve(&(&dty + (&z - &u) * rho));
        let z_old = z.clone();
        let v = &beta + &u;
        z = v.clone();
        for g in groups {
            let block = v.rows(g.start, g.len());
            let norm = block.norm();
            let scale = if norm > shrink { 1.0 - shrink / norm } else { 0.0 };
            z.rows_mut(g.start, g.len()).copy_from(&(block * scale));
        }
        u += &beta - &z;
        let primal = (&beta - &z).norm();
        let dual = rho * (&z - &z_old).norm();
        if primal < cfg.tol && dual < cfg.tol {
            converged = true;
            break;
        }
    }
    let block_norms = groups.iter().map(|g| z.rows(g.start, g.len()).norm()).collect();
    Ok(GroupLassoFit { coef: z, block_norms, converged, iterations })
}

/// Smallest λ at which every block is zero: `max_g ‖D_gᵀY‖_F / n`.
pub fn lambda_max(design: &DMatrix<f64>, response: &DMatrix<f64>, groups: &[Range<usize>]) -> f64 {
    let n = design.nrows().max(1) as f64;
    let g = design.transpose() * response / n;
    groups.iter().map(|r| g.rows(r.start, r.len()).norm()).fold(0.0, f64::max)
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// λ on a 10-point log grid from `λ_max` down to `1e-3·λ_max`, chosen by
/// 5-fold cross-validated prediction error with the one-standard-error rule.
pub fn select_lambda(design: &DMatrix<f64>, response: &DMatrix<f64>, groups: &[Range<usize>], cfg: &AdmmConfig) -> Result<f64> {
    let lmax = lambda_max(design, response, groups);
    let n = design.nrows();
    if lmax == 0.0 {
        return Ok(0.0);
    }
    let grid: Vec<f64> = (0..10).map(|k| lmax * 10f64.powf(-3.0 * k as f64 / 9.0)).collect();
    let folds = 5;
    if n < folds {
        return Ok(0.1 * lmax);
    }
    let mut errors = vec![vec![0.0; folds]; grid.len()];
    for f in 0..folds {
        let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
        let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
        let (dtr, ytr) = (select_rows(design, &train), select_rows(response, &train));
        let (dte, yte) = (select_rows(design, &test), select_rows(response, &test));
        for (g, &lambda) in grid.iter().enumerate() {
            let fit = group_lasso(&dtr, &ytr, groups, lambda, cfg)?;
            let resid = &yte - &dte * &fit.coef;
            errors[g][f] = resid.norm_squared() / test.len() as f64;
        }
    }
    let stats: Vec<(f64, f64)> = errors
        .iter()
        .map(|e| (crate::stats::mean(e), crate::stats::std_dev(e) / (folds as f64).sqrt()))
        .collect();
    let best = (0..grid.len()).min_by(|&a, &b| stats[a].0.total_cmp(&stats[b].0)).expect("grid non-empty");
    let limit = stats[best].0 + stats[best].1;
    let chosen = (0..=best).find(|&g| stats[g].0 <= limit).unwrap_or(best);
    Ok(grid[chosen])
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodEntry {
    pub target: usize,
    pub neighbors: BTreeSet<usize>,
    /// Frobenius norm of the coefficient block of each candidate, in
    /// candidate order.
    pub candidates: Vec<usize>,
    pub block_norms: Vec<f64>,
    pub lambda: f64,
    pub eps: f64,
    pub converged: bool,
}

/// Group-lasso neighborhood of `target`. `scores[w][k]` is the projection
/// vector of node `k` in sample window `w`.
pub fn group_lasso_neighborhood(
    scores: &[Vec<Vec<f64>>],
    target: usize,
    lambda: Option<f64>,
    eps: Option<f64>,
    cfg: &AdmmConfig,
) -> Result<NeighborhoodEntry> {
    let n = scores.len();
    let nodes = scores.first().map_or(0, |w| w.len());
    if target >= nodes {
        return Err(Error::Validation(format!("target {target} outside {nodes} nodes")));
    }
    let m = scores[0][0].len();
    let candidates: Vec<usize> = (0..nodes).filter(|&k| k != target).collect();
    let design = DMatrix::from_fn(n, candidates.len() * m, |w, c| scores[w][candidates[c / m]][c % m]);
    let response = DMatrix::from_fn(n, m, |w, c| scores[w][target][c]);
    let groups: Vec<Range<usize>> = (0..candidates.len()).map(|g| g * m..(g + 1) * m).collect();
    let lambda = match lambda {
        Some(l) => l,
        None => select_lambda(&design, &response, &groups, cfg)?,
    };
    let fit = group_lasso(&design, &response, &groups, lambda, cfg)?;
    let max_norm = fit.block_norms.iter().copied().fold(0.0, f64::max);
    let eps = eps.unwrap_or(1e-3 * max_norm);
    let neighbors = candidates
        .iter()
        .zip(&fit.block_norms)
        .filter(|(_, &b)| b > eps)
        .map(|(&k, _)| k)
        .collect();
    Ok(NeighborhoodEntry { target, neighbors, candidates, block_norms: fit.block_norms, lambda, eps, converged: fit.converged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    #[default]
    And,
    Or,
}

pub fn combine_neighborhoods(sets: &[BTreeSet<usize>], rule: CombineRule) -> Vec<bool> {
    let n = sets.len();
    let mut adj = vec![false; n * n];
    for j in 0..n {
        for l in 0..n {
            if j == l {
                continue;
            }
            let (a, b) = (sets[l].contains(&j), sets[j].contains(&l));
            adj[j * n + l] = match rule {
                CombineRule::And => a && b,
                CombineRule::Or => a || b,
            };
        }
    }
    adj
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsiReport {
    pub ssi: f64,
    pub mu_a: f64,
    pub mu_a_hat: f64,
    pub var_a: f64,
    pub var_a_hat: f64,
    pub cov: f64,
    pub c1: f64,
    pub c2: f64,
}

pub const SSI_K1: f64 = 0.01;
pub const SSI_K2: f64 = 0.03;
pub const SSI_L: f64 = 1.0;

/// Structural similarity of two adjacency matrices over all `|V|²` entries.
pub fn ssi(a: &[bool], a_hat: &[bool]) -> Result<SsiReport> {
    if a.len() != a_hat.len() {
        return Err(Error::Shape(format!("adjacency sizes {} and {}", a.len(), a_hat.len())));
    }
    let total = a.len() as f64;
    let x: Vec<f64> = a.iter().map(|&b| b as u8 as f64).collect();
    let y: Vec<f64> = a_hat.iter().map(|&b| b as u8 as f64).collect();
    let mu_a = x.iter().sum::<f64>() / total;
    let mu_a_hat = y.iter().sum::<f64>() / total;
    let denom = total - 1.0;
    let var_a = x.iter().map(|v| (v - mu_a) * (v - mu_a)).sum::<f64>() / denom;
    let var_a_hat = y.iter().map(|v| (v - mu_a_hat) * (v - mu_a_hat)).sum::<f64>() / denom;
    let cov = x.iter().zip(&y).map(|(u, v)| (u - mu_a) * (v - mu_a_hat)).sum::<f64>() / denom;
    let c1 = (SSI_K1 * SSI_L).powi(2);
    let c2 = (SSI_K2 * SSI_L).powi(2);
    let ssi = ((2.0 * mu_a * mu_a_hat + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_a_hat * mu_a_hat + c1) * (var_a + var_a_hat + c2));
    Ok(SsiReport { ssi, mu_a, mu_a_hat, var_a, var_a_hat, cov, c1, c2 })
}

/// Mean SSI of every window against the ground-truth snapshot active at the
/// window midpoint.
pub fn ssi_against_timeline(graph: &DynamicGraph, truth: &crate::synth::GraphTimeline) -> Result<f64> {
    let n = graph.num_nodes;
    if truth.num_nodes != n {
        return Err(Error::Shape(format!("graph has {n} nodes, truth {}", truth.num_nodes)));
    }
    let mut total = 0.0;
    for w in &graph.windows {
        let snap = truth.snapshot_at(0.5 * (w.start + w.end));
        let a: Vec<bool> = snap.adjacency(n).into_iter().flatten().collect();
        total += ssi(&a, &w.adjacency)?.ssi;
    }
    Ok(total / graph.windows.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    Random,
    SpatialOnly,
}

/// Erdős–Rényi graph with the given number of undirected edges; edge
/// probabilities are uniform over each node's random neighbors.
pub fn random_window(n: usize, edges: usize, start: f64, end: f64, theta: f64, rng: &mut rng::Rng) -> GraphWindow {
    let pairs = crate::synth::pair_count(n);
    let chosen = rand::seq::index::sample(rng, pairs, edges.min(pairs)).into_vec();
    let mut adjacency = vec![false; n * n];
    for idx in chosen {
        let (i, j) = crate::synth::pair_from_index(idx, n);
        adjacency[i * n + j] = true;
        adjacency[j * n + i] = true;
    }
    let mut probs = vec![0.0; n * n];
    for i in 0..n {
        let deg = (0..n).filter(|&j| adjacency[i * n + j]).count();
        for j in 0..n {
            if i == j {
                continue;
            }
            probs[i * n + j] = if deg == 0 {
                1.0 / (n - 1) as f64
            } else if adjacency[i * n + j] {
                1.0 / deg as f64
            } else {
                0.0
            };
        }
    }
    GraphWindow { start, end, theta, probs, adjacency }
}

/// Graph for an ablation mode. `full` is returned unchanged; `random`
/// replaces every window by an Erdős–Rényi draw with the same edge count;
/// `spatial_only` is a single window over the whole span estimated by `single`.
pub fn ablation_graph(
    mode: AblationMode,
    full: &DynamicGraph,
    seed: u64,
    single: impl FnOnce() -> Result<DynamicGraph>,
) -> Result<DynamicGraph> {
    match mode {
        AblationMode::Full => Ok(full.clone()),
        AblationMode::SpatialOnly => single(),
        AblationMode::Random => {
            let mut rng = rng::stream(seed, rng::streams::ABLATION);
            let n = full.num_nodes;
            let windows = full
                .windows
                .iter()
                .map(|w| random_window(n, w.edge_count(n), w.start, w.end, w.theta, &mut rng))
                .collect();
            Ok(DynamicGraph { num_nodes: n, windows })
        }
    }
}

/// `Σ_{i≠j}|C_ij| / Σ_i C_ii` for the Gram matrix of Gaussian-smoothed
/// trains (width = standard deviation of the smoothing kernel).
pub fn gram_diagnostic(trains: &[SpikeTrain], width: f64) -> Result<f64> {
    if !(width > 0.0) {
        return Err(Error::Validation("smoothing width must be positive".into()));
    }
    let n = trains.len();
    // Inner product of two unit Gaussians with std `width` is a Gaussian of
    // variance 2·width² in the spike-time difference.
    let var = 2.0 * width * width;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * var).sqrt();
    let reach = 10.0 * width;
    let inner = |a: &[f64], b: &[f64]| {
        let mut start = 0;
        let mut total = 0.0;
        for &x in a {
            while start < b.len() && b[start] < x - reach {
                start += 1;
            }
            for &y in &b[start..] {
                if y > x + reach {
                    break;
                }
                total += norm * (-(x - y) * (x - y) / (2.0 * var)).exp();
            }
        }
        total
    };
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        diag += inner(trains[i].times(), trains[i].times());
        for j in i + 1..n {
            off += 2.0 * inner(trains[i].times(), trains[j].times()).abs();
        }
    }
    if diag == 0.0 {
        return Err(Error::InsufficientData("all trains are empty".into()));
    }
    Ok(off / diag)
}

/// Membrane-basis estimator: for each sample window, projects the
/// kernel-smoothed event signal of every node onto the basis, then selects
/// each node's neighborhood by group lasso and combines them.
pub fn lasso_window(
    events: &EventSequence,
    basis: &MembraneBasis,
    signal_tau: f64,
    sub_windows: usize,
    start: f64,
    end: f64,
    rule: CombineRule,
    cfg: &AdmmConfig,
) -> Result<GraphWindow> {
    let n = events.num_types();
    let trains = crate::events::encode_as_spikes(events);
    let lo = basis.times.partition_point(|&t| t < start);
    let hi = basis.times.partition_point(|&t| t <= end);
    let times = &basis.times[lo..hi];
    if times.len() < 2 {
        return Err(Error::InsufficientData("window holds fewer than two grid points".into()));
    }
    let k = sub_windows.max(1);
    let width = (end - start) / k as f64;
    let signals: Vec<Vec<f64>> = trains.iter().map(|s| times.iter().map(|&t| smoothed_count(s.times(), signal_tau, t)).collect()).collect();
    let mut scores = vec![vec![Vec::new(); n]; k];
    for (w, row) in scores.iter_mut().enumerate() {
        let a = start + w as f64 * width;
        let b = a + width;
        let s0 = times.partition_point(|&t| t < a);
        let s1 = times.partition_point(|&t| t <= b).max(s0);
        for (node, out) in row.iter_mut().enumerate() {
            *out = basis
                .traces
                .iter()
                .map(|v| trapezoid_product(&times[s0..s1], &signals[node][s0..s1], &v[lo + s0..lo + s1]))
                .collect::<Result<Vec<f64>>>()?;
        }
    }
    let mut sets = Vec::with_capacity(n);
    let mut probs = vec![0.0; n * n];
    for j in 0..n {
        let entry = group_lasso_neighborhood(&scores, j, None, None, cfg)?;
        let total: f64 = entry.block_norms.iter().sum();
        for (&c, &b) in entry.candidates.iter().zip(&entry.block_norms) {
            probs[j * n + c] = if total > 0.0 { b / total } else { 1.0 / (n - 1) as f64 };
        }
        sets.push(entry.neighbors);
    }
    let adjacency = combine_neighborhoods(&sets, rule);
    Ok(GraphWindow { start, end, theta: 0.0, probs, adjacency })
}
