//! Conditional-intensity model over event types.
//!
//! The intensity of type `v` after the most recent event `t_n` is
//!
//! ```text
//! λ^v(t) = softplus(w^v · h^v(t) + δ^v (t - t_n) + b^v),
//! h^v(t) = Σ_{u ∈ N(v)} α_uv(t) h_u(t_n),
//! ```
//!
//! where `h_u` is the spiking embedding of node `u` (filtered output spikes
//! and membrane potentials of its neuron block) and `α_uv` are the dynamic
//! graph's edge probabilities normalized over the neighbors of `v`.
//! Training maximizes a Monte-Carlo estimate of the log-likelihood.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{EventSequence, SpikeTrain};
use crate::graph::DynamicGraph;
use crate::rng;
use crate::snn::{LifParams, MembraneTraces};

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of softplus on `(0, ∞)`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn log_softplus(x: f64) -> f64 {
    if x < -30.0 {
        x
    } else {
        softplus(x).ln()
    }
}

/// `d/dx log softplus(x)`.
fn dlog_softplus(x: f64) -> f64 {
    if x < -30.0 {
        1.0
    } else {
        sigmoid(x) / softplus(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// Embeddings hold their value from the last event until the next.
    #[default]
    Frozen,
    /// Between events the spike channel decays with the filter constant and
    /// potentials relax toward rest.
    Decay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub neurons_per_node: usize,
    pub filter_tau: f64,
    pub mode: EmbeddingMode,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { neurons_per_node: 4, filter_tau: 0.5, mode: EmbeddingMode::Frozen }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons_per_node == 0 {
            return Err(Error::Validation("neurons_per_node must be at least 1".into()));
        }
        if !(self.filter_tau > 0.0) {
            return Err(Error::Validation("filter_tau must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        2 * self.neurons_per_node
    }
}

/// `Σ_{s < t} exp(-(t - s)/τ)`.
pub fn filtered_spikes(times: &[f64], t: f64, tau: f64) -> f64 {
    let end = times.partition_point(|&s| s < t);
    times[..end].iter().rev().take_while(|&&s| t - s < 40.0 * tau).map(|&s| (-(t - s) / tau).exp()).sum()
}

/// Embeddings of every node at time `t` from the neuron spike trains and
/// the potentials of all neurons at `t`.
pub fn compute_embeddings(spikes: &[SpikeTrain], potentials: &[f64], t: f64, horizon: f64, cfg: &EmbeddingConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain(format!("t={t} outside [0, {horizon}]")));
    }
    let r = cfg.neurons_per_node;
    if spikes.len() != potentials.len() || !spikes.len().is_multiple_of(r) {
        return Err(Error::Shape(format!("{} trains, {} potentials, block size {r}", spikes.len(), potentials.len())));
    }
    Ok((0..spikes.len() / r)
        .map(|u| {
            let block = u * r..(u + 1) * r;
            block
                .clone()
                .map(|i| filtered_spikes(spikes[i].times(), t, cfg.filter_tau))
                .chain(block.map(|i| potentials[i]))
                .collect()
        })
        .collect())
}

/// Node embeddings at a sorted list of reference times.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub num_nodes: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    values: Vec<f32>,
    mode: EmbeddingMode,
    filter_tau: f64,
    v_rest: f64,
    leak_rate: f64,
}

impl EmbeddingTable {
    /// `traces` must sample every neuron, in order, at the reference times.
    pub fn from_run(spikes: &[SpikeTrain], traces: &MembraneTraces, cfg: &EmbeddingConfig, lif: &LifParams) -> Result<Self> {
        cfg.validate()?;
        let r = cfg.neurons_per_node;
        let n_neurons = spikes.len();
        if !n_neurons.is_multiple_of(r) || traces.neurons.len() != n_neurons || traces.neurons.iter().enumerate().any(|(k, &i)| k != i) {
            return Err(Error::Shape("traces must cover every neuron in order".into()));
        }
        let num_nodes = n_neurons / r;
        let dim = cfg.dim();
        let samples = traces.times.len();
        let mut values = vec![0.0; samples * num_nodes * dim];
        let decay_tau = cfg.filter_tau;
        for (i, train) in spikes.iter().enumerate() {
            let (u, slot) = (i / r, i % r);
            let times = train.times();
            let mut acc = 0.0;
            let mut stamp = 0.0;
            let mut next = 0;
            for (s, &t) in traces.times.iter().enumerate() {
                while next < times.len() && times[next] < t {
                    acc = acc * (-(times[next] - stamp) / decay_tau).exp() + 1.0;
                    stamp = times[next];
                    next += 1;
                }
                let base = (s * num_nodes + u) * dim;
                values[base + slot] = (acc * (-(t - stamp) / decay_tau).exp()) as f32;
                values[base + r + slot] = traces.row(s)[i];
            }
        }
        Ok(Self {
            num_nodes,
            dim,
            times: traces.times.clone(),
            values,
            mode: cfg.mode,
            filter_tau: cfg.filter_tau,
            v_rest: lif.v_rest,
            leak_rate: lif.leak_rate(),
        })
    }

    /// Table with all-zero spike channels and resting potentials.
    pub fn resting(num_nodes: usize, times: Vec<f64>, cfg: &EmbeddingConfig, lif: &LifParams) -> Self {
        let dim = cfg.dim();
        let r = cfg.neurons_per_node;
        let mut values = vec![0.0f32; times.len() * num_nodes * dim];
        for chunk in values.chunks_mut(dim) {
            chunk[r..].fill(lif.v_rest as f32);
        }
        Self { num_nodes, dim, times, values, mode: cfg.mode, filter_tau: cfg.filter_tau, v_rest: lif.v_rest, leak_rate: lif.leak_rate() }
    }

    pub fn get(&self, k: usize, u: usize) -> &[f32] {
        let base = (k * self.num_nodes + u) * self.dim;
        &self.values[base..base + self.dim]
    }

    pub fn get_mut(&mut self, k: usize, u: usize) -> &mut [f32] {
        let base = (k * self.num_nodes + u) * self.dim;
        &mut self.values[base..base + self.dim]
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    /// Adds `scale · h_u(t)` to `out`, starting from reference `k`.
    fn accumulate(&self, k: usize, u: usize, t: f64, scale: f64, out: &mut [f64]) {
        let h = self.get(k, u);
        match self.mode {
            EmbeddingMode::Frozen => {
                for (o, &x) in out.iter_mut().zip(h) {
                    *o += scale * x as f64;
                }
            }
            EmbeddingMode::Decay => {
                let elapsed = (t - self.times[k]).max(0.0);
                let r = self.dim / 2;
                let fs = (-elapsed / self.filter_tau).exp();
                let fv = (-self.leak_rate * elapsed).exp();
                for j in 0..r {
                    out[j] += scale * h[j] as f64 * fs;
                    out[r + j] += scale * (self.v_rest + (h[r + j] as f64 - self.v_rest) * fv);
                }
            }
        }
    }
}

/// Normalized neighbor weights `α_uv` per graph window.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub num_nodes: usize,
    ends: Vec<f64>,
    lists: Vec<Vec<Vec<(usize, f64)>>>,
}

impl Attention {
    pub fn from_graph(graph: &DynamicGraph) -> Self {
        let n = graph.num_nodes;
        let lists = graph
            .windows
            .iter()
            .map(|w| {
                (0..n)
                    .map(|v| {
                        let nbrs: Vec<usize> = (0..n).filter(|&u| u != v && w.edge(n, v, u)).collect();
                        let total: f64 = nbrs.iter().map(|&u| w.prob(n, v, u)).sum();
                        nbrs.iter()
                            .map(|&u| (u, if total > 0.0 { w.prob(n, v, u) / total } else { 1.0 / nbrs.len() as f64 }))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { num_nodes: n, ends: graph.windows.iter().map(|w| w.end).collect(), lists }
    }

    /// No neighbors anywhere: the embedding term vanishes.
    pub fn isolated(num_nodes: usize) -> Self {
        Self { num_nodes, ends: vec![f64::INFINITY], lists: vec![vec![Vec::new(); num_nodes]] }
    }

    pub fn window_index(&self, t: f64) -> usize {
        self.ends.partition_point(|&e| e <= t).min(self.ends.len() - 1)
    }

    pub fn neighbors(&self, window: usize, v: usize) -> &[(usize, f64)] {
        &self.lists[window][v]
    }

    /// Window boundaries strictly inside `(a, b)`.
    pub fn breaks_between(&self, a: f64, b: f64) -> Vec<f64> {
        self.ends.iter().copied().filter(|&e| e > a && e < b).collect()
    }
}

/// Per-type parameters `(w^v, δ^v, b^v)`; also used to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityParams {
    pub num_types: usize,
    pub dim: usize,
    pub w: Vec<f64>,
    pub delta: Vec<f64>,
    pub bias: Vec<f64>,
}

impl IntensityParams {
    pub fn zeros(num_types: usize, dim: usize) -> Self {
        Self { num_types, dim, w: vec![0.0; num_types * dim], delta: vec![0.0; num_types], bias: vec![0.0; num_types] }
    }

    /// Zero weights and modulation; biases at the per-type empirical rates.
    pub fn from_rates(seq: &EventSequence, dim: usize) -> Self {
        let mut p = Self::zeros(seq.num_types(), dim);
        let t = seq.horizon().max(f64::MIN_POSITIVE);
        for (b, &c) in p.bias.iter_mut().zip(&seq.counts()) {
            *b = softplus_inv((c as f64 / t).max(1e-3));
        }
        p
    }

    pub fn w(&self, v: usize) -> &[f64] {
        &self.w[v * self.dim..(v + 1) * self.dim]
    }

    pub fn w_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.w[v * self.dim..(v + 1) * self.dim]
    }

    fn flat(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.delta).chain(&self.bias)
    }

    fn flat_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.delta.iter_mut()).chain(self.bias.iter_mut())
    }

    pub fn norm(&self) -> f64 {
        self.flat().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().all(|x| x.is_finite())
    }

    /// `self += a · other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.flat_mut().zip(other.flat()) {
            *x += a * y;
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.flat().copied().collect()
    }

    pub fn set_from(&mut self, values: &[f64]) {
        for (x, &y) in self.flat_mut().zip(values) {
            *x = y;
        }
    }

    pub fn pre_activation(&self, v: usize, h: &[f64], elapsed: f64) -> f64 {
        self.w(v).iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + self.delta[v] * elapsed + self.bias[v]
    }
}

/// `softplus(w·h + δ(t - t_n) + b)`.
pub fn intensity(params: &IntensityParams, v: usize, t: f64, t_n: f64, h: &[f64]) -> Result<f64> {
    if !(t >= t_n) {
        return Err(Error::Domain(format!("t={t} precedes last event {t_n}")));
    }
    Ok(softplus(params.pre_activation(v, h, t - t_n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum McScheme {
    /// One uniform point in each of `num_mc` equal sub-intervals.
    #[default]
    Stratified,
    /// `num_mc` independent uniform points.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub num_mc: usize,
    pub neg_sample_size: usize,
    pub scheme: McScheme,
    /// Scale sampled negative types by `(V - 1)/k` so the survival term is
    /// an unbiased estimate of the sum over all types.
    pub reweight_negatives: bool,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self { num_mc: 10, neg_sample_size: 8, scheme: McScheme::Stratified, reweight_negatives: true }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_mc == 0 {
            return Err(Error::Validation("num_mc must be at least 1".into()));
        }
        Ok(())
    }

    /// Every type in every interval: an estimate of the full likelihood.
    pub fn exhaustive(num_mc: usize) -> Self {
        Self { num_mc, neg_sample_size: usize::MAX, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LlValue {
    pub value: f64,
    pub events: usize,
    /// Observed events whose intensity underflowed to zero in floating point;
    /// their log term is the (finite) log of the unrounded softplus.
    pub underflows: usize,
}

/// An event sequence with its embeddings and attention: everything the
/// likelihood needs besides parameters. `table.times` must be `0` followed
/// by every event time.
#[derive(Debug, Clone, Copy)]
pub struct TppData<'a> {
    pub seq: &'a EventSequence,
    pub table: &'a EmbeddingTable,
    pub attention: &'a Attention,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn interval_rng(seed: u64, i: usize) -> rng::Rng {
    rng::stream(seed ^ (i as u64 + 1).wrapping_mul(GOLDEN), rng::streams::MONTE_CARLO)
}

impl<'a> TppData<'a> {
    pub fn new(seq: &'a EventSequence, table: &'a EmbeddingTable, attention: &'a Attention) -> Result<Self> {
        if table.times.len() != seq.len() + 1 {
            return Err(Error::Shape(format!("{} reference times for {} events", table.times.len(), seq.len())));
        }
        if table.num_nodes != seq.num_types() || attention.num_nodes != seq.num_types() {
            return Err(Error::Shape("embedding, attention and sequence disagree on node count".into()));
        }
        Ok(Self { seq, table, attention })
    }

    pub fn num_intervals(&self) -> usize {
        self.seq.len() + 1
    }

    /// `[start, end]` of interval `i`; the last interval runs to the horizon.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let ev = self.seq.events();
        let start = if i == 0 { 0.0 } else { ev[i - 1].t };
        let end = if i < ev.len() { ev[i].t } else { self.seq.horizon() };
        (start, end)
    }

    /// Aggregated neighbor embedding `h^v(t)` for the interval starting at
    /// reference `k`.
    pub fn aggregate(&self, k: usize, v: usize, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        let w = self.attention.window_index(t);
        for &(u, a) in self.attention.neighbors(w, v) {
            self.table.accumulate(k, u, t, a, out);
        }
    }

    pub fn intensity_at(&self, params: &IntensityParams, k: usize, v: usize, t: f64) -> f64 {
        let mut h = vec![0.0; self.table.dim];
        self.aggregate(k, v, t, &mut h);
        softplus(params.pre_activation(v, &h, t - self.table.times[k]))
    }

    pub fn log_likelihood(&self, params: &IntensityParams, cfg: &LikelihoodConfig, seed: u64) -> Result<LlValue> {
        self.evaluate(params, cfg, seed, 0..self.num_intervals(), None)
    }

    /// Log-likelihood and its gradient, under the same sample points.
    pub fn gradient(&self, params: &IntensityParams, cfg: &LikelihoodConfig, seed: u64, intervals: Range<usize>) -> Result<(LlValue, IntensityParams)> {
        let mut g = IntensityParams::zeros(params.num_types, params.dim);
        let ll = self.evaluate(params, cfg, seed, intervals, Some(&mut g))?;
        Ok((ll, g))
    }

    pub fn evaluate(
        &self,
        params: &IntensityParams,
        cfg: &LikelihoodConfig,
        seed: u64,
        intervals: Range<usize>,
        mut grad: Option<&mut IntensityParams>,
    ) -> Result<LlValue> {
        cfg.validate()?;
        let nv = self.seq.num_types();
        if params.num_types != nv || params.dim != self.table.dim {
            return Err(Error::Shape(format!(
                "parameters for {}x{}, data {}x{}",
                params.num_types, params.dim, nv, self.table.dim
            )));
        }
        let n_events = self.seq.len();
        let dim = self.table.dim;
        let m = cfg.num_mc;
        let mut out = LlValue::default();
        let mut h = vec![0.0; dim];
        let mut points = vec![0.0; m];
        let mut types: Vec<(usize, f64)> = Vec::with_capacity(nv);
        for i in intervals {
            let (start, end) = self.interval(i);
            let width = end - start;
            let mut rng = interval_rng(seed, i);
            let observed = (i < n_events).then(|| self.seq.events()[i].e);

            types.clear();
            match observed {
                Some(e) => {
                    types.push((e, 1.0));
                    let others = nv - 1;
                    let k = cfg.neg_sample_size.min(others);
                    let weight = if cfg.reweight_negatives && k > 0 { others as f64 / k as f64 } else { 1.0 };
                    let mut chosen: Vec<usize> = if k == others {
                        (0..others).collect()
                    } else {
                        rand::seq::index::sample(&mut rng, others, k).into_vec()
                    };
                    chosen.sort_unstable();
                    types.extend(chosen.into_iter().map(|j| (if j < e { j } else { j + 1 }, weight)));
                }
                None => types.extend((0..nv).map(|v| (v, 1.0))),
            }
            for (s, p) in points.iter_mut().enumerate() {
                let u: f64 = rng.random();
                *p = match cfg.scheme {
                    McScheme::Stratified => start + (s as f64 + u) / m as f64 * width,
                    McScheme::Uniform => start + u * width,
                };
            }

            for &(v, weight) in &types {
                if observed == Some(v) {
                    self.aggregate(i, v, end, &mut h);
                    let x = params.pre_activation(v, &h, width);
                    if softplus(x) == 0.0 {
                        out.underflows += 1;
                    }
                    out.value += log_softplus(x);
                    out.events += 1;
                    if let Some(g) = grad.as_deref_mut() {
                        let d = dlog_softplus(x);
                        add_scaled(g.w_mut(v), &h, d);
                        g.delta[v] += d * width;
                        g.bias[v] += d;
                    }
                }
                let scale = weight * width / m as f64;
                let mut cached = usize::MAX;
                for &t in &points {
                    let win = self.attention.window_index(t);
                    if self.table.mode == EmbeddingMode::Decay || win != cached {
                        self.aggregate(i, v, t, &mut h);
                        cached = win;
                    }
                    let elapsed = t - start;
                    let x = params.pre_activation(v, &h, elapsed);
                    out.value -= scale * softplus(x);
                    if let Some(g) = grad.as_deref_mut() {
                        let d = -scale * sigmoid(x);
                        add_scaled(g.w_mut(v), &h, d);
                        g.delta[v] += d * elapsed;
                        g.bias[v] += d;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn add_scaled(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub epochs: usize,
    pub step: f64,
    pub clip: f64,
    /// Length of the training batches, seconds.
    pub batch_window: f64,
    /// Consecutive epochs of falling likelihood that stop training.
    pub patience: usize,
    pub likelihood: LikelihoodConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { epochs: 50, step: 1e-2, clip: 10.0, batch_window: 100.0, patience: 10, likelihood: LikelihoodConfig::default() }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.likelihood.validate()?;
        if !(self.step > 0.0) || !(self.clip > 0.0) || !(self.batch_window > 0.0) {
            return Err(Error::Validation("step, clip and batch_window must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitReport {
    /// Training log-likelihood of each epoch: the sum over its batches, each
    /// evaluated just before its step.
    pub epoch_ll: Vec<f64>,
    pub diverged: bool,
    pub underflows: usize,
}

/// Interval ranges whose end times fall in consecutive batch windows.
pub fn batches(data: &TppData, window: f64) -> Vec<Range<usize>> {
    let total = data.num_intervals();
    let mut out = Vec::new();
    let mut start = 0;
    while start < total {
        let limit = ((data.interval(start).1 / window).floor() + 1.0) * window;
        let mut end = start + 1;
        while end < total && data.interval(end).1 < limit {
            end += 1;
        }
        out.push(start..end);
        start = end;
    }
    out
}

/// Gradient ascent on the Monte-Carlo log-likelihood, one clipped step per
/// batch window, fresh sample points every step.
pub fn fit_intensity(data: &TppData, init: IntensityParams, cfg: &FitConfig, seed: u64) -> Result<(IntensityParams, FitReport)> {
    cfg.validate()?;
    let mut params = init;
    let mut report = FitReport::default();
    let groups = batches(data, cfg.batch_window);
    let mut falling = 0;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut underflows = 0;
        for (b, range) in groups.iter().enumerate() {
            let step_seed = seed.wrapping_add(((epoch * groups.len() + b) as u64 + 1).wrapping_mul(GOLDEN));
            let (ll, mut g) = data.gradient(&params, &cfg.likelihood, step_seed, range.clone())?;
            total += ll.value;
            underflows += ll.underflows;
            let norm = g.norm();
            if !norm.is_finite() {
                report.diverged = true;
                return Ok((params, report));
            }
            if norm > cfg.clip {
                let s = cfg.clip / norm;
                g.flat_mut().for_each(|x| *x *= s);
            }
            params.axpy(cfg.step, &g);
        }
        report.underflows = underflows;
        if report.epoch_ll.last().is_some_and(|&prev| total < prev) {
            falling += 1;
        } else {
            falling = 0;
        }
        report.epoch_ll.push(total);
        if !total.is_finite() || falling >= cfg.patience {
            report.diverged = true;
            break;
        }
    }
    Ok((params, report))
}

/// Per-type intensities after an origin event, as a function of time.
pub trait IntensitySurface {
    fn num_types(&self) -> usize;
    fn rates(&self, t: f64, out: &mut [f64]);
    /// Times in `(a, b)` at which the rates may jump.
    fn breaks(&self, _a: f64, _b: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// The fitted model's intensities after the event at reference `k`.
pub struct SdgnSurface<'a> {
    data: TppData<'a>,
    params: &'a IntensityParams,
    k: usize,
    /// `w^v · h^v + b^v` per attention window, frozen mode only.
    offsets: Vec<Option<Vec<f64>>>,
}

impl<'a> SdgnSurface<'a> {
    pub fn new(data: TppData<'a>, params: &'a IntensityParams, k: usize) -> Self {
        let windows = data.attention.ends.len();
        Self { data, params, k, offsets: vec![None; windows] }
    }

    fn offsets_for(&mut self, win: usize, t: f64) -> &[f64] {
        if self.offsets[win].is_none() {
            let nv = self.params.num_types;
            let mut h = vec![0.0; self.params.dim];
            let mut off = vec![0.0; nv];
            for (v, o) in off.iter_mut().enumerate() {
                self.data.aggregate(self.k, v, t, &mut h);
                *o = self.params.pre_activation(v, &h, 0.0);
            }
            self.offsets[win] = Some(off);
        }
        self.offsets[win].as_deref().expect("filled above")
    }

    /// Pre-computes frozen offsets for every window so `rates` can take `&self`.
    pub fn prepared(mut self, horizon_cap: f64) -> Self {
        if self.data.table.mode == EmbeddingMode::Frozen {
            let origin = self.data.table.times[self.k];
            let mut t = origin;
            loop {
                let win = self.data.attention.window_index(t);
                self.offsets_for(win, t);
                let end = self.data.attention.ends[win];
                if end >= horizon_cap || !end.is_finite() || win + 1 >= self.data.attention.ends.len() {
                    break;
                }
                t = end;
            }
        }
        self
    }
}

impl IntensitySurface for SdgnSurface<'_> {
    fn num_types(&self) -> usize {
        self.params.num_types
    }

    fn rates(&self, t: f64, out: &mut [f64]) {
        let origin = self.data.table.times[self.k];
        let elapsed = t - origin;
        let win = self.data.attention.window_index(t);
        if let (EmbeddingMode::Frozen, Some(off)) = (self.data.table.mode, &self.offsets[win]) {
            for (v, o) in out.iter_mut().enumerate() {
                *o = softplus(off[v] + self.params.delta[v] * elapsed);
            }
            return;
        }
        for (v, o) in out.iter_mut().enumerate() {
            *o = self.data.intensity_at(self.params, self.k, v, t);
        }
    }

    fn breaks(&self, a: f64, b: f64) -> Vec<f64> {
        self.data.attention.breaks_between(a, b)
    }
}

/// `Σ_v λ^v(t) · exp(-∫_{t_n}^t Σ_v λ^v)`, the cumulative intensity by
/// stratified Monte Carlo with `num_mc` points.
pub fn next_event_density(surface: &impl IntensitySurface, t_n: f64, t: f64, num_mc: usize, seed: u64) -> Result<f64> {
    if !(t >= t_n) {
        return Err(Error::Domain(format!("t={t} precedes last event {t_n}")));
    }
    let nv = surface.num_types();
    let mut r = vec![0.0; nv];
    surface.rates(t, &mut r);
    let total: f64 = r.iter().sum();
    let mut rng = rng::stream(seed, rng::streams::MONTE_CARLO);
    let m = num_mc.max(1);
    let width = t - t_n;
    let mut cum = 0.0;
    for s in 0..m {
        let x = t_n + (s as f64 + rng.random::<f64>()) / m as f64 * width;
        surface.rates(x, &mut r);
        cum += r.iter().sum::<f64>();
    }
    Ok(total * (-cum * width / m as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub time: f64,
    pub event_type: usize,
    /// Probability mass beyond the cap.
    pub tail_mass: f64,
    /// True when the tail mass exceeds 1%.
    pub truncated: bool,
}

/// Expected next event time `t_n + ∫ s f(t_n + s) ds` over `[t_n, cap]` and
/// the most intense type at that time. The integrals are computed jointly
/// with the cumulative intensity by adaptive step-doubling RK4.
pub fn predict_next(surface: &impl IntensitySurface, t_n: f64, cap: f64) -> Result<Prediction> {
    if !(cap > t_n) {
        return Err(Error::Domain(format!("cap {cap} must exceed last event {t_n}")));
    }
    let nv = surface.num_types();
    let mut buf = vec![0.0; nv];
    let mut total = |t: f64| {
        surface.rates(t, &mut buf);
        buf.iter().sum::<f64>()
    };
    // y = (Ψ, ∫ s f, ∫ f)
    let deriv = |t: f64, psi: f64, total: &mut dyn FnMut(f64) -> f64| {
        let l = total(t);
        let f = l * (-psi).exp();
        [l, (t - t_n) * f, f]
    };
    let rk4 = |t: f64, h: f64, y: [f64; 3], total: &mut dyn FnMut(f64) -> f64| {
        let k1 = deriv(t, y[0], total);
        let k2 = deriv(t + h / 2.0, y[0] + h / 2.0 * k1[0], total);
        let k3 = deriv(t + h / 2.0, y[0] + h / 2.0 * k2[0], total);
        let k4 = deriv(t + h, y[0] + h * k3[0], total);
        let mut out = y;
        for j in 0..3 {
            out[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out
    };
    let mut stops = surface.breaks(t_n, cap);
    stops.push(cap);
    let mut y = [0.0; 3];
    let mut t = t_n;
    let l0 = total(t_n);
    let mut h = if l0 > 0.0 { 0.1 / l0 } else { (cap - t_n) * 1e-3 };
    let tol = 1e-10;
    'segments: for &stop in &stops {
        while t < stop {
            if y[0] > 40.0 {
                break 'segments;
            }
            let step = h.min(stop - t);
            let full = rk4(t, step, y, &mut total);
            let half = rk4(t, step / 2.0, y, &mut total);
            let half = rk4(t + step / 2.0, step / 2.0, half, &mut total);
            let err = (0..3).map(|j| (full[j] - half[j]).abs()).fold(0.0, f64::max) / 15.0;
            if err <= tol || step < 1e-12 * (1.0 + t.abs()) {
                for j in 0..3 {
                    y[j] = half[j] + (half[j] - full[j]) / 15.0;
                }
                t += step;
                h = if err > 0.0 { step * (0.9 * (tol / err).powf(0.2)).min(4.0) } else { step * 4.0 };
            } else {
                h = step * (0.9 * (tol / err).powf(0.2)).max(0.1);
            }
        }
    }
    let tail = (-y[0]).exp();
    let time = t_n + y[1];
    surface.rates(time.min(cap), &mut buf);
    let event_type = (0..nv).max_by(|&a, &b| buf[a].total_cmp(&buf[b]).then(b.cmp(&a))).unwrap_or(0);
    Ok(Prediction { time, event_type, tail_mass: tail, truncated: tail > 0.01 })
}

pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    let sse: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// Constant per-type rates.
pub struct ConstantRates(pub Vec<f64>);

impl IntensitySurface for ConstantRates {
    fn num_types(&self) -> usize {
        self.0.len()
    }

    fn rates(&self, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
}
