//! Regularized spike-timing-dependent plasticity.
//!
//! A pair with timing difference `Δt = t_post - t_pre` changes the weight by
//!
//! ```text
//! Δw = η · STDP(Δt) · (1 - w/w_max)^reg_alpha · exp(-reg_beta · |w|)
//! ```
//!
//! with a double-exponential pair kernel `STDP`. Pairing is nearest-neighbor:
//! only the most recent spike of the partner neuron is used.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LearningRate {
    #[default]
    Constant,
    /// `η_t = η / √t`, with `t` counting plasticity events from 1.
    InverseSqrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdpConfig {
    pub eta: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub reg_alpha: f64,
    pub reg_beta: f64,
    pub pairing_window: f64,
    pub schedule: LearningRate,
}

impl Default for StdpConfig {
    fn default() -> Self {
        let tau = 0.02;
        Self {
            eta: 0.01,
            a_plus: 1.0,
            a_minus: 1.05,
            tau_plus: tau,
            tau_minus: tau,
            reg_alpha: 2.0,
            reg_beta: 0.1,
            pairing_window: 5.0 * tau,
            schedule: LearningRate::Constant,
        }
    }
}

impl StdpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::Validation("eta must be positive".into()));
        }
        if !(self.tau_plus > 0.0 && self.tau_minus > 0.0) {
            return Err(Error::Validation("STDP time constants must be positive".into()));
        }
        if !(self.reg_alpha >= 1.0) {
            return Err(Error::Validation("reg_alpha must be at least 1".into()));
        }
        if !(self.reg_beta >= 0.0 && self.pairing_window >= 0.0) {
            return Err(Error::Validation("reg_beta and pairing_window must be non-negative".into()));
        }
        Ok(())
    }

    /// Learning rate for the `step`-th plasticity event (1-based).
    pub fn rate_at(&self, step: u64) -> f64 {
        match self.schedule {
            LearningRate::Constant => self.eta,
            LearningRate::InverseSqrt => self.eta / (step.max(1) as f64).sqrt(),
        }
    }
}

/// Pair kernel for `dt = t_post - t_pre`.
pub fn stdp_kernel(dt: f64, cfg: &StdpConfig) -> f64 {
    if dt > 0.0 {
        cfg.a_plus * (-dt / cfg.tau_plus).exp()
    } else if dt < 0.0 {
        -cfg.a_minus * (dt / cfg.tau_minus).exp()
    } else {
        0.0
    }
}

/// Weight change at learning rate `cfg.eta`.
pub fn weight_update(w: f64, dt: f64, cfg: &StdpConfig, w_max: f64) -> f64 {
    weight_update_at_rate(w, dt, cfg, w_max, cfg.eta)
}

pub fn weight_update_at_rate(w: f64, dt: f64, cfg: &StdpConfig, w_max: f64, eta: f64) -> f64 {
    let soft_bound = (1.0 - w / w_max).max(0.0).powf(cfg.reg_alpha);
    eta * stdp_kernel(dt, cfg) * soft_bound * (-cfg.reg_beta * w.abs()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub pre: usize,
    pub post: usize,
    pub w: f64,
}

/// Plastic weights on a fixed sparse topology.
#[derive(Debug, Clone, PartialEq)]
pub struct SynapseMatrix {
    num_neurons: usize,
    w_max: f64,
    pre: Vec<usize>,
    post: Vec<usize>,
    weights: Vec<f64>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
    lookup: BTreeMap<(usize, usize), usize>,
}

impl SynapseMatrix {
    pub fn new(num_neurons: usize, edges: &[WeightRecord], w_max: f64) -> Result<Self> {
        if !(w_max > 0.0) {
            return Err(Error::Validation("w_max must be positive".into()));
        }
        let mut m = Self {
            num_neurons,
            w_max,
            pre: Vec::with_capacity(edges.len()),
            post: Vec::with_capacity(edges.len()),
            weights: Vec::with_capacity(edges.len()),
            outgoing: vec![Vec::new(); num_neurons],
            incoming: vec![Vec::new(); num_neurons],
            lookup: BTreeMap::new(),
        };
        for r in edges {
            if r.pre >= num_neurons || r.post >= num_neurons {
                return Err(Error::Validation(format!("synapse {}->{} outside network", r.pre, r.post)));
            }
            if r.pre == r.post {
                return Err(Error::Validation(format!("self-synapse on neuron {}", r.pre)));
            }
            if !(r.w.abs() <= w_max) {
                return Err(Error::Validation(format!("weight {} exceeds w_max {w_max}", r.w)));
            }
            let id = m.weights.len();
            if m.lookup.insert((r.pre, r.post), id).is_some() {
                return Err(Error::Validation(format!("duplicate synapse {}->{}", r.pre, r.post)));
            }
            m.pre.push(r.pre);
            m.post.push(r.post);
            m.weights.push(r.w);
            m.outgoing[r.pre].push(id);
            m.incoming[r.post].push(id);
        }
        Ok(m)
    }

    pub fn empty(num_neurons: usize, w_max: f64) -> Self {
        Self::new(num_neurons, &[], w_max).expect("empty matrix is valid")
    }

    /// Each ordered pair is connected with probability `p_conn`; weights are
    /// uniform on `init`.
    pub fn random(num_neurons: usize, p_conn: f64, init: (f64, f64), w_max: f64, rng: &mut crate::rng::Rng) -> Result<Self> {
        let mut edges = Vec::new();
        for pre in 0..num_neurons {
            for post in 0..num_neurons {
                if pre != post && rng.random::<f64>() < p_conn {
                    let w = if init.1 > init.0 { rng.random_range(init.0..init.1) } else { init.0 };
                    edges.push(WeightRecord { pre, post, w: w.clamp(-w_max, w_max) });
                }
            }
        }
        Self::new(num_neurons, &edges, w_max)
    }

    pub fn num_neurons(&self) -> usize {
        self.num_neurons
    }

    pub fn num_synapses(&self) -> usize {
        self.weights.len()
    }

    pub fn w_max(&self) -> f64 {
        self.w_max
    }

    pub fn get(&self, pre: usize, post: usize) -> Option<f64> {
        self.lookup.get(&(pre, post)).map(|&id| self.weights[id])
    }

    pub fn weight(&self, id: usize) -> f64 {
        self.weights[id]
    }

    pub fn endpoints(&self, id: usize) -> (usize, usize) {
        (self.pre[id], self.post[id])
    }

    pub fn outgoing(&self, neuron: usize) -> &[usize] {
        &self.outgoing[neuron]
    }

    pub fn incoming(&self, neuron: usize) -> &[usize] {
        &self.incoming[neuron]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Adds `delta` with clamping to `[-w_max, w_max]`; returns the change applied.
    pub fn apply(&mut self, id: usize, delta: f64) -> f64 {
        let old = self.weights[id];
        let new = (old + delta).clamp(-self.w_max, self.w_max);
        self.weights[id] = new;
        new - old
    }

    pub fn records(&self) -> Vec<WeightRecord> {
        (0..self.weights.len())
            .map(|id| WeightRecord { pre: self.pre[id], post: self.post[id], w: self.weights[id] })
            .collect()
    }

    /// Dense `|w|` matrix indexed `[pre][post]`.
    pub fn magnitude_matrix(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.num_neurons]; self.num_neurons];
        for id in 0..self.weights.len() {
            m[self.pre[id]][self.post[id]] = self.weights[id].abs();
        }
        m
    }
}

pub fn write_weights<W: Write>(m: &SynapseMatrix, mut out: W) -> Result<()> {
    for r in m.records() {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_weights<R: BufRead>(source: R, num_neurons: usize, w_max: f64) -> Result<SynapseMatrix> {
    let mut edges = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: WeightRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        edges.push(r);
    }
    SynapseMatrix::new(num_neurons, &edges, w_max)
}

/// Most recent spike time of every neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct RecentSpikes {
    last: Vec<Option<f64>>,
}

impl RecentSpikes {
    pub fn new(num_neurons: usize) -> Self {
        Self { last: vec![None; num_neurons] }
    }

    pub fn last(&self, neuron: usize) -> Option<f64> {
        self.last[neuron]
    }

    pub fn record(&mut self, neuron: usize, t: f64) {
        self.last[neuron] = Some(t);
    }
}

/// Plasticity triggered by a spike of `neuron` at `t`: incoming synapses are
/// paired with their presynaptic neuron's last spike (potentiation side),
/// outgoing synapses with their target's last spike (depression side).
/// Returns `(synapse id, applied change)` for every synapse touched.
///
/// `recent` must not yet contain the triggering spike.
pub fn apply_on_spike(
    weights: &mut SynapseMatrix,
    cfg: &StdpConfig,
    eta: f64,
    neuron: usize,
    t: f64,
    recent: &RecentSpikes,
) -> Vec<(usize, f64)> {
    let w_max = weights.w_max;
    let mut changes = Vec::new();
    for k in 0..weights.incoming[neuron].len() {
        let id = weights.incoming[neuron][k];
        if let Some(t_pre) = recent.last(weights.pre[id]) {
            let dt = t - t_pre;
            if dt.abs() <= cfg.pairing_window {
                let delta = weight_update_at_rate(weights.weights[id], dt, cfg, w_max, eta);
                changes.push((id, weights.apply(id, delta)));
            }
        }
    }
    for k in 0..weights.outgoing[neuron].len() {
        let id = weights.outgoing[neuron][k];
        if let Some(t_post) = recent.last(weights.post[id]) {
            let dt = t_post - t;
            if dt.abs() <= cfg.pairing_window {
                let delta = weight_update_at_rate(weights.weights[id], dt, cfg, w_max, eta);
                changes.push((id, weights.apply(id, delta)));
            }
        }
    }
    changes
}

/// Weights observed after `events` plasticity events.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub events: f64,
    pub weights: Vec<f64>,
}

/// Least-squares slope of `log E‖w_T - w*‖²` against `log T`, with `w*` the
/// final snapshot of each trajectory and the expectation taken across
/// trajectories. All trajectories must share snapshot times.
pub fn convergence_slope_ensemble(trajectories: &[Vec<WeightSnapshot>]) -> Result<f64> {
    let first = trajectories.first().ok_or_else(|| Error::InsufficientData("no trajectories".into()))?;
    if first.len() < 5 {
        return Err(Error::InsufficientData(format!("{} snapshots, need at least 5", first.len())));
    }
    if trajectories.iter().any(|tr| tr.len() != first.len()) {
        return Err(Error::Shape("trajectories have different snapshot counts".into()));
    }
    let last = first.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..last {
        let mut mean = 0.0;
        for tr in trajectories {
            let reference = &tr[last].weights;
            mean += tr[k]
                .weights
                .iter()
                .zip(reference)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        mean /= trajectories.len() as f64;
        if mean > 0.0 && first[k].events > 0.0 {
            xs.push(first[k].events.ln());
            ys.push(mean.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData("fewer than two non-zero distances".into()));
    }
    Ok(crate::stats::ols_slope(&xs, &ys))
}

pub fn convergence_slope(snapshots: &[WeightSnapshot]) -> Result<f64> {
    convergence_slope_ensemble(std::slice::from_ref(&snapshots.to_vec()))
}
