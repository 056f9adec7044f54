//! Event-driven leaky integrate-and-fire network.
//!
//! Each neuron follows `τ_m dv/dt = -α(v - v_rest) + I_syn + I_ext (+ bias)`,
//! where every delivered spike adds `w·ε` to an exponentially decaying
//! current with rate `β`. Between deliveries the pair `(v, I)` has a closed
//! form, so quiescent neurons are updated lazily when touched. A neuron whose
//! potential could still reach threshold from its current state is "hot" and
//! advanced in global steps of [`adaptive_dt`]; crossings are resolved at step
//! boundaries. Spikes reach their targets after a fixed synaptic delay
//! through a time-ordered queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::SpikeTrain;
use crate::plasticity::{apply_on_spike, RecentSpikes, StdpConfig, SynapseMatrix, WeightSnapshot};

/// Exponents below this are dropped from kernel sums.
pub const KERNEL_CUTOFF: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifParams {
    pub tau_m: f64,
    pub leak_alpha: f64,
    pub v_rest: f64,
    pub v_th: f64,
    pub v_reset: f64,
    pub syn_epsilon: f64,
    pub syn_beta: f64,
    pub surrogate_sharpness: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_m: 0.02,
            leak_alpha: 1.0,
            v_rest: 0.0,
            v_th: 1.0,
            v_reset: 0.0,
            syn_epsilon: 1.0,
            syn_beta: 50.0,
            surrogate_sharpness: 2.0,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0 && self.leak_alpha > 0.0 && self.syn_beta > 0.0) {
            return Err(Error::Validation("tau_m, leak_alpha and syn_beta must be positive".into()));
        }
        if !(self.v_reset <= self.v_rest && self.v_rest < self.v_th) {
            return Err(Error::Validation("need v_reset <= v_rest < v_th".into()));
        }
        if !self.syn_epsilon.is_finite() {
            return Err(Error::Validation("syn_epsilon must be finite".into()));
        }
        Ok(())
    }

    /// Leak rate `α / τ_m` in 1/s.
    pub fn leak_rate(&self) -> f64 {
        self.leak_alpha / self.tau_m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub tau_min: f64,
    pub dt_max: f64,
    pub record_grid: f64,
    pub syn_delay: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { tau_min: 1e-4, dt_max: 1e-3, record_grid: 1e-3, syn_delay: 1e-3 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.dt_max > 0.0 && self.record_grid > 0.0) {
            return Err(Error::Validation("tau_min, dt_max and record_grid must be positive".into()));
        }
        if !(self.syn_delay > 0.0) {
            return Err(Error::Validation("syn_delay must be positive".into()));
        }
        Ok(())
    }
}

/// `min(τ_min / max|v|, dt_max)`, or `dt_max` when every potential is 0.
pub fn adaptive_dt(max_abs_v: f64, sim: &SimConfig) -> f64 {
    if max_abs_v > 0.0 {
        (sim.tau_min / max_abs_v).min(sim.dt_max)
    } else {
        sim.dt_max
    }
}

/// `σ'(v - v_th) · clip(α|v - v_th|, 0, 1)`.
pub fn surrogate_grad(v: f64, params: &LifParams) -> f64 {
    let x = (v - params.v_th).abs();
    let e = (-x).exp();
    e / ((1.0 + e) * (1.0 + e)) * (params.surrogate_sharpness * x).clamp(0.0, 1.0)
}

/// Smallest spike-time difference resolvable at potential resolution `epsilon`.
pub fn min_detectable_dt(params: &LifParams, max_v: f64, epsilon: f64) -> f64 {
    params.tau_m * epsilon / (params.leak_alpha * max_v)
}

/// Synaptic current of `neuron` at `t` summed directly over spike arrivals.
/// `arrivals[j]` holds the arrival times of presynaptic neuron `j`.
pub fn synaptic_current(arrivals: &[SpikeTrain], weights: &SynapseMatrix, params: &LifParams, neuron: usize, t: f64) -> f64 {
    let horizon = KERNEL_CUTOFF / params.syn_beta;
    let mut total = 0.0;
    for &id in weights.incoming(neuron) {
        let (pre, _) = weights.endpoints(id);
        let times = arrivals[pre].times();
        let end = times.partition_point(|&s| s <= t);
        let start = times[..end].partition_point(|&s| s < t - horizon);
        let sum: f64 = times[start..end].iter().map(|&s| (-params.syn_beta * (t - s)).exp()).sum();
        total += weights.weight(id) * params.syn_epsilon * sum;
    }
    total
}

/// `(e^{-βh} - e^{-ah}) / (a - β)`: potential (times τ_m) reached after `h`
/// from a unit current decaying at `beta` under leak rate `a`.
fn kernel_response(a: f64, beta: f64, h: f64) -> f64 {
    let d = a - beta;
    if (d * h).abs() < 1e-8 {
        h * (-beta * h).exp() * (1.0 - 0.5 * d * h)
    } else {
        -(-beta * h).exp() * (-d * h).exp_m1() / d
    }
}

/// Peak over `h >= 0` of [`kernel_response`].
fn kernel_response_peak(a: f64, beta: f64) -> f64 {
    let d = a - beta;
    let s = if (d / beta).abs() < 1e-12 { 1.0 / a } else { (a / beta).ln() / d };
    kernel_response(a, beta, s)
}

/// Fixed-weight projection of external input channels onto neurons.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputProjection {
    targets: Vec<Vec<(usize, f64)>>,
}

impl InputProjection {
    pub fn new(targets: Vec<Vec<(usize, f64)>>) -> Self {
        Self { targets }
    }

    /// Channel `c` drives neurons `c·block .. (c+1)·block` with `weight`.
    pub fn blocks(channels: usize, block: usize, weight: f64) -> Self {
        Self::new((0..channels).map(|c| (c * block..(c + 1) * block).map(|n| (n, weight)).collect()).collect())
    }

    pub fn num_channels(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self, channel: usize) -> &[(usize, f64)] {
        &self.targets[channel]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub params: LifParams,
    pub sim: SimConfig,
    pub synapses: SynapseMatrix,
    pub inputs: InputProjection,
    /// Constant drive per neuron; zero unless set explicitly.
    pub bias: Vec<f64>,
    pub plasticity: Option<StdpConfig>,
}

impl Network {
    pub fn new(params: LifParams, sim: SimConfig, synapses: SynapseMatrix, inputs: InputProjection) -> Result<Self> {
        params.validate()?;
        sim.validate()?;
        let n = synapses.num_neurons();
        for c in 0..inputs.num_channels() {
            if inputs.targets(c).iter().any(|&(k, _)| k >= n) {
                return Err(Error::Validation(format!("input channel {c} targets a missing neuron")));
            }
        }
        Ok(Self { params, sim, synapses, inputs, bias: vec![0.0; n], plasticity: None })
    }

    pub fn with_plasticity(mut self, cfg: StdpConfig) -> Result<Self> {
        cfg.validate()?;
        self.plasticity = Some(cfg);
        Ok(self)
    }

    pub fn num_neurons(&self) -> usize {
        self.synapses.num_neurons()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Neuron(usize),
    Input(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pending {
    pub time: f64,
    pub source: Source,
    pub spike_index: usize,
    seq: u64,
}

impl Eq for Pending {}

impl Ord for Pending {
    // Reversed so that `BinaryHeap` pops the earliest delivery first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Potentials and currents are stored as of `last_update[i]`.
#[derive(Debug, Clone)]
pub struct LifNetworkState {
    pub potentials: Vec<f64>,
    pub currents: Vec<f64>,
    pub last_update: Vec<f64>,
    pub pending: BinaryHeap<Pending>,
    pub clock: f64,
    seq: u64,
}

impl LifNetworkState {
    fn new(n: usize, v_rest: f64) -> Self {
        Self {
            potentials: vec![v_rest; n],
            currents: vec![0.0; n],
            last_update: vec![0.0; n],
            pending: BinaryHeap::new(),
            clock: 0.0,
            seq: 0,
        }
    }

    fn push(&mut self, time: f64, source: Source, spike_index: usize) {
        self.seq += 1;
        self.pending.push(Pending { time, source, spike_index, seq: self.seq });
    }
}

/// Sampling plan for membrane potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    neurons: Vec<usize>,
    times: Vec<f64>,
}

impl Probe {
    pub fn at_times(neurons: Vec<usize>, mut times: Vec<f64>) -> Self {
        times.sort_by(f64::total_cmp);
        Self { neurons, times }
    }

    /// Samples at `0, step, 2·step, ...` up to and including `horizon`.
    pub fn grid(neurons: Vec<usize>, horizon: f64, step: f64) -> Self {
        let n = (horizon / step + 1e-9).floor() as usize;
        Self { neurons, times: (0..=n).map(|k| k as f64 * step).collect() }
    }
}

/// Sampled potentials, row-major by sample time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MembraneTraces {
    pub neurons: Vec<usize>,
    pub times: Vec<f64>,
    pub values: Vec<f32>,
}

impl MembraneTraces {
    pub fn value(&self, sample: usize, k: usize) -> f64 {
        self.values[sample * self.neurons.len() + k] as f64
    }

    pub fn row(&self, sample: usize) -> &[f32] {
        let m = self.neurons.len();
        &self.values[sample * m..(sample + 1) * m]
    }

    /// Time series of the `k`-th probed neuron.
    pub fn series(&self, k: usize) -> Vec<f64> {
        (0..self.times.len()).map(|s| self.value(s, k)).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            neuron: usize,
            t: f64,
            v: f64,
        }
        for (s, &t) in self.times.iter().enumerate() {
            for (k, &neuron) in self.neurons.iter().enumerate() {
                serde_json::to_writer(&mut out, &Row { neuron, t, v: self.value(s, k) })?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub spikes: Vec<SpikeTrain>,
    pub traces: MembraneTraces,
    /// Length of the adaptive step within which each spike was located, per neuron.
    pub spike_steps: Vec<Vec<f64>>,
    pub snapshots: Vec<WeightSnapshot>,
    pub plastic_events: u64,
}

pub struct Simulator<'a> {
    net: &'a mut Network,
    state: LifNetworkState,
    decay_leak: f64,
    response_peak: f64,
    hot: Vec<bool>,
    hot_list: Vec<usize>,
    quiet_abs: Vec<f64>,
    quiet_max: f64,
    steps_since_refresh: u32,
    arrival_trace: Vec<(f64, f64)>,
    spikes: Vec<SpikeTrain>,
    spike_steps: Vec<Vec<f64>>,
    recent: RecentSpikes,
    plastic_events: u64,
    snapshot_at: Vec<u64>,
    snapshots: Vec<WeightSnapshot>,
    probe: Option<(Probe, usize)>,
    traces: MembraneTraces,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a mut Network) -> Self {
        let n = net.num_neurons();
        let a = net.params.leak_rate();
        let response_peak = kernel_response_peak(a, net.params.syn_beta);
        let v_rest = net.params.v_rest;
        let mut sim = Self {
            state: LifNetworkState::new(n, v_rest),
            decay_leak: a,
            response_peak,
            hot: vec![false; n],
            hot_list: Vec::new(),
            quiet_abs: vec![v_rest.abs(); n],
            quiet_max: v_rest.abs(),
            steps_since_refresh: 0,
            arrival_trace: vec![(0.0, 0.0); n],
            spikes: (0..n).map(SpikeTrain::empty).collect(),
            spike_steps: vec![Vec::new(); n],
            recent: RecentSpikes::new(n),
            plastic_events: 0,
            snapshot_at: Vec::new(),
            snapshots: Vec::new(),
            probe: None,
            traces: MembraneTraces::default(),
            net,
        };
        for i in 0..n {
            sim.classify(i);
        }
        sim
    }

    pub fn with_probe(mut self, probe: Probe) -> Self {
        self.traces = MembraneTraces { neurons: probe.neurons.clone(), times: Vec::new(), values: Vec::new() };
        self.probe = Some((probe, 0));
        self
    }

    /// Records the weight vector whenever the plasticity event count reaches
    /// one of `counts`.
    pub fn with_snapshots(mut self, mut counts: Vec<u64>) -> Self {
        counts.sort_unstable();
        counts.reverse();
        self.snapshot_at = counts;
        self
    }

    pub fn state(&self) -> &LifNetworkState {
        &self.state
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn clock(&self) -> f64 {
        self.state.clock
    }

    pub fn set_potential(&mut self, neuron: usize, v: f64) {
        self.touch(neuron, self.state.clock);
        self.state.potentials[neuron] = v;
        self.classify(neuron);
    }

    /// Potential of `neuron` at the current clock.
    pub fn potential(&self, neuron: usize) -> f64 {
        self.potential_at(neuron, self.state.clock)
    }

    pub fn potential_at(&self, neuron: usize, t: f64) -> f64 {
        let h = t - self.state.last_update[neuron];
        self.evolve(neuron, h).0
    }

    /// Exact adaptive step for the current state.
    pub fn adaptive_dt(&self) -> f64 {
        let max_v = (0..self.net.num_neurons()).map(|i| self.potential(i).abs()).fold(0.0, f64::max);
        adaptive_dt(max_v, &self.net.sim)
    }

    pub fn schedule_input(&mut self, channel: usize, t: f64) -> Result<()> {
        if channel >= self.net.inputs.num_channels() {
            return Err(Error::Validation(format!("input channel {channel} does not exist")));
        }
        if !(t >= self.state.clock) {
            return Err(Error::Validation(format!("input at {t} precedes clock {}", self.state.clock)));
        }
        self.state.push(t, Source::Input(channel), 0);
        Ok(())
    }

    /// Schedules every spike of every train; `neuron_id` names the input channel.
    pub fn schedule_inputs(&mut self, trains: &[SpikeTrain]) -> Result<()> {
        for train in trains {
            for &t in train.times() {
                self.schedule_input(train.neuron_id, t)?;
            }
        }
        Ok(())
    }

    fn evolve(&self, neuron: usize, h: f64) -> (f64, f64) {
        let p = &self.net.params;
        let u0 = self.state.potentials[neuron] - p.v_rest;
        let i0 = self.state.currents[neuron];
        if h <= 0.0 {
            return (self.state.potentials[neuron], i0);
        }
        let a = self.decay_leak;
        let leak = (-a * h).exp();
        let bias = self.net.bias[neuron];
        let mut u = u0 * leak;
        if bias != 0.0 {
            u -= bias / p.leak_alpha * (-a * h).exp_m1();
        }
        if i0 != 0.0 {
            u += i0 / p.tau_m * kernel_response(a, p.syn_beta, h);
        }
        (p.v_rest + u, i0 * (-p.syn_beta * h).exp())
    }

    fn touch(&mut self, neuron: usize, t: f64) {
        let h = t - self.state.last_update[neuron];
        if h > 0.0 {
            let (v, i) = self.evolve(neuron, h);
            self.state.potentials[neuron] = v;
            self.state.currents[neuron] = i;
            self.state.last_update[neuron] = t;
        }
    }

    /// Upper bound on the potential reachable from the stored state without
    /// further input, relative to rest.
    fn peak_bound(&self, neuron: usize) -> f64 {
        let p = &self.net.params;
        let u0 = self.state.potentials[neuron] - p.v_rest;
        let i0 = self.state.currents[neuron];
        u0.max(0.0) + (self.net.bias[neuron] / p.leak_alpha).max(0.0) + i0.max(0.0) * self.response_peak / p.tau_m
    }

    fn abs_bound(&self, neuron: usize) -> f64 {
        let p = &self.net.params;
        let u0 = self.state.potentials[neuron] - p.v_rest;
        let i0 = self.state.currents[neuron];
        p.v_rest.abs() + u0.abs() + (self.net.bias[neuron] / p.leak_alpha).abs() + i0.abs() * self.response_peak / p.tau_m
    }

    fn classify(&mut self, neuron: usize) {
        let p = &self.net.params;
        let hot = p.v_rest + self.peak_bound(neuron) >= p.v_th;
        if hot && !self.hot[neuron] {
            self.hot[neuron] = true;
            self.hot_list.push(neuron);
        } else if !hot {
            if self.hot[neuron] {
                self.hot[neuron] = false;
                self.hot_list.retain(|&k| k != neuron);
            }
            let b = self.abs_bound(neuron);
            self.quiet_abs[neuron] = b;
            self.quiet_max = self.quiet_max.max(b);
        }
    }

    fn refresh_quiet_max(&mut self) {
        self.quiet_max = (0..self.hot.len()).filter(|&i| !self.hot[i]).map(|i| self.quiet_abs[i]).fold(0.0, f64::max);
        self.steps_since_refresh = 0;
    }

    fn step_size(&mut self) -> f64 {
        self.steps_since_refresh += 1;
        if self.steps_since_refresh >= 1024 {
            self.refresh_quiet_max();
        }
        let hot_max = self.hot_list.iter().map(|&i| self.state.potentials[i].abs()).fold(0.0, f64::max);
        adaptive_dt(hot_max.max(self.quiet_max), &self.net.sim)
    }

    /// Time derivative of the potential given its value and current.
    fn slope_of(&self, neuron: usize, v: f64, i: f64) -> f64 {
        let p = &self.net.params;
        -self.decay_leak * (v - p.v_rest) + (self.net.bias[neuron] + i) / p.tau_m
    }

    fn slope(&self, neuron: usize, h: f64) -> f64 {
        let (v, i) = self.evolve(neuron, h);
        self.slope_of(neuron, v, i)
    }

    /// First threshold crossing of `neuron` within `h` of its last update.
    /// Between events the potential is a constant plus two exponentials, so
    /// it has at most one turning point; a crossing either ends above
    /// threshold or peaks inside the step.
    fn first_crossing(&self, neuron: usize, h: f64) -> Option<f64> {
        let th = self.net.params.v_th;
        let above = |x: f64| self.evolve(neuron, x).0 >= th;
        let (v_end, i_end) = self.evolve(neuron, h);
        let end = if v_end >= th {
            h
        } else {
            if !(self.slope_of(neuron, v_end, i_end) < 0.0 && self.slope(neuron, 0.0) > 0.0) {
                return None;
            }
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if self.slope(neuron, mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if !above(hi) {
                return None;
            }
            hi
        };
        let (mut lo, mut hi) = (0.0, end);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if above(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-13 * hi.max(1.0) {
                break;
            }
        }
        Some(hi)
    }

    /// Steps hot neurons toward `stop`, cutting the step at the earliest
    /// threshold crossing. Returns true if a spike was emitted, in which case
    /// the clock may be short of `stop`.
    fn advance_hot(&mut self, stop: f64) -> Result<bool> {
        while self.state.clock < stop && !self.hot_list.is_empty() {
            let dt = self.step_size();
            let s = (self.state.clock + dt).min(stop);
            let taken = s - self.state.clock;
            let mut first: Option<(f64, Vec<usize>)> = None;
            for &i in &self.hot_list {
                let h = s - self.state.last_update[i];
                if let Some(c) = self.first_crossing(i, h) {
                    let at = self.state.last_update[i] + c;
                    match &mut first {
                        Some((t, who)) if at == *t => who.push(i),
                        Some((t, _)) if at > *t => {}
                        _ => first = Some((at, vec![i])),
                    }
                }
            }
            let (s, fired) = match first {
                Some((t, who)) => (t.max(self.state.clock), who),
                None => (s, Vec::new()),
            };
            for k in 0..self.hot_list.len() {
                let i = self.hot_list[k];
                self.touch(i, s);
                if !self.state.potentials[i].is_finite() {
                    return Err(Error::NumericFault { neuron: i, time: s });
                }
            }
            self.state.clock = s;
            for &i in &fired {
                self.emit(i, s, taken);
            }
            let cooled: Vec<usize> = self.hot_list.clone();
            for i in cooled {
                self.classify(i);
            }
            if !fired.is_empty() {
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn emit(&mut self, neuron: usize, t: f64, step: f64) {
        self.state.potentials[neuron] = self.net.params.v_reset;
        let index = self.spikes[neuron].len();
        self.spikes[neuron].push_unchecked(t);
        self.spike_steps[neuron].push(step);
        self.state.push(t + self.net.sim.syn_delay, Source::Neuron(neuron), index);

        if let Some(cfg) = self.net.plasticity.clone() {
            self.plastic_events += 1;
            let eta = cfg.rate_at(self.plastic_events);
            let changes = apply_on_spike(&mut self.net.synapses, &cfg, eta, neuron, t, &self.recent);
            for (id, delta) in changes {
                let (pre, post) = self.net.synapses.endpoints(id);
                let x = self.arrival_trace_at(pre, t);
                if x != 0.0 && delta != 0.0 {
                    self.touch(post, t);
                    self.state.currents[post] += delta * x;
                    self.classify(post);
                }
            }
            while self.snapshot_at.last().is_some_and(|&c| c <= self.plastic_events) {
                self.snapshot_at.pop();
                self.snapshots.push(WeightSnapshot {
                    events: self.plastic_events as f64,
                    weights: self.net.synapses.weights().to_vec(),
                });
            }
        }
        self.recent.record(neuron, t);
    }

    fn arrival_trace_at(&self, neuron: usize, t: f64) -> f64 {
        let (x, stamp) = self.arrival_trace[neuron];
        x * (-self.net.params.syn_beta * (t - stamp)).exp()
    }

    fn deliver(&mut self, pending: Pending) {
        let t = pending.time;
        let eps = self.net.params.syn_epsilon;
        match pending.source {
            Source::Neuron(j) => {
                let x = self.arrival_trace_at(j, t) + eps;
                self.arrival_trace[j] = (x, t);
                for k in 0..self.net.synapses.outgoing(j).len() {
                    let id = self.net.synapses.outgoing(j)[k];
                    let (_, post) = self.net.synapses.endpoints(id);
                    let w = self.net.synapses.weight(id);
                    self.touch(post, t);
                    self.state.currents[post] += w * eps;
                    self.classify(post);
                }
            }
            Source::Input(c) => {
                for k in 0..self.net.inputs.targets(c).len() {
                    let (post, w) = self.net.inputs.targets(c)[k];
                    self.touch(post, t);
                    self.state.currents[post] += w * eps;
                    self.classify(post);
                }
            }
        }
    }

    fn next_sample(&self) -> Option<f64> {
        self.probe.as_ref().and_then(|(p, cursor)| p.times.get(*cursor).copied())
    }

    fn record_sample(&mut self, t: f64) {
        let Some((probe, _)) = &self.probe else { return };
        let values: Vec<f32> = probe.neurons.iter().map(|&i| self.potential_at(i, t) as f32).collect();
        self.traces.times.push(t);
        self.traces.values.extend(values);
        if let Some((_, cursor)) = &mut self.probe {
            *cursor += 1;
        }
    }

    /// Processes every delivery and sample due at or before `t`, stepping
    /// hot neurons in between, and leaves the clock at `t`.
    pub fn integrate_to(&mut self, t: f64) -> Result<()> {
        if !(t >= self.state.clock) {
            return Err(Error::Invariant(format!("integrate_to({t}) behind clock {}", self.state.clock)));
        }
        loop {
            let delivery = self.state.pending.peek().map(|p| p.time);
            let sample = self.next_sample();
            let mut stop = t;
            if let Some(d) = delivery {
                stop = stop.min(d);
            }
            if let Some(s) = sample {
                stop = stop.min(s);
            }
            if stop < self.state.clock {
                return Err(Error::Invariant(format!("event at {stop} precedes clock {}", self.state.clock)));
            }
            if self.advance_hot(stop)? {
                continue;
            }
            self.state.clock = stop;
            if sample == Some(stop) {
                self.record_sample(stop);
                continue;
            }
            if delivery == Some(stop) {
                let p = self.state.pending.pop().expect("peeked");
                self.deliver(p);
                continue;
            }
            return Ok(());
        }
    }

    pub fn finish(mut self) -> RunOutput {
        if self.probe.is_some() {
            while let Some(s) = self.next_sample() {
                if s > self.state.clock {
                    break;
                }
                self.record_sample(s);
            }
        }
        RunOutput {
            spikes: self.spikes,
            traces: self.traces,
            spike_steps: self.spike_steps,
            snapshots: self.snapshots,
            plastic_events: self.plastic_events,
        }
    }
}

/// Fixed-step reference simulation: the network state is advanced exactly
/// between deliveries and threshold crossings are checked only at the end of
/// each `dt` step, where the spike is stamped. Plasticity is ignored.
pub fn fixed_step_reference(net: &Network, inputs: &[SpikeTrain], horizon: f64, dt: f64) -> Vec<Vec<f64>> {
    #[derive(PartialEq)]
    struct Delivery(f64, usize, f64);
    impl Eq for Delivery {}
    impl Ord for Delivery {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
        }
    }
    impl PartialOrd for Delivery {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    let p = &net.params;
    let n = net.num_neurons();
    let a = p.leak_alpha / p.tau_m;
    let b = p.syn_beta;
    let advance = |v: &mut [f64], cur: &mut [f64], h: f64| {
        if h <= 0.0 {
            return;
        }
        let resp = if (a - b).abs() < 1e-12 { h * (-a * h).exp() } else { ((-b * h).exp() - (-a * h).exp()) / (a - b) };
        let (dv, dc) = ((-a * h).exp(), (-b * h).exp());
        for i in 0..v.len() {
            v[i] = p.v_rest + (v[i] - p.v_rest) * dv + cur[i] / p.tau_m * resp + net.bias[i] * (1.0 - dv) / a / p.tau_m;
            cur[i] *= dc;
        }
    };
    let mut queue = std::collections::BinaryHeap::new();
    for train in inputs {
        for &t in train.times() {
            for &(k, w) in net.inputs.targets(train.neuron_id) {
                queue.push(Delivery(t, k, w * p.syn_epsilon));
            }
        }
    }
    let mut v = vec![p.v_rest; n];
    let mut cur = vec![0.0; n];
    let mut out = vec![Vec::new(); n];
    let steps = (horizon / dt).round() as usize;
    for s in 0..steps {
        let t0 = s as f64 * dt;
        let t1 = (s + 1) as f64 * dt;
        let mut tc = t0;
        while queue.peek().is_some_and(|d| d.0 < t1) {
            let Delivery(ta, k, amp) = queue.pop().expect("peeked");
            advance(&mut v, &mut cur, ta - tc);
            tc = tc.max(ta);
            cur[k] += amp;
        }
        advance(&mut v, &mut cur, t1 - tc);
        for i in 0..n {
            if v[i] >= p.v_th {
                out[i].push(t1);
                v[i] = p.v_reset;
                for &id in net.synapses.outgoing(i) {
                    let (_, post) = net.synapses.endpoints(id);
                    queue.push(Delivery(t1 + net.sim.syn_delay, post, net.synapses.weight(id) * p.syn_epsilon));
                }
            }
        }
    }
    out
}

/// Runs the network from rest over `[0, horizon]`, driven by `inputs`
/// (one train per input channel, `neuron_id` = channel).
pub fn run_event_driven(net: &mut Network, inputs: &[SpikeTrain], horizon: f64, probe: Option<Probe>) -> Result<RunOutput> {
    for train in inputs {
        if train.times().iter().any(|&t| !(0.0..=horizon).contains(&t)) {
            return Err(Error::Validation(format!("input channel {} has spikes outside [0, {horizon}]", train.neuron_id)));
        }
    }
    let mut sim = Simulator::new(net);
    if let Some(p) = probe {
        sim = sim.with_probe(p);
    }
    sim.schedule_inputs(inputs)?;
    sim.integrate_to(horizon)?;
    Ok(sim.finish())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::plasticity::WeightRecord;

    fn quiet_net(n: usize, params: LifParams) -> Network {
        Network::new(params, SimConfig::default(), SynapseMatrix::empty(n, 1.0), InputProjection::blocks(n, 1, 3.0)).unwrap()
    }

    #[test]
    fn synaptic_current_examples() {
        let params = LifParams { syn_beta: 2.0, ..Default::default() };
        let w = SynapseMatrix::new(
            3,
            &[WeightRecord { pre: 0, post: 2, w: 1.0 }, WeightRecord { pre: 1, post: 2, w: 1.0 }],
            1.0,
        )
        .unwrap();
        let none = vec![SpikeTrain::empty(0), SpikeTrain::empty(1), SpikeTrain::empty(2)];
        assert_eq!(synaptic_current(&none, &w, &params, 2, 0.5), 0.0);

        let one = vec![SpikeTrain::new(0, vec![0.0]).unwrap(), SpikeTrain::empty(1), SpikeTrain::empty(2)];
        let single = synaptic_current(&one, &w, &params, 2, 0.5);
        assert!((single - (-1f64).exp()).abs() < 1e-15);

        let two = vec![SpikeTrain::new(0, vec![0.0]).unwrap(), SpikeTrain::new(1, vec![0.0]).unwrap(), SpikeTrain::empty(2)];
        assert_eq!(synaptic_current(&two, &w, &params, 2, 0.5), 2.0 * single);
    }

    #[test]
    fn adaptive_dt_examples() {
        let sim = SimConfig { tau_min: 0.1, dt_max: 1.0, ..Default::default() };
        assert_eq!(adaptive_dt(2.0, &sim), 0.05);
        assert_eq!(adaptive_dt(0.0, &sim), 1.0);
        assert_eq!(adaptive_dt(0.01, &sim), 1.0);
    }

    #[test]
    fn surrogate_examples() {
        let params = LifParams { surrogate_sharpness: 2.0, ..Default::default() };
        assert_eq!(surrogate_grad(params.v_th, &params), 0.0);
        assert!((surrogate_grad(params.v_th + 1.0, &params) - 0.196_611_933_241_481_85).abs() < 1e-12);
        for d in [0.01, 0.3, 0.5, 2.0, 7.0] {
            assert_eq!(surrogate_grad(params.v_th + d, &params), surrogate_grad(params.v_th - d, &params));
        }
    }

    #[test]
    fn min_detectable_dt_examples() {
        let params = LifParams { tau_m: 1.0, leak_alpha: 1.0, ..Default::default() };
        assert!((min_detectable_dt(&params, 1.0, 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(min_detectable_dt(&params, 2.0, 0.1), min_detectable_dt(&params, 1.0, 0.1) / 2.0);
    }

    #[test]
    fn resting_state_is_fixed() {
        let mut net = quiet_net(3, LifParams::default());
        let mut sim = Simulator::new(&mut net);
        sim.integrate_to(5.0).unwrap();
        for i in 0..3 {
            assert_eq!(sim.potential(i), 0.0);
        }
    }

    #[test]
    fn leak_decay_closed_form() {
        let params = LifParams { tau_m: 1.0, leak_alpha: 1.0, v_rest: 0.0, v_th: 2.0, ..Default::default() };
        let mut net = quiet_net(1, params);
        let mut sim = Simulator::new(&mut net);
        sim.set_potential(0, 1.0);
        sim.integrate_to(1.0).unwrap();
        assert!((sim.potential(0) - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn constant_drive_fires_periodically() {
        let params = LifParams::default();
        let mut net = quiet_net(1, params.clone());
        net.bias[0] = 2.0;
        let out = run_event_driven(&mut net, &[], 1.0, None).unwrap();
        let drive = 2.0 / params.leak_alpha;
        let period = -(params.tau_m / params.leak_alpha) * (1.0 - (params.v_th - params.v_rest) / drive).ln();
        let times = out.spikes[0].times();
        assert!(times.len() > 10);
        let tol = SimConfig::default().tau_min;
        assert!((times[0] - period).abs() <= tol, "{} vs {period}", times[0]);
        for w in times.windows(2) {
            assert!((w[1] - w[0] - period).abs() <= tol, "{} vs {period}", w[1] - w[0]);
        }
    }

    #[test]
    fn no_input_no_spikes() {
        let mut rng = crate::rng::stream(1, 0);
        let syn = SynapseMatrix::random(10, 0.3, (-0.5, 0.5), 1.0, &mut rng).unwrap();
        let mut net = Network::new(LifParams::default(), SimConfig::default(), syn, InputProjection::default()).unwrap();
        let out = run_event_driven(&mut net, &[], 10.0, None).unwrap();
        assert!(out.spikes.iter().all(|s| s.is_empty()));
    }

    #[test]
    fn single_strong_input_fires_once() {
        let params = LifParams::default();
        let inputs = InputProjection::new(vec![vec![(1, 3.0)]]);
        let mut net = Network::new(params.clone(), SimConfig::default(), SynapseMatrix::empty(3, 1.0), inputs).unwrap();
        let out = run_event_driven(&mut net, &[SpikeTrain::new(0, vec![0.1]).unwrap()], 1.0, None).unwrap();
        assert_eq!(out.spikes[1].len(), 1);
        assert!(out.spikes[0].is_empty() && out.spikes[2].is_empty());
        let a = params.leak_rate();
        let peak = 3.0 / params.tau_m * kernel_response_peak(a, params.syn_beta);
        assert!(peak > params.v_th && 2.0 / params.tau_m * kernel_response_peak(a, params.syn_beta) < params.v_th);
    }

    #[test]
    fn reset_follows_spike() {
        let mut net = quiet_net(1, LifParams::default());
        net.bias[0] = 2.0;
        let mut sim = Simulator::new(&mut net);
        let mut t = 0.0;
        while sim.spikes[0].is_empty() {
            t += 1e-4;
            sim.integrate_to(t).unwrap();
        }
        let last = *sim.spikes[0].times().last().unwrap();
        let recovered = 2.0 * -(-(t - last) / 0.02f64).exp_m1();
        assert!(last <= t && (sim.potential(0) - recovered).abs() < 1e-12);
    }

    #[test]
    fn simulator_current_matches_direct_sum() {
        let mut rng = crate::rng::stream(3, 0);
        let syn = SynapseMatrix::random(12, 0.4, (0.2, 1.0), 1.0, &mut rng).unwrap();
        let inputs = InputProjection::blocks(12, 1, 3.0);
        let mut net = Network::new(LifParams::default(), SimConfig::default(), syn, inputs).unwrap();
        let drive: Vec<SpikeTrain> = (0..12).map(|c| SpikeTrain::new(c, vec![0.05 + 0.01 * c as f64]).unwrap()).collect();
        let delay = net.sim.syn_delay;
        let mut sim = Simulator::new(&mut net);
        sim.schedule_inputs(&drive).unwrap();
        sim.integrate_to(0.3).unwrap();
        let t = sim.clock();
        let arrivals: Vec<SpikeTrain> = sim
            .spikes
            .iter()
            .map(|s| SpikeTrain::new(s.neuron_id, s.times().iter().map(|x| x + delay).filter(|&x| x <= t).collect()).unwrap())
            .collect();
        let params = sim.network().params.clone();
        for i in 0..12 {
            let h = t - sim.state().last_update[i];
            let stored = sim.state().currents[i] * (-params.syn_beta * h).exp();
            let external = 3.0 * (-params.syn_beta * (t - drive[i].times()[0])).exp();
            let direct = synaptic_current(&arrivals, &sim.network().synapses, &params, i, t) + external;
            assert!((stored - direct).abs() < 1e-10 * (1.0 + direct.abs()), "neuron {i}: {stored} vs {direct}");
        }
    }

    #[test]
    fn matches_dense_reference() {
        for seed in 0..5 {
            let mut rng = crate::rng::stream(seed, 0);
            let n = 20;
            let syn = SynapseMatrix::random(n, 0.2, (-1.0, 1.0), 1.0, &mut rng).unwrap();
            let inputs = InputProjection::blocks(5, 4, 15.0);
            let params = LifParams { syn_beta: 500.0, ..Default::default() };
            let mut net = Network::new(params, SimConfig::default(), syn, inputs).unwrap();
            let drive: Vec<SpikeTrain> = (0..5)
                .map(|c| {
                    let mut t = 0.0;
                    let mut times = Vec::new();
                    loop {
                        t += rand_distr::Distribution::sample(&rand_distr::Exp::new(3.0).unwrap(), &mut rng);
                        if t >= 2.0 {
                            break;
                        }
                        times.push(t);
                    }
                    SpikeTrain::new(c, times).unwrap()
                })
                .collect();
            let reference = fixed_step_reference(&net, &drive, 2.0, 1e-4);
            let out = run_event_driven(&mut net, &drive, 2.0, None).unwrap();
            for i in 0..n {
                let got = out.spikes[i].times();
                assert_eq!(got.len(), reference[i].len(), "seed {seed} neuron {i}: {got:?} vs {:?}", reference[i]);
                for (k, (&a, &b)) in got.iter().zip(&reference[i]).enumerate() {
                    let tol = out.spike_steps[i][k] + 1e-4 + 1e-12;
                    assert!((a - b).abs() <= tol, "seed {seed} neuron {i}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn probe_samples_grid() {
        let mut net = quiet_net(2, LifParams { v_th: 5.0, ..Default::default() });
        let mut sim = Simulator::new(&mut net).with_probe(Probe::grid(vec![0, 1], 0.01, 1e-3));
        sim.set_potential(0, 1.0);
        sim.integrate_to(0.01).unwrap();
        let out = sim.finish();
        assert_eq!(out.traces.times.len(), 11);
        let a = LifParams::default().leak_rate();
        for (s, &t) in out.traces.times.iter().enumerate() {
            assert!((out.traces.value(s, 0) - (-a * t).exp()).abs() < 1e-6);
            assert_eq!(out.traces.value(s, 1), 0.0);
        }
    }

    #[test]
    fn rejects_input_outside_horizon() {
        let mut net = quiet_net(1, LifParams::default());
        let r = run_event_driven(&mut net, &[SpikeTrain::new(0, vec![2.0]).unwrap()], 1.0, None);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn plasticity_keeps_current_consistent() {
        let mut rng = crate::rng::stream(9, 0);
        let syn = SynapseMatrix::random(8, 0.5, (0.3, 0.9), 1.0, &mut rng).unwrap();
        let inputs = InputProjection::blocks(8, 1, 3.0);
        let mut net = Network::new(LifParams::default(), SimConfig::default(), syn, inputs)
            .unwrap()
            .with_plasticity(StdpConfig { eta: 0.2, ..Default::default() })
            .unwrap();
        let drive: Vec<SpikeTrain> = (0..8).map(|c| SpikeTrain::new(c, vec![0.01 + 0.003 * c as f64, 0.2]).unwrap()).collect();
        let out = run_event_driven(&mut net, &drive, 0.5, None).unwrap();
        assert!(out.plastic_events > 0);
        assert!(net.synapses.weights().iter().all(|w| w.abs() <= 1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn leak_is_monotone(v0 in -3.0f64..0.99, t in prop::collection::vec(0.0f64..0.2, 1..20)) {
                let mut net = quiet_net(1, LifParams::default());
                let mut sim = Simulator::new(&mut net);
                sim.set_potential(0, v0);
                let mut times = t;
                times.sort_by(f64::total_cmp);
                let mut prev = v0.abs();
                for x in times {
                    sim.integrate_to(x).unwrap();
                    let now = sim.potential(0).abs();
                    prop_assert!(now <= prev + 1e-15);
                    prev = now;
                }
            }

            #[test]
            fn surrogate_is_bounded(v in -20.0f64..20.0, sharp in 0.1f64..10.0) {
                let params = LifParams { surrogate_sharpness: sharp, ..Default::default() };
                let g = surrogate_grad(v, &params);
                prop_assert!((0.0..=0.25).contains(&g));
            }

            #[test]
            fn adaptive_dt_is_capped(max_v in 0.0f64..100.0, tau_min in 1e-5f64..1e-2, dt_max in 1e-4f64..1e-1) {
                let sim = SimConfig { tau_min, dt_max, ..Default::default() };
                let dt = adaptive_dt(max_v, &sim);
                prop_assert!(dt <= dt_max);
                if max_v <= tau_min / dt_max {
                    prop_assert_eq!(dt, dt_max);
                }
            }

            #[test]
            fn output_trains_are_increasing(seed in 0u64..50) {
                let mut rng = crate::rng::stream(seed, 0);
                let syn = SynapseMatrix::random(10, 0.3, (-1.0, 1.0), 1.0, &mut rng).unwrap();
                let mut net = Network::new(LifParams::default(), SimConfig::default(), syn, InputProjection::blocks(5, 2, 3.0)).unwrap();
                let drive: Vec<SpikeTrain> = (0..5).map(|c| SpikeTrain::new(c, vec![0.1 * (c + 1) as f64, 0.7]).unwrap()).collect();
                let out = run_event_driven(&mut net, &drive, 1.0, None).unwrap();
                for s in &out.spikes {
                    prop_assert!(s.times().windows(2).all(|w| w[0] < w[1]));
                }
            }
        }
    }
}
