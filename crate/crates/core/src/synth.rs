//! Synthetic benchmark: a dynamic random graph whose nodes emit events
//! through mutually exciting Hawkes processes.
//!
//! Node `i` fires with intensity
//!
//! ```text
//! λ_i(t) = μ_i + Σ_{j ∈ N(i,t)} α_ij Σ_{t_j^k < t} exp(-β_ij (t - t_j^k))
//! ```
//!
//! where `N(i,t)` is the neighbor set of the graph epoch containing `t`.
//! With [`KernelMode::LastSpike`] only the most recent spike of each neighbor
//! contributes. Sampling is exact (Ogata thinning); since every kernel decays,
//! the total intensity right after an event bounds it until the next event or
//! epoch boundary.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Event, EventSequence, SpikeTrain};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    /// Sum over every prior spike of each neighbor.
    #[default]
    FullHistory,
    /// Only each neighbor's most recent spike.
    LastSpike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_nodes: usize,
    /// Edge count as a fraction of the complete graph's `N(N-1)/2`.
    pub sparsity: f64,
    /// Number of equal-length graph epochs.
    pub num_steps: usize,
    /// Seconds.
    pub duration: f64,
    pub mu_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub beta_range: (f64, f64),
    pub carryover_fraction: f64,
    pub kernel: KernelMode,
    pub seed: u64,
    /// Any node intensity above this many events per second aborts the run.
    pub max_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_nodes: 20,
            sparsity: 0.3,
            num_steps: 10,
            duration: 1000.0,
            mu_range: (0.5, 1.5),
            alpha_range: (0.1, 0.5),
            beta_range: (1.0, 5.0),
            carryover_fraction: 0.5,
            kernel: KernelMode::FullHistory,
            seed: 0,
            max_rate: 1e4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.num_nodes == 0 {
            return bad("num_nodes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sparsity) {
            return bad(format!("sparsity {} outside [0, 1]", self.sparsity));
        }
        if self.num_steps == 0 {
            return bad("num_steps must be positive".into());
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        for (name, (lo, hi)) in [("mu", self.mu_range), ("alpha", self.alpha_range), ("beta", self.beta_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return bad(format!("{name}_range ({lo}, {hi}) must satisfy 0 <= low <= high"));
            }
        }
        if self.beta_range.0 <= 0.0 {
            return bad("beta_range must be strictly positive".into());
        }
        if !(0.0..=1.0).contains(&self.carryover_fraction) {
            return bad(format!("carryover_fraction {} outside [0, 1]", self.carryover_fraction));
        }
        if !(self.max_rate > 0.0) {
            return bad("max_rate must be positive".into());
        }
        Ok(())
    }

    pub fn target_edges(&self) -> usize {
        let pairs = pair_count(self.num_nodes);
        (self.sparsity * pairs as f64).round() as usize
    }

    pub fn epoch_length(&self) -> f64 {
        self.duration / self.num_steps as f64
    }
}

pub(crate) fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps a linear index in `0..N(N-1)/2` onto the pair `(i, j)` with `i < j`.
pub(crate) fn pair_from_index(mut idx: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("pair index out of range")
}

fn pair_index(i: usize, j: usize, n: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch_start: f64,
    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize)>,
}

impl Snapshot {
    pub fn adjacency(&self, n: usize) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; n]; n];
        for &(i, j) in &self.edges {
            adj[i][j] = true;
            adj[j][i] = true;
        }
        adj
    }
}

/// Graph epochs tiling `[0, duration]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTimeline {
    pub num_nodes: usize,
    pub duration: f64,
    pub snapshots: Vec<Snapshot>,
}

impl GraphTimeline {
    pub fn epoch_index(&self, t: f64) -> usize {
        let idx = self.snapshots.partition_point(|s| s.epoch_start <= t);
        idx.saturating_sub(1)
    }

    pub fn epoch_end(&self, idx: usize) -> f64 {
        self.snapshots.get(idx + 1).map_or(self.duration, |s| s.epoch_start)
    }

    pub fn snapshot_at(&self, t: f64) -> &Snapshot {
        &self.snapshots[self.epoch_index(t)]
    }

    pub fn neighbors(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.num_nodes];
        for &(i, j) in &self.snapshots[epoch].edges {
            nbrs[i].push(j);
            nbrs[j].push(i);
        }
        nbrs
    }
}

/// Writes one `{"epoch_start", "edges"}` record per snapshot.
pub fn write_graph_sidecar<W: std::io::Write>(snapshots: &[Snapshot], mut out: W) -> Result<()> {
    for s in snapshots {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a graph sidecar, checking node bounds and increasing epoch starts.
pub fn read_graph_sidecar<R: std::io::BufRead>(source: R, num_nodes: usize, duration: f64) -> Result<GraphTimeline> {
    let mut snapshots: Vec<Snapshot> = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut s: Snapshot = serde_json::from_str(line.trim()).map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        for e in &mut s.edges {
            if e.0 == e.1 || e.0.max(e.1) >= num_nodes {
                return Err(Error::Validation(format!("line {}: bad edge {:?}", idx + 1, e)));
            }
            *e = (e.0.min(e.1), e.0.max(e.1));
        }
        s.edges.sort_unstable();
        s.edges.dedup();
        if snapshots.last().is_some_and(|p| p.epoch_start >= s.epoch_start) {
            return Err(Error::Validation(format!("line {}: epoch starts must increase", idx + 1)));
        }
        snapshots.push(s);
    }
    if snapshots.is_empty() {
        return Err(Error::Parse { line: 0, message: "empty graph file".into() });
    }
    Ok(GraphTimeline { num_nodes, duration, snapshots })
}

pub fn sample_graph_timeline(cfg: &SynthConfig) -> Result<GraphTimeline> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let pairs = pair_count(n);
    let m = cfg.target_edges();
    let keep = (cfg.carryover_fraction * m as f64).round() as usize;
    let mut rng = rng::stream(cfg.seed, streams::GRAPH);

    let mut current: Vec<usize> = index::sample(&mut rng, pairs, m).into_vec();
    let mut snapshots = Vec::with_capacity(cfg.num_steps);
    for k in 0..cfg.num_steps {
        if k > 0 {
            let kept: Vec<usize> = index::sample(&mut rng, current.len(), keep.min(current.len()))
                .into_iter()
                .map(|i| current[i])
                .collect();
            let mut taken = vec![false; pairs];
            for &p in &kept {
                taken[p] = true;
            }
            let free: Vec<usize> = (0..pairs).filter(|&p| !taken[p]).collect();
            let fresh = index::sample(&mut rng, free.len(), m - kept.len()).into_iter().map(|i| free[i]);
            current = kept.into_iter().chain(fresh).collect();
        }
        let mut edges: Vec<(usize, usize)> = current.iter().map(|&p| pair_from_index(p, n)).collect();
        edges.sort_unstable();
        snapshots.push(Snapshot { epoch_start: k as f64 * cfg.epoch_length(), edges });
    }
    Ok(GraphTimeline { num_nodes: n, duration: cfg.duration, snapshots })
}

/// Per-node base rates and per-pair excitation parameters. `α` and `β` are
/// drawn once per unordered pair and applied in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: Vec<f64>,
    pair_alpha: Vec<f64>,
    pair_beta: Vec<f64>,
    pub kernel: KernelMode,
    num_nodes: usize,
}

impl HawkesParams {
    pub fn sample(cfg: &SynthConfig) -> Self {
        let n = cfg.num_nodes;
        let mut rng = rng::stream(cfg.seed, streams::PARAMS);
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mu = (0..n).map(|_| draw(cfg.mu_range)).collect();
        let pairs = pair_count(n);
        let pair_alpha = (0..pairs).map(|_| draw(cfg.alpha_range)).collect();
        let pair_beta = (0..pairs).map(|_| draw(cfg.beta_range)).collect();
        Self { mu, pair_alpha, pair_beta, kernel: cfg.kernel, num_nodes: n }
    }

    /// Uniform parameters, mostly for tests.
    pub fn uniform(num_nodes: usize, mu: f64, alpha: f64, beta: f64, kernel: KernelMode) -> Self {
        let pairs = pair_count(num_nodes);
        Self {
            mu: vec![mu; num_nodes],
            pair_alpha: vec![alpha; pairs],
            pair_beta: vec![beta; pairs],
            kernel,
            num_nodes,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        self.pair_alpha[pair_index(i, j, self.num_nodes)]
    }

    pub fn beta(&self, i: usize, j: usize) -> f64 {
        self.pair_beta[pair_index(i, j, self.num_nodes)]
    }
}

/// Direct evaluation of `λ_node(t)` from the full spike history. Linear in
/// the history length; the simulator keeps recursive state instead.
pub fn hawkes_intensity(
    node: usize,
    t: f64,
    history: &[SpikeTrain],
    timeline: &GraphTimeline,
    params: &HawkesParams,
) -> Result<f64> {
    if !(0.0..=timeline.duration).contains(&t) {
        return Err(Error::Domain(format!("t={t} outside [0, {}]", timeline.duration)));
    }
    let epoch = timeline.epoch_index(t);
    let mut rate = params.mu[node];
    for &(a, b) in &timeline.snapshots[epoch].edges {
        let j = match (a == node, b == node) {
            (true, _) => b,
            (_, true) => a,
            _ => continue,
        };
        let alpha = params.alpha(node, j);
        let beta = params.beta(node, j);
        let past = history[j].window(f64::NEG_INFINITY, t);
        rate += match params.kernel {
            KernelMode::FullHistory => alpha * past.iter().map(|&s| (-beta * (t - s)).exp()).sum::<f64>(),
            KernelMode::LastSpike => past.last().map_or(0.0, |&s| alpha * (-beta * (t - s)).exp()),
        };
    }
    Ok(rate)
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub events: EventSequence,
    pub timeline: GraphTimeline,
    pub params: HawkesParams,
}

struct Excitation {
    alpha: f64,
    beta: f64,
    source: usize,
}

/// Recursive kernel state: for each source `j` and target `i`, the decayed
/// spike sum `ex[j][i]` as of `stamp[j]`.
struct KernelState {
    n: usize,
    ex: Vec<f64>,
    stamp: Vec<f64>,
    fired: Vec<bool>,
    kernel: KernelMode,
}

impl KernelState {
    fn new(n: usize, kernel: KernelMode) -> Self {
        Self { n, ex: vec![0.0; n * n], stamp: vec![0.0; n], fired: vec![false; n], kernel }
    }

    fn value(&self, target: usize, e: &Excitation, t: f64) -> f64 {
        if !self.fired[e.source] {
            return 0.0;
        }
        let decay = (-e.beta * (t - self.stamp[e.source])).exp();
        e.alpha * self.ex[e.source * self.n + target] * decay
    }

    fn record(&mut self, source: usize, t: f64, params: &HawkesParams) {
        let row = &mut self.ex[source * self.n..(source + 1) * self.n];
        match self.kernel {
            KernelMode::LastSpike => row.fill(1.0),
            KernelMode::FullHistory => {
                let dt = t - self.stamp[source];
                for (target, v) in row.iter_mut().enumerate() {
                    if target != source {
                        *v = *v * (-params.beta(source, target) * dt).exp() + 1.0;
                    }
                }
            }
        }
        self.stamp[source] = t;
        self.fired[source] = true;
    }
}

fn epoch_inputs(timeline: &GraphTimeline, params: &HawkesParams, epoch: usize) -> Vec<Vec<Excitation>> {
    timeline
        .neighbors(epoch)
        .into_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            nbrs.into_iter()
                .map(|j| Excitation { alpha: params.alpha(i, j), beta: params.beta(i, j), source: j })
                .collect()
        })
        .collect()
}

fn rates_at(inputs: &[Vec<Excitation>], state: &KernelState, params: &HawkesParams, t: f64, out: &mut [f64]) {
    for (i, exc) in inputs.iter().enumerate() {
        out[i] = params.mu[i] + exc.iter().map(|e| state.value(i, e, t)).sum::<f64>();
    }
}

/// Simulates the benchmark with Ogata thinning. Deterministic in `cfg.seed`.
pub fn simulate(cfg: &SynthConfig) -> Result<Synthetic> {
    let timeline = sample_graph_timeline(cfg)?;
    let params = HawkesParams::sample(cfg);
    let events = simulate_with(&timeline, &params, cfg.seed, cfg.max_rate)?;
    Ok(Synthetic { events, timeline, params })
}

/// Thinning sampler for a given graph timeline and parameter set.
pub fn simulate_with(timeline: &GraphTimeline, params: &HawkesParams, seed: u64, max_rate: f64) -> Result<EventSequence> {
    let n = timeline.num_nodes;
    let mut rng = rng::stream(seed, streams::EVENTS);
    let mut state = KernelState::new(n, params.kernel);
    let mut rates = vec![0.0; n];
    let mut events = Vec::new();

    let mut t: f64 = 0.0;
    for epoch in 0..timeline.snapshots.len() {
        let end = timeline.epoch_end(epoch);
        let inputs = epoch_inputs(timeline, params, epoch);
        t = t.max(timeline.snapshots[epoch].epoch_start);
        rates_at(&inputs, &state, params, t, &mut rates);
        loop {
            let bound: f64 = rates.iter().sum();
            if let Some((node, &r)) = rates.iter().enumerate().find(|(_, &r)| !(r <= max_rate)) {
                return Err(Error::IntensityOverflow { node, bound: r });
            }
            if bound <= 0.0 {
                break;
            }
            let wait = Exp::new(bound).expect("positive rate").sample(&mut rng);
            let proposal = t + wait;
            if proposal >= end {
                break;
            }
            t = proposal;
            rates_at(&inputs, &state, params, t, &mut rates);
            let total: f64 = rates.iter().sum();
            let u: f64 = rng.random::<f64>() * bound;
            if u >= total {
                // rejected: λ(t) is the new bound
                continue;
            }
            // `u` is uniform on [0, total) here, so it also picks the node.
            let mut acc = 0.0;
            let mut node = n - 1;
            for (i, &r) in rates.iter().enumerate() {
                acc += r;
                if u < acc {
                    node = i;
                    break;
                }
            }
            events.push(Event { t, e: node });
            state.record(node, t, params);
            rates_at(&inputs, &state, params, t, &mut rates);
        }
        t = end;
    }
    EventSequence::new(events, n, timeline.duration)
}

/// Discrete-time approximation of the same process: in each bin of width
/// `grid_dt` node `i` fires with probability `λ_i · grid_dt`, evaluated from
/// spikes in earlier bins. Events are placed uniformly inside their bin.
pub fn grid_oracle_simulate(cfg: &SynthConfig, grid_dt: f64) -> Result<EventSequence> {
    let timeline = sample_graph_timeline(cfg)?;
    let params = HawkesParams::sample(cfg);
    grid_oracle_with(&timeline, &params, cfg.seed, grid_dt)
}

pub fn grid_oracle_with(timeline: &GraphTimeline, params: &HawkesParams, seed: u64, grid_dt: f64) -> Result<EventSequence> {
    if !(grid_dt > 0.0) {
        return Err(Error::Oracle("grid_dt must be positive".into()));
    }
    let n = timeline.num_nodes;
    let mut rng = rng::stream(seed, streams::ORACLE);
    let bins = (timeline.duration / grid_dt).ceil() as usize;
    // spikes[j] holds j's spike times, appended in order
    let mut spikes: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut events = Vec::new();
    let mut epoch = usize::MAX;
    let mut nbrs: Vec<Vec<usize>> = Vec::new();
    // running[i][j]: Σ_k exp(-β_ij (t_bin - t_j^k)) maintained per bin
    let mut running = vec![0.0; n * n];
    let mut fired_this_bin = Vec::new();
    for b in 0..bins {
        let t0 = b as f64 * grid_dt;
        let e = timeline.epoch_index(t0);
        if e != epoch {
            epoch = e;
            nbrs = timeline.neighbors(e);
        }
        fired_this_bin.clear();
        for i in 0..n {
            let mut rate = params.mu[i];
            for &j in &nbrs[i] {
                rate += params.alpha(i, j)
                    * match params.kernel {
                        KernelMode::FullHistory => running[i * n + j],
                        KernelMode::LastSpike => spikes[j]
                            .last()
                            .map_or(0.0, |&s| (-params.beta(i, j) * (t0 - s)).exp()),
                    };
            }
            let p = rate * grid_dt;
            if p > 0.1 {
                return Err(Error::Oracle(format!("grid too coarse: λ·dt = {p:.3} on node {i}")));
            }
            if rng.random::<f64>() < p {
                let t = (t0 + rng.random::<f64>() * grid_dt).min(timeline.duration);
                fired_this_bin.push((i, t));
            }
        }
        let t1 = t0 + grid_dt;
        if params.kernel == KernelMode::FullHistory {
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        running[i * n + j] *= (-params.beta(i, j) * grid_dt).exp();
                    }
                }
            }
            for &(j, t) in &fired_this_bin {
                for i in 0..n {
                    if i != j {
                        running[i * n + j] += (-params.beta(i, j) * (t1 - t)).exp();
                    }
                }
            }
        }
        for &(j, t) in &fired_this_bin {
            spikes[j].push(t);
            events.push(Event { t, e: j });
        }
    }
    EventSequence::new(events, n, timeline.duration)
}
