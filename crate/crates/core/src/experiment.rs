//! End-to-end runs: synthetic data, spiking encoding, graph estimation,
//! intensity fitting, next-event prediction and metrics.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fit_hawkes, fit_poisson, predict_sequence, Baseline, HawkesFitConfig};
use crate::error::{Error, Result};
use crate::events::{encode_as_spikes, split_train_test, EventSequence, SpikeTrain};
use crate::graph::{
    ablation_graph, default_theta, lasso_window, select_basis, spike_graph, ssi_against_timeline, AblationMode, AdmmConfig, CombineRule,
    DynamicGraph,
};
use crate::plasticity::{SynapseMatrix, StdpConfig, WeightRecord};
use crate::rng::{self, streams};
use crate::snn::{run_event_driven, InputProjection, LifParams, Network, Probe, SimConfig};
use crate::synth::{simulate, GraphTimeline, KernelMode, SynthConfig};
use crate::tpp::{
    fit_intensity, predict_next, rmse, Attention, EmbeddingConfig, EmbeddingTable, FitConfig, FitReport, IntensityParams, LikelihoodConfig,
    SdgnSurface, TppData,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Softmax over pairwise spike coincidence scores.
    #[default]
    Spike,
    /// Group-lasso neighborhoods on a membrane-potential basis.
    Lasso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub estimator: Estimator,
    /// Length of each graph window, seconds.
    pub window: f64,
    pub sub_windows: usize,
    /// Coincidence time constant of the pair score, seconds.
    pub pair_tau: f64,
    /// Edge threshold; `1.5/(N-1)` when absent.
    pub theta: Option<f64>,
    /// Neurons in the membrane basis.
    pub basis_size: usize,
    /// Smoothing of the event signal projected on the basis, seconds.
    pub signal_tau: f64,
    pub combine: CombineRule,
    pub admm: AdmmConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Spike,
            window: 100.0,
            sub_windows: 10,
            pair_tau: 0.2,
            theta: None,
            basis_size: 16,
            signal_tau: 0.1,
            combine: CombineRule::Or,
            admm: AdmmConfig::default(),
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window > 0.0 && self.pair_tau > 0.0 && self.signal_tau > 0.0) || self.sub_windows == 0 || self.basis_size == 0 {
            return Err(Error::Validation("graph window, time constants, sub_windows and basis_size must be positive".into()));
        }
        if let Some(t) = self.theta {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Validation("theta must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn theta_for(&self, n: usize) -> f64 {
        self.theta.unwrap_or_else(|| default_theta(n))
    }

    /// Consecutive windows of length `window` covering `[0, horizon]`.
    pub fn windows(&self, horizon: f64) -> Vec<(f64, f64)> {
        let count = ((horizon / self.window) - 1e-9).ceil().max(1.0) as usize;
        (0..count).map(|k| (k as f64 * self.window, ((k + 1) as f64 * self.window).min(horizon))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub lif: LifParams,
    pub sim: SimConfig,
    pub stdp: StdpConfig,
    /// STDP while encoding the training split.
    pub plasticity: bool,
    pub embedding: EmbeddingConfig,
    /// Weight of an input event onto each neuron of its block.
    pub input_weight: f64,
    pub recurrent_p: f64,
    pub recurrent_init: (f64, f64),
    pub w_max: f64,
    pub graph: GraphConfig,
    pub fit: FitConfig,
    /// Prediction cap after the origin, in mean training inter-event gaps.
    pub cap_factor: f64,
    /// Monte-Carlo points per interval for the reported test NLL.
    pub eval_num_mc: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lif: LifParams::default(),
            sim: SimConfig::default(),
            stdp: StdpConfig::default(),
            plasticity: true,
            embedding: EmbeddingConfig::default(),
            input_weight: 3.0,
            recurrent_p: 0.2,
            recurrent_init: (-0.1, 0.1),
            w_max: 1.0,
            graph: GraphConfig::default(),
            fit: FitConfig::default(),
            cap_factor: 50.0,
            eval_num_mc: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.lif.validate()?;
        self.sim.validate()?;
        self.stdp.validate()?;
        self.embedding.validate()?;
        self.graph.validate()?;
        self.fit.validate()?;
        if !(self.input_weight.is_finite() && self.w_max > 0.0 && (0.0..=1.0).contains(&self.recurrent_p)) {
            return Err(Error::Validation("input_weight must be finite, w_max positive, recurrent_p in [0, 1]".into()));
        }
        if !(self.recurrent_init.0 <= self.recurrent_init.1) {
            return Err(Error::Validation("recurrent_init must be an ordered range".into()));
        }
        if !(self.cap_factor > 0.0) || self.eval_num_mc == 0 {
            return Err(Error::Validation("cap_factor and eval_num_mc must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every random draw of the run, including the generator.
    pub seed: u64,
    pub synth: SynthConfig,
    pub train_fraction: f64,
    pub model: ModelConfig,
    pub hawkes: HawkesFitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig { kernel: KernelMode::LastSpike, ..SynthConfig::default() },
            train_fraction: 0.8,
            model: ModelConfig::default(),
            hawkes: HawkesFitConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Validation("train_fraction must lie in (0, 1)".into()));
        }
        if self.hawkes.beta_grid.is_empty() || self.hawkes.beta_grid.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Validation("beta_grid must hold positive decays".into()));
        }
        Ok(())
    }

    /// The configuration actually run: the global seed drives the generator.
    pub fn effective(&self) -> Self {
        let mut c = self.clone();
        c.synth.seed = self.seed;
        c
    }

    /// Hex SHA-256 of the canonical JSON of the effective configuration.
    pub fn digest(&self) -> String {
        digest_of(&self.effective())
    }
}

pub fn digest_of<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("configs serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `sdgn`, `poisson` or `hawkes`.
    pub model: String,
    pub mode: Option<AblationMode>,
    pub num_nodes: usize,
    pub sparsity: f64,
    pub seed: u64,
    pub rmse: Option<f64>,
    pub nll: Option<f64>,
    pub ssi: Option<f64>,
    pub runtime_seconds: Option<f64>,
    /// Why a metric is null.
    pub null_reasons: BTreeMap<String, String>,
    pub config_digest: String,
    pub predictions: usize,
    /// Predictions whose tail mass beyond the cap exceeded 1%.
    pub truncated_predictions: usize,
    pub flags: Vec<String>,
}

impl MetricsReport {
    fn new(model: &str, mode: Option<AblationMode>, cfg: &RunConfig) -> Self {
        Self {
            model: model.into(),
            mode,
            num_nodes: cfg.synth.num_nodes,
            sparsity: cfg.synth.sparsity,
            seed: cfg.seed,
            rmse: None,
            nll: None,
            ssi: None,
            runtime_seconds: None,
            null_reasons: BTreeMap::new(),
            config_digest: cfg.digest(),
            predictions: 0,
            truncated_predictions: 0,
            flags: Vec::new(),
        }
    }

    /// Stores `value` or a null with `reason` when it is absent or not finite.
    pub fn set(&mut self, field: &str, value: Option<f64>, reason: &str) {
        let v = value.filter(|x| x.is_finite());
        if v.is_none() {
            let why = match value {
                Some(x) => format!("{reason} (value {x})"),
                None => reason.to_string(),
            };
            self.null_reasons.insert(field.into(), why);
        } else {
            self.null_reasons.remove(field);
        }
        match field {
            "rmse" => self.rmse = v,
            "nll" => self.nll = v,
            "ssi" => self.ssi = v,
            "runtime_seconds" => self.runtime_seconds = v,
            other => panic!("unknown metric {other}"),
        }
    }

    pub fn label(&self) -> String {
        match self.mode {
            Some(m) => format!("{}:{}", self.model, mode_name(m)),
            None => self.model.clone(),
        }
    }
}

pub fn mode_name(mode: AblationMode) -> &'static str {
    match mode {
        AblationMode::Full => "full",
        AblationMode::Random => "random",
        AblationMode::SpatialOnly => "spatial_only",
    }
}

/// Generated data split into training and (re-based) test halves.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: RunConfig,
    pub events: EventSequence,
    pub timeline: GraphTimeline,
    pub train: EventSequence,
    pub test: EventSequence,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let config = cfg.effective();
    let synthetic = simulate(&config.synth)?;
    let (train, test) = split_train_test(&synthetic.events, config.train_fraction)?;
    if train.len() < 2 || test.len() < 2 {
        return Err(Error::InsufficientData(format!("{} training and {} test events", train.len(), test.len())));
    }
    Ok(Prepared { config, events: synthetic.events, timeline: synthetic.timeline, train, test })
}

/// Spiking encoding of one sequence: embeddings at `0` and every event time,
/// per-node output spikes, and the synapses after the run.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub table: EmbeddingTable,
    pub node_spikes: Vec<SpikeTrain>,
    pub synapses: SynapseMatrix,
    pub output_spikes: usize,
}

pub fn initial_synapses(num_nodes: usize, cfg: &ModelConfig, seed: u64) -> Result<SynapseMatrix> {
    let mut rng = rng::stream(seed, streams::WEIGHTS);
    SynapseMatrix::random(num_nodes * cfg.embedding.neurons_per_node, cfg.recurrent_p, cfg.recurrent_init, cfg.w_max, &mut rng)
}

fn network(num_nodes: usize, synapses: SynapseMatrix, cfg: &ModelConfig, plastic: bool) -> Result<Network> {
    let r = cfg.embedding.neurons_per_node;
    if synapses.num_neurons() != num_nodes * r {
        return Err(Error::Shape(format!("{} neurons for {num_nodes} nodes of {r}", synapses.num_neurons())));
    }
    let net = Network::new(cfg.lif.clone(), cfg.sim.clone(), synapses, InputProjection::blocks(num_nodes, r, cfg.input_weight))?;
    if plastic {
        net.with_plasticity(cfg.stdp.clone())
    } else {
        Ok(net)
    }
}

/// Merges each node's block of output trains into one train.
pub fn node_trains(spikes: &[SpikeTrain], neurons_per_node: usize) -> Vec<SpikeTrain> {
    spikes
        .chunks(neurons_per_node)
        .enumerate()
        .map(|(u, block)| SpikeTrain::merge(u, &block.iter().collect::<Vec<_>>()))
        .collect()
}

pub fn encode(seq: &EventSequence, synapses: SynapseMatrix, cfg: &ModelConfig, plastic: bool) -> Result<Encoded> {
    let n = seq.num_types();
    let mut net = network(n, synapses, cfg, plastic)?;
    let mut times = Vec::with_capacity(seq.len() + 1);
    times.push(0.0);
    times.extend(seq.events().iter().map(|e| e.t));
    let probe = Probe::at_times((0..net.num_neurons()).collect(), times);
    let out = run_event_driven(&mut net, &encode_as_spikes(seq), seq.horizon(), Some(probe))?;
    let table = EmbeddingTable::from_run(&out.spikes, &out.traces, &cfg.embedding, &cfg.lif)?;
    let output_spikes = out.spikes.iter().map(SpikeTrain::len).sum();
    let node_spikes = node_trains(&out.spikes, cfg.embedding.neurons_per_node);
    Ok(Encoded { table, node_spikes, synapses: net.synapses, output_spikes })
}

/// Dynamic graph of one split under an ablation mode. The lasso estimator
/// needs the split's events and the synapses that rank the basis neurons.
pub fn estimate_graph(
    seq: &EventSequence,
    encoded: &Encoded,
    cfg: &ModelConfig,
    mode: AblationMode,
    seed: u64,
) -> Result<DynamicGraph> {
    let g = &cfg.graph;
    let horizon = seq.horizon();
    let windows = g.windows(horizon);
    let n = seq.num_types();
    let theta = g.theta_for(n);
    match g.estimator {
        Estimator::Spike => {
            let full = spike_graph(&encoded.node_spikes, g.pair_tau, g.sub_windows, &windows, theta)?;
            ablation_graph(mode, &full, seed, || {
                spike_graph(&encoded.node_spikes, g.pair_tau, g.sub_windows * windows.len(), &[(0.0, horizon)], theta)
            })
        }
        Estimator::Lasso => {
            let ranked = crate::graph::rank_by_centrality(&encoded.synapses, g.basis_size.min(encoded.synapses.num_neurons()));
            let mut net = network(n, encoded.synapses.clone(), cfg, false)?;
            let probe = Probe::grid(ranked.0, horizon, cfg.sim.record_grid);
            let out = run_event_driven(&mut net, &encode_as_spikes(seq), horizon, Some(probe))?;
            let basis = select_basis(&out.traces, &encoded.synapses, g.basis_size)?;
            drop(out);
            let per_window = |ws: &[(f64, f64)], k: usize| -> Result<DynamicGraph> {
                let windows = ws
                    .iter()
                    .map(|&(a, b)| lasso_window(seq, &basis, g.signal_tau, k, a, b, g.combine, &g.admm))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DynamicGraph { num_nodes: n, windows })
            };
            let full = per_window(&windows, g.sub_windows)?;
            ablation_graph(mode, &full, seed, || per_window(&[(0.0, horizon)], g.sub_windows * windows.len()))
        }
    }
}

/// Everything needed to evaluate a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: RunConfig,
    pub config_digest: String,
    pub mode: AblationMode,
    pub params: IntensityParams,
    pub num_neurons: usize,
    pub synapses: Vec<WeightRecord>,
    pub graph: DynamicGraph,
    pub fit: FitReport,
    /// Mean training event rate, events per second.
    pub train_rate: f64,
}

pub const CHECKPOINT_FORMAT: &str = "sdgn-checkpoint-1";

impl Checkpoint {
    pub fn synapse_matrix(&self) -> Result<SynapseMatrix> {
        SynapseMatrix::new(self.num_neurons, &self.synapses, self.config.model.w_max)
    }
}

fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Trains the intensity on an encoded training split with the graph of `mode`.
pub fn train_model(cfg: &RunConfig, train: &EventSequence, encoded: &Encoded, mode: AblationMode) -> Result<Checkpoint> {
    let cfg = cfg.effective();
    let graph = estimate_graph(train, encoded, &cfg.model, mode, stage_seed(cfg.seed, 1))?;
    let attention = Attention::from_graph(&graph);
    let data = TppData::new(train, &encoded.table, &attention)?;
    let init = IntensityParams::from_rates(train, cfg.model.embedding.dim());
    let (params, fit) = fit_intensity(&data, init, &cfg.model.fit, stage_seed(cfg.seed, 2))?;
    Ok(Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        config_digest: cfg.digest(),
        mode,
        params,
        num_neurons: encoded.synapses.num_neurons(),
        synapses: encoded.synapses.records(),
        graph,
        fit,
        train_rate: train.len() as f64 / train.horizon(),
        config: cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    /// Index of the predicted event in the test split.
    pub index: usize,
    pub origin: f64,
    pub time: f64,
    pub event_type: usize,
    pub truth_time: f64,
    pub truth_type: usize,
    pub tail_mass: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<PredictionRecord>,
    pub rmse: f64,
    pub nll: f64,
    pub graph: DynamicGraph,
}

impl Evaluation {
    pub fn truncated(&self) -> usize {
        self.predictions.iter().filter(|p| p.truncated).count()
    }
}

/// Encodes the test split with the checkpoint's synapses (no plasticity).
pub fn encode_test(ckpt: &Checkpoint, test: &EventSequence) -> Result<Encoded> {
    encode(test, ckpt.synapse_matrix()?, &ckpt.config.model, false)
}

/// Predicts every test event after the first from its predecessor and
/// scores the held-out log-likelihood. The test graph is estimated from the
/// test split's own spiking activity under the checkpoint's mode.
pub fn evaluate_model(ckpt: &Checkpoint, test: &EventSequence, encoded: &Encoded) -> Result<Evaluation> {
    let cfg = &ckpt.config;
    if test.num_types() != ckpt.params.num_types {
        return Err(Error::Shape(format!("test has {} types, model {}", test.num_types(), ckpt.params.num_types)));
    }
    let graph = estimate_graph(test, encoded, &cfg.model, ckpt.mode, stage_seed(cfg.seed, 3))?;
    let attention = Attention::from_graph(&graph);
    let data = TppData::new(test, &encoded.table, &attention)?;
    let span = cfg.model.cap_factor / ckpt.train_rate;
    let ev = test.events();
    let mut predictions = Vec::with_capacity(ev.len().saturating_sub(1));
    for k in 0..ev.len().saturating_sub(1) {
        let origin = ev[k].t;
        let cap = origin + span;
        let surface = SdgnSurface::new(data, &ckpt.params, k + 1).prepared(cap);
        let p = predict_next(&surface, origin, cap)?;
        predictions.push(PredictionRecord {
            index: k + 1,
            origin,
            time: p.time,
            event_type: p.event_type,
            truth_time: ev[k + 1].t,
            truth_type: ev[k + 1].e,
            tail_mass: p.tail_mass,
            truncated: p.truncated,
        });
    }
    let (pt, tt): (Vec<f64>, Vec<f64>) = predictions.iter().map(|p| (p.time, p.truth_time)).unzip();
    let rmse = rmse(&pt, &tt)?;
    let ll = data.log_likelihood(&ckpt.params, &LikelihoodConfig::exhaustive(cfg.model.eval_num_mc), stage_seed(cfg.seed, 4))?;
    Ok(Evaluation { predictions, rmse, nll: -ll.value / test.len() as f64, graph })
}

/// Baseline predictions over the test split with the same origin/target pairs.
pub fn evaluate_baseline(model: &Baseline, test: &EventSequence, span: f64) -> Result<Evaluation> {
    let pairs = predict_sequence(model, test, span)?;
    let ev = test.events();
    let predictions: Vec<PredictionRecord> = pairs
        .iter()
        .enumerate()
        .map(|(k, (p, truth))| PredictionRecord {
            index: k + 1,
            origin: ev[k].t,
            time: p.time,
            event_type: p.event_type,
            truth_time: *truth,
            truth_type: ev[k + 1].e,
            tail_mass: p.tail_mass,
            truncated: p.truncated,
        })
        .collect();
    let (pt, tt): (Vec<f64>, Vec<f64>) = predictions.iter().map(|p| (p.time, p.truth_time)).unzip();
    let rmse = rmse(&pt, &tt)?;
    let nll = -model.log_likelihood(test) / test.len() as f64;
    Ok(Evaluation { predictions, rmse, nll, graph: DynamicGraph { num_nodes: test.num_types(), windows: Vec::new() } })
}

/// Report of an evaluated checkpoint; SSI and runtime are left for the caller.
pub fn report_for(ckpt: &Checkpoint, eval: &Evaluation) -> MetricsReport {
    let mut r = MetricsReport::new("sdgn", Some(ckpt.mode), &ckpt.config);
    r.set("rmse", Some(eval.rmse), "rmse not finite");
    r.set("nll", Some(eval.nll), "nll not finite");
    r.set("ssi", None, "no ground-truth graph given");
    r.set("runtime_seconds", None, "runtime not measured");
    r.predictions = eval.predictions.len();
    r.truncated_predictions = eval.truncated();
    if ckpt.fit.diverged {
        r.flags.push("training stopped on falling likelihood".into());
    }
    if ckpt.fit.underflows > 0 {
        r.flags.push(format!("{} intensity underflows", ckpt.fit.underflows));
    }
    if r.truncated_predictions > 0 {
        r.flags.push(format!("{} predictions with tail mass above 1%", r.truncated_predictions));
    }
    r
}

fn sdgn_report(ckpt: &Checkpoint, eval: &Evaluation, truth: &GraphTimeline, started: Instant) -> Result<MetricsReport> {
    let mut r = report_for(ckpt, eval);
    r.set("ssi", Some(ssi_against_timeline(&ckpt.graph, truth)?), "ssi not finite");
    r.set("runtime_seconds", Some(started.elapsed().as_secs_f64()), "runtime not measured");
    Ok(r)
}

fn baseline_report(cfg: &RunConfig, model: &Baseline, eval: &Evaluation, started: Instant) -> MetricsReport {
    let mut r = MetricsReport::new(model.name(), None, cfg);
    r.set("rmse", Some(eval.rmse), "rmse not finite");
    r.set("nll", Some(eval.nll), "nll not finite");
    r.set("ssi", None, "baselines estimate no graph");
    r.predictions = eval.predictions.len();
    r.truncated_predictions = eval.truncated();
    if let Baseline::Hawkes(h) = model {
        if !h.converged {
            r.flags.push("hawkes fit did not converge".into());
        }
        if !h.stationary {
            r.flags.push("hawkes fit is not stationary".into());
        }
    }
    r.set("runtime_seconds", Some(started.elapsed().as_secs_f64()), "runtime not measured");
    r
}

/// One full SDGN run of a single mode.
pub struct SdgnRun {
    pub checkpoint: Checkpoint,
    pub evaluation: Evaluation,
    pub report: MetricsReport,
}

/// Trains and evaluates SDGN under each mode; the spiking encodings are
/// shared since they do not depend on the graph.
pub fn run_modes(prepared: &Prepared, modes: &[AblationMode]) -> Result<Vec<SdgnRun>> {
    let cfg = &prepared.config;
    let started = Instant::now();
    let n = prepared.train.num_types();
    let enc_train = encode(&prepared.train, initial_synapses(n, &cfg.model, cfg.seed)?, &cfg.model, cfg.model.plasticity)?;
    let shared = started.elapsed();
    let mut test_enc: Option<Encoded> = None;
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let t0 = Instant::now();
        let ckpt = train_model(cfg, &prepared.train, &enc_train, mode)?;
        if test_enc.is_none() {
            test_enc = Some(encode_test(&ckpt, &prepared.test)?);
        }
        let evaluation = evaluate_model(&ckpt, &prepared.test, test_enc.as_ref().expect("set above"))?;
        let mut report = sdgn_report(&ckpt, &evaluation, &prepared.timeline, t0)?;
        report.runtime_seconds = report.runtime_seconds.map(|s| s + shared.as_secs_f64());
        out.push(SdgnRun { checkpoint: ckpt, evaluation, report });
    }
    Ok(out)
}

pub fn run_baseline(prepared: &Prepared, which: &str) -> Result<(Baseline, Evaluation, MetricsReport)> {
    let started = Instant::now();
    let cfg = &prepared.config;
    let model = match which {
        "poisson" => Baseline::Poisson(fit_poisson(&prepared.train)?),
        "hawkes" => Baseline::Hawkes(fit_hawkes(&prepared.train, &cfg.hawkes)?),
        other => return Err(Error::Validation(format!("unknown baseline {other}"))),
    };
    let span = cfg.model.cap_factor * prepared.train.horizon() / prepared.train.len() as f64;
    let eval = evaluate_baseline(&model, &prepared.test, span)?;
    let report = baseline_report(cfg, &model, &eval, started);
    Ok((model, eval, report))
}

pub const ALL_MODES: [AblationMode; 3] = [AblationMode::Full, AblationMode::Random, AblationMode::SpatialOnly];

/// Three graph modes and both baselines, in that order.
pub fn ablate(cfg: &RunConfig) -> Result<Vec<MetricsReport>> {
    let prepared = prepare(cfg)?;
    let mut reports: Vec<MetricsReport> = run_modes(&prepared, &ALL_MODES)?.into_iter().map(|r| r.report).collect();
    for b in ["poisson", "hawkes"] {
        reports.push(run_baseline(&prepared, b)?.2);
    }
    Ok(reports)
}

/// Full-mode SDGN report for one sweep cell.
pub fn sweep_cell(cfg: &RunConfig) -> Result<MetricsReport> {
    let prepared = prepare(cfg)?;
    let mut runs = run_modes(&prepared, &[AblationMode::Full])?;
    Ok(runs.remove(0).report)
}

/// SSI of the full-mode training graph against the generating timeline,
/// without fitting the intensity.
pub fn graph_recovery(cfg: &RunConfig) -> Result<f64> {
    let prepared = prepare(cfg)?;
    let c = &prepared.config;
    let n = prepared.train.num_types();
    let enc = encode(&prepared.train, initial_synapses(n, &c.model, c.seed)?, &c.model, c.model.plasticity)?;
    let graph = estimate_graph(&prepared.train, &enc, &c.model, AblationMode::Full, stage_seed(c.seed, 1))?;
    ssi_against_timeline(&graph, &prepared.timeline)
}

/// Configurations of a node × sparsity × seed grid, seeds `0..seeds`.
pub fn sweep_grid(base: &RunConfig, nodes: &[usize], sparsities: &[f64], seeds: u64) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for &n in nodes {
        for &s in sparsities {
            for seed in 0..seeds {
                let mut c = base.clone();
                c.synth.num_nodes = n;
                c.synth.sparsity = s;
                c.seed = base.seed.wrapping_add(seed);
                out.push(c);
            }
        }
    }
    out
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}

/// One row per report.
pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("model,mode,num_nodes,sparsity,seed,rmse,nll,ssi\n");
    for r in reports {
        s += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.model,
            r.mode.map(mode_name).unwrap_or(""),
            r.num_nodes,
            r.sparsity,
            r.seed,
            fmt_opt(r.rmse),
            fmt_opt(r.nll),
            fmt_opt(r.ssi)
        );
    }
    s
}

/// Mean and standard error of `metric` per (label, num_nodes, sparsity).
pub fn summary_csv(reports: &[MetricsReport], metric: &str) -> String {
    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in reports {
        let v = match metric {
            "rmse" => r.rmse,
            "nll" => r.nll,
            "ssi" => r.ssi,
            _ => None,
        };
        if let Some(v) = v {
            groups.entry((r.label(), r.num_nodes, format!("{}", r.sparsity))).or_default().push(v);
        }
    }
    let mut s = format!("model,num_nodes,sparsity,runs,mean_{metric},se_{metric}\n");
    for ((label, n, sp), vals) in groups {
        let m = crate::stats::mean(&vals);
        let se = if vals.len() > 1 { crate::stats::std_dev(&vals) / (vals.len() as f64).sqrt() } else { 0.0 };
        s += &format!("{label},{n},{sp},{},{m},{se}\n", vals.len());
    }
    s
}
