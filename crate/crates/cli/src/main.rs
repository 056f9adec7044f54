use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use sdgn_core::events::{parse_event_file, split_train_test, write_event_file};
use sdgn_core::experiment::{
    self, encode, encode_test, estimate_graph, evaluate_model, initial_synapses, reports_csv, summary_csv, sweep_grid, train_model, Checkpoint,
    Estimator, MetricsReport, RunConfig, CHECKPOINT_FORMAT,
};
use sdgn_core::graph::{ssi_against_timeline, AblationMode};
use sdgn_core::synth::{read_graph_sidecar, simulate, write_graph_sidecar};
use sdgn_core::{Error, EventSequence};

const EXIT_RUNTIME: u8 = 1;
const EXIT_VALIDATION: u8 = 2;

#[derive(Parser)]
#[command(name = "sdgn", version, about = "Spiking dynamic-graph point processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Store wall-clock runtimes in reports (makes them non-reproducible).
    #[arg(long, global = true)]
    record_runtime: bool,
}

#[derive(Args, Clone, Default)]
struct DataFlags {
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    sparsity: Option<f64>,
    /// Seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Number of graph epochs.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct ModelFlags {
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Spike,
    Lasso,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Random,
    SpatialOnly,
}

impl From<ModeArg> for AblationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Full => AblationMode::Full,
            ModeArg::Random => AblationMode::Random,
            ModeArg::SpatialOnly => AblationMode::SpatialOnly,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic dataset: events, ground-truth graph, config echo.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Train on the training split of an event file; writes a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        events: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,
    },
    /// Estimate the dynamic graph of an event file.
    EstimateGraph {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        events: PathBuf,
        /// Ground-truth graph sidecar to score against.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Next-event predictions on the test split.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        events: PathBuf,
    },
    /// Metrics report on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Full, random and spatial-only graphs plus both baselines on synthetic data.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
        /// Comma-separated node counts; one ablation per count and seed.
        #[arg(long, value_delimiter = ',')]
        node_list: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Full-mode runs over a node × sparsity × seed grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long, value_delimiter = ',', default_value = "10,20,40")]
        nodes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,0.3,0.5")]
        sparsity: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut RunConfig, d: &DataFlags) {
    if let Some(n) = d.nodes {
        cfg.synth.num_nodes = n;
    }
    if let Some(s) = d.sparsity {
        cfg.synth.sparsity = s;
    }
    if let Some(t) = d.duration {
        cfg.synth.duration = t;
    }
    if let Some(k) = d.steps {
        cfg.synth.num_steps = k;
    }
}

fn apply_model(cfg: &mut RunConfig, m: &ModelFlags) {
    if let Some(e) = m.estimator {
        cfg.model.graph.estimator = match e {
            EstimatorArg::Spike => Estimator::Spike,
            EstimatorArg::Lasso => Estimator::Lasso,
        };
    }
    if let Some(k) = m.epochs {
        cfg.model.fit.epochs = k;
    }
}

fn out_dir(common: &Common) -> CliResult<PathBuf> {
    fs::create_dir_all(&common.out).map_err(|e| io_err(&common.out, e))?;
    Ok(common.out.clone())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Error::from)?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    command: &'a str,
    config_digest: String,
    config: RunConfig,
}

fn echo(dir: &Path, command: &str, cfg: &RunConfig) -> CliResult<()> {
    write_json(&dir.join(format!("{command}.config.json")), &ConfigEcho { command, config_digest: cfg.digest(), config: cfg.effective() })
}

/// Appends reports as JSON lines; earlier lines are never rewritten.
fn append_reports(dir: &Path, reports: &[MetricsReport]) -> CliResult<()> {
    let path = dir.join("reports.jsonl");
    let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| io_err(&path, e))?;
    let mut w = BufWriter::new(file);
    for r in reports {
        serde_json::to_writer(&mut w, r).map_err(Error::from)?;
        w.write_all(b"\n").map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

fn finalize(mut reports: Vec<MetricsReport>, record_runtime: bool) -> Vec<MetricsReport> {
    if !record_runtime {
        for r in &mut reports {
            r.set("runtime_seconds", None, "not recorded; pass --record-runtime");
        }
    }
    reports
}

fn read_events(path: &Path) -> CliResult<EventSequence> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(parse_event_file(BufReader::new(f))?)
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Failure::Validation(format!("{}: unsupported checkpoint format {}", path.display(), ckpt.format)));
    }
    if ckpt.config.digest() != ckpt.config_digest {
        return Err(Failure::Validation(format!("{}: config digest does not match its config", path.display())));
    }
    Ok(ckpt)
}

/// A checkpoint must be evaluated under the configuration that produced it.
fn check_digest(common: &Common, ckpt: &Checkpoint) -> CliResult<()> {
    if common.config.is_some() || common.seed.is_some() {
        let cfg = load_config(common)?;
        if cfg.digest() != ckpt.config_digest {
            return Err(Failure::Validation("config digest differs from the checkpoint's".into()));
        }
    }
    Ok(())
}

fn test_split(ckpt: &Checkpoint, events: &Path) -> CliResult<EventSequence> {
    let seq = read_events(events)?;
    if seq.num_types() != ckpt.params.num_types {
        return Err(Failure::Validation(format!("event file has {} types, checkpoint {}", seq.num_types(), ckpt.params.num_types)));
    }
    Ok(split_train_test(&seq, ckpt.config.train_fraction)?.1)
}

fn threads() -> CliResult<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SDGN_THREADS") {
        let n: usize = v.parse().map_err(|_| Failure::Validation(format!("SDGN_THREADS={v} is not a thread count")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Failure::Runtime(e.to_string()))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { common, data } => {
            let mut cfg = load_config(&common)?;
            apply_data(&mut cfg, &data);
            cfg.validate()?;
            let dir = out_dir(&common)?;
            let syn = simulate(&cfg.effective().synth)?;
            let mut w = create(&dir.join("events.jsonl"))?;
            write_event_file(&syn.events, &mut w)?;
            w.flush().map_err(|e| io_err(&dir, e))?;
            let mut g = create(&dir.join("graph.jsonl"))?;
            write_graph_sidecar(&syn.timeline.snapshots, &mut g)?;
            g.flush().map_err(|e| io_err(&dir, e))?;
            echo(&dir, "generate", &cfg)
        }
        Command::Train { common, model, events, mode } => {
            let mut cfg = load_config(&common)?;
            apply_model(&mut cfg, &model);
            cfg.validate()?;
            let dir = out_dir(&common)?;
            let seq = read_events(&events)?;
            let (train, _) = split_train_test(&seq, cfg.train_fraction)?;
            let c = cfg.effective();
            let enc = encode(&train, initial_synapses(train.num_types(), &c.model, c.seed)?, &c.model, c.model.plasticity)?;
            let ckpt = train_model(&cfg, &train, &enc, mode.into())?;
            write_json(&dir.join("checkpoint.json"), &ckpt)?;
            echo(&dir, "train", &cfg)
        }
        Command::EstimateGraph { common, model, events, truth } => {
            let mut cfg = load_config(&common)?;
            apply_model(&mut cfg, &model);
            cfg.validate()?;
            let dir = out_dir(&common)?;
            let seq = read_events(&events)?;
            let c = cfg.effective();
            let enc = encode(&seq, initial_synapses(seq.num_types(), &c.model, c.seed)?, &c.model, c.model.plasticity)?;
            let graph = estimate_graph(&seq, &enc, &c.model, AblationMode::Full, c.seed)?;
            let mut w = create(&dir.join("estimated_graph.jsonl"))?;
            write_graph_sidecar(&graph.snapshots(), &mut w)?;
            w.flush().map_err(|e| io_err(&dir, e))?;
            write_json(&dir.join("estimated_graph_probs.json"), &graph)?;
            let ssi = match truth {
                Some(p) => {
                    let f = File::open(&p).map_err(|e| io_err(&p, e))?;
                    let tl = read_graph_sidecar(BufReader::new(f), seq.num_types(), seq.horizon())?;
                    Some(ssi_against_timeline(&graph, &tl)?)
                }
                None => None,
            };
            let mut report = serde_json::Map::new();
            report.insert("ssi".into(), serde_json::json!(ssi));
            if ssi.is_none() {
                report.insert("ssi_null_reason".into(), "no ground truth given".into());
            }
            report.insert("config_digest".into(), cfg.digest().into());
            write_json(&dir.join("graph_report.json"), &report)?;
            echo(&dir, "estimate-graph", &cfg)
        }
        Command::Predict { common, checkpoint, events } => {
            let ckpt = read_checkpoint(&checkpoint)?;
            check_digest(&common, &ckpt)?;
            let dir = out_dir(&common)?;
            let test = test_split(&ckpt, &events)?;
            let enc = encode_test(&ckpt, &test)?;
            let eval = evaluate_model(&ckpt, &test, &enc)?;
            let path = dir.join("predictions.jsonl");
            let mut w = create(&path)?;
            for p in &eval.predictions {
                serde_json::to_writer(&mut w, p).map_err(Error::from)?;
                w.write_all(b"\n").map_err(|e| io_err(&path, e))?;
            }
            w.flush().map_err(|e| io_err(&path, e))
        }
        Command::Evaluate { common, checkpoint, events, truth } => {
            let started = std::time::Instant::now();
            let ckpt = read_checkpoint(&checkpoint)?;
            check_digest(&common, &ckpt)?;
            let dir = out_dir(&common)?;
            let seq = read_events(&events)?;
            let test = test_split(&ckpt, &events)?;
            let enc = encode_test(&ckpt, &test)?;
            let eval = evaluate_model(&ckpt, &test, &enc)?;
            let mut r = experiment::report_for(&ckpt, &eval);
            match truth {
                Some(p) => {
                    let f = File::open(&p).map_err(|e| io_err(&p, e))?;
                    let tl = read_graph_sidecar(BufReader::new(f), seq.num_types(), seq.horizon())?;
                    r.set("ssi", Some(ssi_against_timeline(&ckpt.graph, &tl)?), "ssi not finite");
                }
                None => r.set("ssi", None, "no ground-truth graph given"),
            }
            r.set("runtime_seconds", Some(started.elapsed().as_secs_f64()), "runtime not measured");
            append_reports(&dir, &finalize(vec![r], common.record_runtime))
        }
        Command::Ablate { common, data, model, node_list, seeds } => {
            let mut base = load_config(&common)?;
            apply_data(&mut base, &data);
            apply_model(&mut base, &model);
            base.validate()?;
            let dir = out_dir(&common)?;
            let nodes = if node_list.is_empty() { vec![base.synth.num_nodes] } else { node_list };
            let grid = sweep_grid(&base, &nodes, &[base.synth.sparsity], seeds.max(1));
            let pool = threads()?;
            let results: Vec<CliResult<Vec<MetricsReport>>> = pool.install(|| grid.par_iter().map(|c| Ok(experiment::ablate(c)?)).collect());
            let mut reports = Vec::new();
            for r in results {
                reports.extend(r?);
            }
            let reports = finalize(reports, common.record_runtime);
            append_reports(&dir, &reports)?;
            write_text(&dir.join("fig3_ablation_rmse.csv"), &summary_csv(&reports, "rmse"))?;
            echo(&dir, "ablate", &base)
        }
        Command::Sweep { common, model, nodes, sparsity, seeds } => {
            let mut base = load_config(&common)?;
            apply_model(&mut base, &model);
            base.validate()?;
            let dir = out_dir(&common)?;
            let grid = sweep_grid(&base, &nodes, &sparsity, seeds);
            for c in &grid {
                c.validate()?;
            }
            let pool = threads()?;
            let results: Vec<CliResult<MetricsReport>> = pool.install(|| grid.par_iter().map(|c| Ok(experiment::sweep_cell(c)?)).collect());
            let reports = finalize(results.into_iter().collect::<CliResult<Vec<_>>>()?, common.record_runtime);
            append_reports(&dir, &reports)?;
            write_text(&dir.join("sweep.csv"), &reports_csv(&reports))?;
            write_text(&dir.join("fig2a_ssi.csv"), &summary_csv(&reports, "ssi"))?;
            write_text(&dir.join("fig2_rmse.csv"), &summary_csv(&reports, "rmse"))?;
            echo(&dir, "sweep", &base)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
