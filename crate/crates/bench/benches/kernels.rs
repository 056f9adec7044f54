use criterion::{criterion_group, criterion_main, Criterion};
use sdgn_core::events::encode_as_spikes;
use sdgn_core::graph::{coincidence_ratios, pair_score};
use sdgn_core::plasticity::SynapseMatrix;
use sdgn_core::snn::{run_event_driven, InputProjection, LifParams, Network, SimConfig};
use sdgn_core::synth::{simulate, KernelMode, SynthConfig};
use sdgn_core::tpp::{Attention, EmbeddingConfig, EmbeddingTable, IntensityParams, LikelihoodConfig, TppData};
use std::hint::black_box;

fn synth(nodes: usize, duration: f64) -> SynthConfig {
    SynthConfig { num_nodes: nodes, sparsity: 0.1, duration, kernel: KernelMode::LastSpike, seed: 1, ..Default::default() }
}

fn generator(c: &mut Criterion) {
    let cfg = synth(20, 200.0);
    c.bench_function("simulate 20 nodes 200 s", |b| b.iter(|| simulate(black_box(&cfg)).unwrap()));
}

fn graph_scores(c: &mut Criterion) {
    let seq = simulate(&synth(20, 200.0)).unwrap().events;
    let trains = encode_as_spikes(&seq);
    c.bench_function("pair_score", |b| b.iter(|| pair_score(black_box(trains[0].times()), black_box(trains[1].times()), 0.2)));
    c.bench_function("coincidence_ratios 20 nodes", |b| b.iter(|| coincidence_ratios(black_box(&trains), 0.2, 10, 0.0, 200.0)));
}

fn event_driven(c: &mut Criterion) {
    let seq = simulate(&synth(20, 50.0)).unwrap().events;
    let drive = encode_as_spikes(&seq);
    let synapses = SynapseMatrix::random(20, 0.2, (-0.1, 0.1), 1.0, &mut sdgn_core::rng::stream(1, 0)).unwrap();
    let base = Network::new(LifParams::default(), SimConfig::default(), synapses, InputProjection::blocks(20, 1, 3.0)).unwrap();
    c.bench_function("run_event_driven 20 neurons 50 s", |b| {
        b.iter(|| {
            let mut net = base.clone();
            run_event_driven(&mut net, black_box(&drive), 50.0, None).unwrap()
        })
    });
}

fn likelihood(c: &mut Criterion) {
    let seq = simulate(&synth(10, 200.0)).unwrap().events;
    let mut times = vec![0.0];
    times.extend(seq.events().iter().map(|e| e.t));
    let table = EmbeddingTable::resting(seq.num_types(), times, &EmbeddingConfig::default(), &LifParams::default());
    let attention = Attention::isolated(seq.num_types());
    let data = TppData::new(&seq, &table, &attention).unwrap();
    let params = IntensityParams::from_rates(&seq, table.dim);
    let cfg = LikelihoodConfig::default();
    c.bench_function("log_likelihood 10 types 200 s", |b| b.iter(|| data.log_likelihood(black_box(&params), &cfg, 1).unwrap()));
    c.bench_function("gradient 10 types 200 s", |b| {
        b.iter(|| data.gradient(black_box(&params), &cfg, 1, 0..data.num_intervals()).unwrap())
    });
}

criterion_group!(benches, generator, graph_scores, event_driven, likelihood);
criterion_main!(benches);
