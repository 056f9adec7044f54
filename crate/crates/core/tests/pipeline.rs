use proptest::prelude::*;
use sdgn_core::events::{parse_event_file, split_train_test, write_event_file};
use sdgn_core::experiment::{encode_test, evaluate_model, prepare, run_modes, Checkpoint, RunConfig, ALL_MODES};
use sdgn_core::graph::ssi;
use sdgn_core::synth::{read_graph_sidecar, simulate, write_graph_sidecar, SynthConfig};
use sdgn_core::{Event, EventSequence};

fn small() -> RunConfig {
    serde_json::from_str(
        r#"{"seed":4,"synth":{"num_nodes":5,"sparsity":0.3,"duration":60.0,"num_steps":3},
        "model":{"graph":{"window":20.0},"fit":{"epochs":3,"batch_window":20.0}},"hawkes":{"max_iter":50,"beta_grid":[1.0,5.0]}}"#,
    )
    .unwrap()
}

#[test]
fn generated_files_round_trip() {
    let cfg = SynthConfig { num_nodes: 8, duration: 100.0, seed: 2, ..Default::default() };
    let syn = simulate(&cfg).unwrap();
    let mut buf = Vec::new();
    write_event_file(&syn.events, &mut buf).unwrap();
    assert_eq!(parse_event_file(buf.as_slice()).unwrap(), syn.events);
    let mut side = Vec::new();
    write_graph_sidecar(&syn.timeline.snapshots, &mut side).unwrap();
    let back = read_graph_sidecar(side.as_slice(), 8, 100.0).unwrap();
    assert_eq!(back.snapshots, syn.timeline.snapshots);
}

#[test]
fn modes_are_reproducible_and_checkpoints_replay() {
    let prepared = prepare(&small()).unwrap();
    let a = run_modes(&prepared, &ALL_MODES).unwrap();
    let b = run_modes(&prepared, &ALL_MODES).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(serde_json::to_string(&x.checkpoint).unwrap(), serde_json::to_string(&y.checkpoint).unwrap());
        let (mut rx, mut ry) = (x.report.clone(), y.report.clone());
        rx.runtime_seconds = None;
        ry.runtime_seconds = None;
        assert_eq!(rx, ry);
    }
    let full = &a[0];
    let text = serde_json::to_string(&full.checkpoint).unwrap();
    let restored: Checkpoint = serde_json::from_str(&text).unwrap();
    let encoded = encode_test(&restored, &prepared.test).unwrap();
    let replay = evaluate_model(&restored, &prepared.test, &encoded).unwrap();
    assert_eq!(replay.rmse, full.evaluation.rmse);
    assert_eq!(replay.nll, full.evaluation.nll);
}

fn sequence() -> impl Strategy<Value = EventSequence> {
    (1usize..5, prop::collection::vec((0.0f64..50.0, 0usize..5), 0..60)).prop_map(|(k, raw)| {
        let events = raw.into_iter().map(|(t, e)| Event { t, e: e % k }).collect();
        EventSequence::new(events, k, 50.0).unwrap()
    })
}

proptest! {
    #[test]
    fn split_keeps_every_event(seq in sequence(), fraction in 0.05f64..0.95) {
        let (train, test) = split_train_test(&seq, fraction).unwrap();
        prop_assert_eq!(train.len() + test.len(), seq.len());
        prop_assert!((train.horizon() + test.horizon() - seq.horizon()).abs() < 1e-9);
        prop_assert!(test.events().iter().all(|e| e.t >= 0.0 && e.t <= test.horizon()));
    }

    #[test]
    fn ssi_is_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 16), b in prop::collection::vec(any::<bool>(), 16)) {
        let ab = ssi(&a, &b).unwrap().ssi;
        let ba = ssi(&b, &a).unwrap().ssi;
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }
}
