mod common;

use proptest::prelude::*;

use common::oracle::{checkpoint_round_trip, escan_mismatches, generators_deterministic, masked_softmax_error, small_model};
use seqdyn::cells::CellKind;
use seqdyn::data::{TaskKind, TaskSpec};
use seqdyn::model::Arch;
use seqdyn::trace::TraceBundle;
use seqdyn::train::{capture_traces, train, trace_meta, TrainConfig};

#[test]
fn escan_generator_matches_reference_on_ten_thousand_samples() {
    let bad = escan_mismatches(10_000, 10, 15, 17);
    assert!(bad.is_empty(), "{} mismatches, first: {}", bad.len(), bad[0]);
}

#[test]
fn dictionary_tasks_follow_their_rules() {
    for kind in [TaskKind::OneToOne, TaskKind::Reversed, TaskKind::Sort] {
        let task = TaskSpec { kind, ..TaskSpec::one_to_one(4, 3, 8, 0) };
        let (input, output) = (task.input_vocab(), task.output_vocab());
        for s in task.generator(5).unwrap().take_samples(500) {
            let words = input.decode(&s.input).unwrap();
            let target = output.decode(&s.target).unwrap();
            let idx: Vec<usize> = words.iter().map(|w| (w.as_bytes()[0] - b'A') as usize).collect();
            let want: Vec<String> = match kind {
                TaskKind::OneToOne => idx.iter().map(|i| (i + 1).to_string()).collect(),
                TaskKind::Reversed => idx.iter().rev().map(|i| (i + 1).to_string()).collect(),
                _ => {
                    let mut sorted = words.iter().map(|w| w.to_string()).collect::<Vec<_>>();
                    sorted.sort();
                    sorted
                }
            };
            assert_eq!(target, want);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), escan in any::<bool>()) {
        let task = if escan { TaskSpec::escan(5, 12, 0) } else { TaskSpec::one_to_one(5, 2, 9, 0) };
        prop_assert!(generators_deterministic(&task, seed));
    }

    #[test]
    fn lengths_stay_in_bounds(seed in any::<u64>(), min in 1usize..8, extra in 0usize..8) {
        let task = TaskSpec::one_to_one(3, min, min + extra, 0);
        for s in task.generator(seed).unwrap().take_samples(40) {
            prop_assert!(s.input.len() > min && s.input.len() <= min + extra + 1);
            prop_assert_eq!(s.input.len(), s.target.len());
        }
    }

    #[test]
    fn escan_rules_hold_for_any_length_range(seed in any::<u64>(), min in 3usize..12, extra in 0usize..6) {
        let bad = escan_mismatches(200, min, min + extra, seed);
        prop_assert!(bad.is_empty(), "{:?}", bad.first());
    }

    #[test]
    fn masked_softmax_rows_normalise(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..7) {
        prop_assert!(masked_softmax_error(seed, rows, cols) <= 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let task = TaskSpec::one_to_one(3, 2, 5, 0);
    let dir = tempfile::tempdir().unwrap();
    for (i, (arch, cell)) in [(Arch::Aed, CellKind::Lstm), (Arch::Ved, CellKind::Gru), (Arch::Ao, CellKind::NonGatedTanh)].into_iter().enumerate() {
        let model = small_model(arch, cell, &task, 40 + i as u64);
        assert!(checkpoint_round_trip(&model, &task, &dir.path().join(format!("ckpt{i}"))), "{arch}/{cell}");
    }
}

#[test]
fn trace_bundle_round_trip() {
    let task = TaskSpec::one_to_one(3, 2, 5, 0);
    let model = small_model(Arch::Aed, CellKind::Gru, &task, 3);
    let samples = task.generator(2).unwrap().take_samples(12);
    let bundle = TraceBundle {
        meta: trace_meta(&model, &task, "m"),
        samples: capture_traces(&model, &samples, false, 1).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path()).unwrap();
    let back = TraceBundle::load(dir.path()).unwrap();
    // blobs are f32, so compare at that precision
    let f32_round = |b: &TraceBundle| {
        let mut b = b.clone();
        for s in &mut b.samples {
            for m in [&mut s.enc_states, &mut s.dec_states, &mut s.logits] {
                *m = m.map(|x| x as f32 as f64);
            }
            for m in [&mut s.alignment, &mut s.attention].into_iter().flatten() {
                *m = m.map(|x| x as f32 as f64);
            }
        }
        b
    };
    assert_eq!(back, f32_round(&bundle));
}

#[test]
fn training_is_deterministic() {
    let task = TaskSpec::one_to_one(3, 2, 5, 0);
    let cfg = TrainConfig {
        batch_size: 8,
        epochs: 1,
        batches_per_epoch: 6,
        eval_every: 3,
        eval_size: 16,
        ..TrainConfig::for_arch(Arch::Aed)
    };
    let run = || {
        let mut m = small_model(Arch::Aed, CellKind::Gru, &task, 9);
        let out = train(&mut m, &task, &cfg, 123, |_| {}).unwrap();
        (m.params.values().to_vec(), out.log)
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let before = small_model(Arch::Aed, CellKind::Gru, &task, 9);
    assert_ne!(before.params.values(), &a[..]);
}
