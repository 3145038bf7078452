use std::path::Path;

use ndarray::Array2;

use super::*;
use crate::error::Error;
use crate::features::{FeatureSequence, FRAME_RATE};
use crate::geometry::{
    read_landmark_file, write_landmark_file, LandmarkFrame, LandmarkSequence, Point,
};
use crate::model::{ModelConfig, TalkingFaceModel};

fn synth(dir: &Path, n: usize, seed: u64, split: Split) -> DatasetManifest {
    generate_synthetic_dataset(
        dir,
        &SynthConfig {
            seed,
            utterances: n,
            split,
            ..Default::default()
        },
    )
    .unwrap()
}

/// Pins the outer eye corners with complex arithmetic: z -> a z + b.
fn pin_oracle(frames: &[LandmarkFrame]) -> Vec<[Point; 68]> {
    let (l, r) = (frames[0].point(36), frames[0].point(45));
    let (pl, pr) = ((0.3, 1.0 / 3.0), (0.7, 1.0 / 3.0));
    let (dx, dy) = (r.x - l.x, r.y - l.y);
    let (ex, ey) = (pr.0 - pl.0, pr.1 - pl.1);
    let den = dx * dx + dy * dy;
    let (ar, ai) = ((ex * dx + ey * dy) / den, (ey * dx - ex * dy) / den);
    let br = pl.0 - (ar * l.x - ai * l.y);
    let bi = pl.1 - (ar * l.y + ai * l.x);
    frames
        .iter()
        .map(|f| {
            let mut out = [Point::default(); 68];
            for (o, p) in out.iter_mut().zip(f.points()) {
                *o = Point::new(ar * p.x - ai * p.y + br, ar * p.y + ai * p.x + bi);
            }
            out
        })
        .collect()
}

#[test]
fn two_entry_mean_face_is_direct_average() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 2, 5, Split::Train);
    let ds = build_dataset(&m, 0, None).unwrap();
    assert_eq!(ds.utterances.len(), 2);
    let mut acc = [Point::default(); 68];
    let mut n = 0.0;
    for e in &m.entries {
        let file = read_landmark_file(&e.landmarks).unwrap();
        let px: Vec<LandmarkFrame> = file
            .frames
            .iter()
            .map(|f| f.map(|p| Point::new(p.x / 600.0, p.y / 600.0)))
            .collect();
        for f in pin_oracle(&px) {
            for (a, p) in acc.iter_mut().zip(f) {
                a.x += p.x;
                a.y += p.y;
            }
            n += 1.0;
        }
    }
    assert_eq!(ds.mean_face.source_count, 150);
    for (a, p) in acc.iter().zip(ds.mean_face.frame.points()) {
        assert!((a.x / n - p.x).abs() < 1e-12 && (a.y / n - p.y).abs() < 1e-12);
    }
    // identity removal anchors every track's first frame on the mean face
    for u in &ds.utterances {
        assert!(u.targets.frames()[0].max_abs_diff(&ds.mean_face.frame) < 1e-12);
    }
}

#[test]
fn mean_face_uses_training_split_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = synth(dir.path(), 3, 6, Split::Train);
    m.entries[2].split = Split::Val;
    let ds = build_dataset(&m, 0, None).unwrap();
    let mut train_only = m.clone();
    train_only.entries.truncate(2);
    let reference = build_dataset(&train_only, 0, None).unwrap();
    assert_eq!(ds.mean_face, reference.mean_face);
    assert_eq!(ds.count(Split::Val), 1);
}

#[test]
fn three_seconds_give_one_full_chunk() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 1, 1, Split::Train);
    let ds = build_dataset(&m, 0, None).unwrap();
    assert_eq!(ds.utterances[0].num_frames(), 75);
    let cfg = ModelConfig {
        delay_frames: 0,
        context_frames: 3,
        ..ModelConfig::default()
    };
    let ex = make_examples(&ds.utterances, &cfg, SEQUENCE_LENGTH).unwrap();
    assert_eq!(ex.len(), 1);
    assert_eq!(ex[0].inputs.dim(), (75, 384));
    assert_eq!(ex[0].weights.sum(), 75.0);
    assert_eq!(ex[0].targets, ds.utterances[0].targets.to_matrix());
}

#[test]
fn long_utterances_are_chunked_and_padded() {
    let frames = 80;
    let u = Utterance {
        entry: 0,
        speaker: "s".into(),
        split: Split::Train,
        features: FeatureSequence::new(Array2::from_shape_fn((frames, 128), |(t, _)| t as f64), FRAME_RATE),
        targets: LandmarkSequence::from_matrix(
            &Array2::from_shape_fn((frames, 136), |(t, _)| t as f64),
            FRAME_RATE,
        )
        .unwrap(),
    };
    let cfg = ModelConfig {
        delay_frames: 1,
        context_frames: 1,
        ..ModelConfig::default()
    };
    let ex = make_examples([&u], &cfg, 75).unwrap();
    assert_eq!(ex.len(), 2);
    assert_eq!(ex[0].weights[0], 0.0);
    assert_eq!(ex[0].weights.sum(), 74.0);
    // step t of chunk 2 is utterance step 75 + t, targeting frame 74 + t
    assert_eq!(ex[1].targets[[0, 0]], 74.0);
    assert_eq!(ex[1].inputs[[4, 0]], 79.0);
    assert_eq!(ex[1].weights.sum(), 5.0);
    assert_eq!(ex[1].inputs[[5, 0]], 0.0);
}

#[test]
fn frame_count_mismatch_rejects_entry() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 3, 2, Split::Train);
    // drop 3 landmark frames from entry 1, 2 frames from entry 2
    for (i, drop) in [(1, 3), (2, 2)] {
        let path = &m.entries[i].landmarks;
        let mut f = read_landmark_file(path).unwrap();
        f.frames.truncate(75 - drop);
        write_landmark_file(path, &f).unwrap();
    }
    let ds = build_dataset(&m, 0, None).unwrap();
    assert_eq!(ds.utterances.len(), 2);
    assert_eq!(ds.failures.len(), 1);
    assert_eq!(ds.failures[0].entry, 1);
    assert!(ds.failures[0].message.contains("75 audio feature frames vs 72 landmark frames"));
    assert_eq!(ds.utterances[1].num_frames(), 73);
    assert_eq!(ds.utterances[1].features.num_frames(), 73);
}

#[test]
fn unreadable_entries_name_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = synth(dir.path(), 2, 2, Split::Train);
    m.entries[0].audio = dir.path().join("missing.wav");
    let ds = build_dataset(&m, 0, None).unwrap();
    assert!(ds.failures[0].message.contains("missing.wav"));
    m.entries[1].landmarks = dir.path().join("gone.txt");
    match build_dataset(&m, 0, None) {
        Err(Error::EmptyInput(msg)) => assert!(msg.contains("missing.wav") && msg.contains("gone.txt")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        build_dataset(&DatasetManifest::default(), 0, None),
        Err(Error::EmptyInput(msg)) if msg == "empty manifest"
    ));
}

#[test]
fn build_is_idempotent_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), 3, 4, Split::Auto);
    let a = build_dataset(&m, 9, None).unwrap();
    let b = build_dataset(&m, 9, None).unwrap();
    assert_eq!(a, b);
    let out = dir.path().join("pre");
    let paths = write_preprocessed(&a, &out).unwrap();
    assert_eq!(paths.len(), 3);
    let back = read_preprocessed(&out).unwrap();
    assert_eq!(back.utterances, a.utterances);
    assert_eq!(back.mean_face, a.mean_face);
    let text = read_landmark_file(&out.join("mean_face.txt")).unwrap();
    assert!(text.mean_face);
    assert!((text.frames[0].point(36).x - 180.0).abs() < 1e-9);
}

fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        grid: vec![(1, 3)],
        model: ModelConfig {
            num_layers: 1,
            hidden_size: 8,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        },
        epochs: 2,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_return_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&synth(dir.path(), 2, 1, Split::Train), 0, None).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..tiny_train_config()
    };
    let mc = cfg.model_config(1, 3);
    let trained = train_model(&ds, &mc, &cfg).unwrap();
    let init = initial_model(&mc, &ds.mean_face, train::grid_seed(3, "D40-C3"));
    assert_eq!(trained.model, init);
    assert!(trained.history.is_empty());
    // the untrained model outputs the mean face through its head bias
    let head: Vec<f64> = init.params.head_bias.to_vec();
    assert_eq!(head, ds.mean_face.frame.to_flat());
}

#[test]
fn grid_of_six_trains_six_models() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&synth(dir.path(), 2, 1, Split::Train), 0, None).unwrap();
    let cfg = TrainConfig {
        grid: full_grid(),
        epochs: 1,
        ..tiny_train_config()
    };
    let out = train_grid(&ds, &cfg).unwrap();
    let ids: Vec<&str> = out.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids, ["D0-C3", "D0-C5", "D40-C3", "D40-C5", "D80-C3", "D80-C5"]);
    assert!(out.iter().all(|(_, r)| r.as_ref().unwrap().history.len() == 1));
    let par = train_grid(&ds, &TrainConfig { parallel_grid: true, ..cfg }).unwrap();
    for ((_, a), (_, b)) in out.iter().zip(&par) {
        assert_eq!(a.as_ref().unwrap(), b.as_ref().unwrap());
    }
}

#[test]
fn training_is_deterministic_with_dropout() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&synth(dir.path(), 2, 1, Split::Train), 0, None).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            dropout_rate: 0.2,
            num_layers: 2,
            ..tiny_train_config().model
        },
        ..tiny_train_config()
    };
    let mc = cfg.model_config(1, 3);
    let a = train_model(&ds, &mc, &cfg).unwrap();
    let b = train_model(&ds, &mc, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history_tsv(), b.history_tsv());
    assert_eq!(a.history_tsv().lines().count(), 3);
}

#[test]
fn non_finite_loss_aborts_grid_point_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = build_dataset(&synth(dir.path(), 2, 1, Split::Train), 0, None).unwrap();
    let mut f = ds.utterances[0].features.frames().clone();
    f[[10, 3]] = f64::NAN;
    ds.utterances[0].features = FeatureSequence::new(f, FRAME_RATE);
    let cfg = TrainConfig {
        grid: vec![(0, 3), (1, 5)],
        ..tiny_train_config()
    };
    let out = train_grid(&ds, &cfg).unwrap();
    assert_eq!(out.len(), 2);
    for (_, r) in &out {
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}

#[test]
fn small_model_overfits_one_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&synth(dir.path(), 1, 11, Split::Train), 0, None).unwrap();
    let cfg = TrainConfig {
        grid: vec![(0, 1)],
        model: ModelConfig {
            num_layers: 1,
            hidden_size: 16,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        },
        learning_rate: 3e-3,
        epochs: 500,
        ..TrainConfig::default()
    };
    let trained = train_model(&ds, &cfg.model_config(0, 1), &cfg).unwrap();
    let last = trained.history.last().unwrap().train;
    assert!(last < 1e-3, "final loss {last}");
}

#[test]
fn evaluation_scores_ground_truth_as_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&synth(dir.path(), 2, 1, Split::Train), 0, None).unwrap();
    let gt: Vec<LandmarkSequence> = ds.utterances.iter().map(|u| u.targets.clone()).collect();
    let m = evaluate_sequences(&gt, &gt).unwrap();
    assert_eq!(m.rmse_position, 0.0);
    let cfg = tiny_train_config();
    let model: TalkingFaceModel = initial_model(&cfg.model_config(1, 3), &ds.mean_face, 1);
    let row = evaluate(&model, &ds.utterances).unwrap();
    assert_eq!(row.model_id, "D40-C3");
    assert!(row.metrics.rmse_position > 0.0);
    assert!(matches!(evaluate(&model, []), Err(Error::EmptyInput(_))));
}
