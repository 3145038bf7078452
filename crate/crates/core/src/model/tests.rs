use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{normalize, template_face_px};

fn tiny(delay: usize, context: usize) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden_size: 4,
        feature_dim: 6,
        context_frames: context,
        delay_frames: delay,
        dropout_rate: 0.0,
    }
}

fn mean_face() -> MeanFace {
    MeanFace {
        frame: normalize(&template_face_px()),
        source_count: 1,
    }
}

fn random_features(steps: usize, dim: usize, seed: u64) -> FeatureSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Array2::from_shape_simple_fn((steps, dim), || rng.random_range(-1.0..1.0));
    FeatureSequence::new(m, FRAME_RATE)
}

#[test]
fn model_ids() {
    assert_eq!(ModelConfig::default().model_id(), "D40-C5");
    assert_eq!(parse_model_id("D80-C3").unwrap(), (2, 3));
    assert_eq!(parse_model_id("D0-C5").unwrap(), (0, 5));
    for bad in ["D30-C3", "D40", "X40-C3", "D40-C0", "D-40-C3"] {
        assert!(matches!(parse_model_id(bad), Err(Error::Config(_))), "{bad}");
    }
    let c = ModelConfig::default().with_model_id("D0-C3").unwrap();
    assert_eq!((c.delay_frames, c.context_frames, c.input_dim()), (0, 3, 384));
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    for bad in [
        ModelConfig { dropout_rate: 1.0, ..Default::default() },
        ModelConfig { context_frames: 0, ..Default::default() },
        ModelConfig { num_layers: 0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[test]
fn sequence_loss_examples() {
    let target = Array2::from_elem((75, 136), 0.4);
    assert_eq!(mse_loss(&target, &target, 0).unwrap(), 0.0);
    assert!((mse_loss(&(&target + 0.1), &target, 0).unwrap() - 1.36).abs() < 1e-12);

    // with D = 1 only steps 1..75 count: put a unit error on step 0 (ignored)
    // and on step 10 (compared with target frame 9)
    let mut target = Array2::zeros((75, 136));
    for t in 0..75 {
        target.row_mut(t).fill(t as f64);
    }
    let mut pred = Array2::zeros((75, 136));
    for t in 1..75 {
        pred.row_mut(t).fill((t - 1) as f64);
    }
    pred[[0, 0]] = 50.0;
    pred[[10, 5]] += 1.0;
    let j = mse_loss(&pred, &target, 1).unwrap();
    assert!((j - 1.0 / 74.0).abs() < 1e-15);

    let short = Array2::zeros((74, 136));
    assert!(matches!(mse_loss(&short, &target, 0), Err(Error::Shape(_))));
    assert!(matches!(mse_loss(&pred, &target, 75), Err(Error::Shape(_))));
}

#[test]
fn delayed_targets_weight_padding() {
    let target = Array2::from_shape_fn((6, 2), |(t, k)| (10 * t + k) as f64);
    let (shifted, w) = delayed_targets(&target, 4, 2);
    assert_eq!(w, Array1::from(vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0]));
    assert_eq!(shifted.row(2), target.row(0));
    assert_eq!(shifted.row(5), target.row(3));
    let (_, w) = delayed_targets(&target, 3, 1);
    assert_eq!(w, Array1::from(vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0]));
}

#[test]
fn predict_shifts_by_delay_and_repins() {
    let config = tiny(2, 3);
    let model = TalkingFaceModel {
        params: init_params(&config, 21),
        config,
        mean_face: mean_face(),
    };
    let features = random_features(12, 6, 22);
    let out = model.predict(&features).unwrap();
    assert_eq!(out.frames.len(), 12);
    assert_eq!(out.raw.dim(), (12, 136));
    assert_eq!(out.model_id, "D80-C3");

    let pins = Pins::canonical();
    for (k, frame) in out.frames.frames().iter().enumerate() {
        assert_eq!(frame.point(36), pins.left);
        assert_eq!(frame.point(45), pins.right);
        let src = (k + 2).min(11);
        let raw = LandmarkFrame::from_flat(out.raw.row(src).as_slice().unwrap()).unwrap();
        assert_eq!(*frame, repin_eyes(&raw, &pins).unwrap());
    }

    // raw outputs are the plain inference pass over the stacked context
    let stacked = stack_context(&features, 3).unwrap().insert_axis(Axis(1));
    let direct = infer(&model.params, &stacked).unwrap().remove_axis(Axis(1));
    assert_eq!(direct, out.raw);
}

#[test]
fn predict_rejects_mismatched_features() {
    let config = tiny(1, 3);
    let model = TalkingFaceModel {
        params: init_params(&config, 1),
        config,
        mean_face: mean_face(),
    };
    assert!(matches!(model.predict(&random_features(5, 7, 1)), Err(Error::Shape(_))));
    let slow = FeatureSequence::new(Array2::zeros((5, 6)), 100.0);
    assert!(matches!(model.predict(&slow), Err(Error::Shape(_))));
}

#[test]
fn checkpoint_round_trip() {
    let config = ModelConfig {
        dropout_rate: 0.2,
        ..tiny(1, 5)
    };
    let model = TalkingFaceModel {
        params: init_params(&config, 31),
        config,
        mean_face: mean_face(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.lark");
    model.save(&path).unwrap();
    let back = TalkingFaceModel::load(&path).unwrap();
    assert_eq!(back, model);
    let c = crate::container::Container::read(&path).unwrap();
    assert_eq!(c.meta("model_id").unwrap(), "D40-C5");
    assert_eq!(c.meta("kind").unwrap(), CHECKPOINT_KIND);
    assert_eq!(c.tensors[0].name, "layer0.w_input");
    assert_eq!(c.tensors.last().unwrap().name, "mean_face");

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(TalkingFaceModel::load(&path), Err(Error::Checksum { .. })));
}

#[test]
fn checkpoint_rejects_other_containers() {
    let c = crate::container::Container::new("preprocessed");
    assert!(matches!(TalkingFaceModel::from_container(&c), Err(Error::Format(_))));
}

#[test]
fn adam_reduces_loss_on_fixed_batch() {
    let config = tiny(0, 1);
    let mut params = init_params(&config, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = Array3::from_shape_simple_fn((10, 4, 6), || rng.random_range(-1.0..1.0));
    let face = mean_face().frame.to_flat();
    let target = Array3::from_shape_fn((10, 4, 136), |(t, b, k)| face[k] + 0.05 * x[[t, b, k % 6]]);
    let w = Array2::ones((10, 4));
    let mut state = AdamState::new(
        AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        },
        &params,
    );
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let (y, cache) = forward(&params, &x, None).unwrap();
        let (loss, dy) = masked_mse(&y, &target, w.view()).unwrap();
        first.get_or_insert(loss);
        last = loss;
        let mut g = backward(&params, &cache, &dy).unwrap();
        clip_global_norm(&mut g, 5.0);
        adam_step(&mut params, &g, &mut state).unwrap();
    }
    let first = first.unwrap();
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn batch_major_layout() {
    let a = Array2::from_elem((3, 2), 1.0);
    let b = Array2::from_elem((3, 2), 2.0);
    let m = batch_major(&[a.clone(), b]).unwrap();
    assert_eq!(m.dim(), (3, 2, 2));
    assert_eq!(m[[2, 1, 0]], 2.0);
    assert!(matches!(batch_major(&[a, Array2::zeros((2, 2))]), Err(Error::Shape(_))));
    assert!(matches!(batch_major(&[]), Err(Error::EmptyInput(_))));
}
