mod common;

use common::{forward_values, relative_error, tiny_model_input, tiny_sequence};
use elevnet::net::{ElevNet, FrameInput, ModelConfig, PosEncoding};
use elevnet::tape::Tape;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_model() -> ElevNet {
    ElevNet::new(ModelConfig::desk(), 3).unwrap()
}

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn backbone_strides_and_weight_sharing() {
    let model = desk_model();
    let hw = 64 * 64;
    let view = random(3, hw, 1);
    let mut images = Array2::zeros((3, 3 * hw));
    for c in 0..3 {
        images.slice_mut(s![.., c * hw..(c + 1) * hw]).assign(&view);
    }
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let x = tape.constant(images);
    let feats = model.backbone(&mut tape, &p, x);
    for (f, n) in feats.iter().zip([8, 4, 2]) {
        let v = tape.value(*f);
        assert_eq!(v.ncols(), 3 * n * n);
        let t = n * n;
        assert_eq!(v.slice(s![.., 0..t]), v.slice(s![.., t..2 * t]));
        assert_eq!(v.slice(s![.., 0..t]), v.slice(s![.., 2 * t..3 * t]));
    }

    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let x = tape.constant(Array2::zeros((3, 3 * hw)));
    for f in model.backbone(&mut tape, &p, x) {
        assert!(tape.value(f).iter().all(|v| v.is_finite()));
    }
}

#[test]
fn wrong_image_size_is_a_config_error() {
    let (model, mut input, _) = tiny_model_input(0);
    input.images = Array2::zeros((3, 10));
    let mut tape = Tape::new();
    assert!(matches!(
        model.forward(&mut tape, &input),
        Err(elevnet::Error::Config(_))
    ));
}

#[test]
fn history_encoder_is_pointwise() {
    let model = desk_model();
    let (qr, qc) = model.config.query_grids()[0];
    let n = qr * qc;
    let encode = |h: Array2<f64>| {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let x = tape.constant(h);
        let y = model.encode_history(&mut tape, &p, x);
        tape.value(y).clone()
    };
    let zero = encode(Array2::zeros((1, n)));
    assert_eq!(zero.nrows(), 32);
    for row in zero.rows() {
        assert!(row.iter().all(|&v| v == row[0]));
    }

    let base = random(1, n, 2);
    let mut bumped = base.clone();
    let cell = n / 2 + 3;
    bumped[(0, cell)] += 1.0;
    let diff = encode(bumped) - encode(base);
    for j in 0..n {
        let col = diff.column(j);
        if j == cell {
            assert!(col.iter().any(|&v| v != 0.0));
        } else {
            assert!(col.iter().all(|&v| v == 0.0));
        }
    }
    let magnitude = diff.column(cell).mapv(|v| v * v).sum().sqrt();
    let pinned = PINNED_HISTORY_BUMP;
    assert!(
        (magnitude - pinned).abs() <= 1e-9 * pinned,
        "{magnitude:.17e}"
    );
}

const PINNED_HISTORY_BUMP: f64 = 5.876_240_411_939_463;

#[test]
fn singleton_attention_returns_the_value() {
    let mut tape = Tape::new();
    let q = tape.constant(random(4, 7, 3));
    let k = tape.constant(random(4, 1, 4));
    let vv = random(6, 1, 5);
    let v = tape.constant(vv.clone());
    for heads in [1, 2] {
        let out = ElevNet::attention(&mut tape, q, k, v, heads);
        for col in tape.value(out).columns() {
            for (a, b) in col.iter().zip(vv.column(0)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn equal_keys_average_the_values() {
    let mut tape = Tape::new();
    let q = tape.constant(random(4, 5, 6));
    let key = random(4, 1, 7);
    let k = tape.constant(Array2::from_shape_fn((4, 9), |(i, _)| key[(i, 0)]));
    let vv = random(3, 9, 8);
    let v = tape.constant(vv.clone());
    let out = ElevNet::attention(&mut tape, q, k, v, 1);
    let mean = vv.mean_axis(ndarray::Axis(1)).unwrap();
    for col in tape.value(out).columns() {
        for (a, b) in col.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_features_decode_to_a_zero_map() {
    let model = desk_model();
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let grids = model.config.query_grids();
    let feats: Vec<_> = (0..3)
        .map(|s| {
            let width = model
                .params
                .get(&format!("decoder.scale{s}.proj.weight"))
                .unwrap()
                .ncols();
            tape.constant(Array2::zeros((width, grids[s].0 * grids[s].1)))
        })
        .collect();
    let out = model.decode(&mut tape, &p, feats.try_into().unwrap());
    let v = tape.value(out);
    assert_eq!(v.ncols(), 32 * 32);
    assert!(v.iter().all(|&x| x == 0.0));
}

#[test]
fn direction_embedding_is_deterministic() {
    let (model, input, _) = tiny_model_input(1);
    let embed = || {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape);
        let d = tape.constant(input.directions[0].clone());
        let e = model.embed_directions(&mut tape, &p, 0, d);
        tape.value(e).clone()
    };
    assert_eq!(embed(), embed());
}

fn with_roll(model: &ElevNet, roll: f64) -> FrameInput {
    let seq = tiny_sequence(40, 1);
    let s = &seq.samples[0];
    let mut pose = s.pose;
    pose.roll = roll;
    pose.pitch = 0.0;
    model.prepare(&seq.rig, &s.images, &pose, None).unwrap()
}

#[test]
fn roll_reaches_the_prediction_only_with_gravity_alignment() {
    let mut cfg = ModelConfig::tiny();
    let ope = ElevNet::new(cfg.clone(), 5).unwrap();
    let (a, b) = (with_roll(&ope, 0.0), with_roll(&ope, 0.3));
    assert_ne!(a.directions, b.directions);
    assert!(relative_error(&forward_values(&ope, &a), &forward_values(&ope, &b)) > 1e-6);

    cfg.pos_encoding = PosEncoding::Cpe;
    let cpe = ElevNet::from_params(cfg, ope.params.clone()).unwrap();
    let (a, b) = (with_roll(&cpe, 0.0), with_roll(&cpe, 0.3));
    assert_eq!(a.directions, b.directions);
    assert_eq!(forward_values(&cpe, &a), forward_values(&cpe, &b));
}

#[test]
fn swapping_side_images_changes_the_prediction() {
    let (model, input, _) = tiny_model_input(2);
    let hw = model.config.image_size * model.config.image_size;
    let mut images = input.images.clone();
    images
        .slice_mut(s![.., hw..2 * hw])
        .assign(&input.images.slice(s![.., 2 * hw..3 * hw]));
    images
        .slice_mut(s![.., 2 * hw..3 * hw])
        .assign(&input.images.slice(s![.., hw..2 * hw]));
    let swapped = FrameInput {
        images,
        ..input.clone()
    };
    assert!(
        relative_error(
            &forward_values(&model, &input),
            &forward_values(&model, &swapped)
        ) > 1e-6
    );
}
