#![allow(dead_code)]

use elevnet::camera::CameraRig;
use elevnet::harness::{prepare_sequence, PreparedSequence};
use elevnet::mapspace::{ElevationMap, GridSpec};
use elevnet::net::{ElevNet, FrameInput, ModelConfig};
use elevnet::synthworld::{generate_sequence, Sequence, SequenceSpec, TerrainStyle};
use elevnet::tape::Tape;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_sequence(seed: u64, frames: usize) -> Sequence {
    let cfg = ModelConfig::tiny();
    let spec = SequenceSpec::sized(seed, TerrainStyle::Hilly, frames, cfg.image_size, cfg.grid);
    generate_sequence(&spec, &CameraRig::desk(cfg.image_size).unwrap()).unwrap()
}

pub fn desk_sequence(seed: u64, style: TerrainStyle, frames: usize) -> Sequence {
    generate_sequence(
        &SequenceSpec::desk(seed, style, frames),
        &CameraRig::desk(64).unwrap(),
    )
    .unwrap()
}

pub fn random_map(grid: GridSpec, rng: &mut impl Rng, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(grid.shape(), |_| rng.random_range(-scale..scale))
}

/// Tiny model plus the input of frame 1, with frame 0's ground truth
/// (perturbed) as history.
pub fn tiny_model_input(seed: u64) -> (ElevNet, FrameInput, PreparedSequence) {
    let model = ElevNet::new(ModelConfig::tiny(), seed).unwrap();
    let seq = tiny_sequence(seed + 100, 3);
    let prep = prepare_sequence(&model, &seq).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = prep.frames[0].gt.clone();
    prev.values += &random_map(prev.grid, &mut rng, 0.5);
    let f = &prep.frames[1];
    let input = FrameInput {
        images: f.images.clone(),
        directions: f.directions.clone(),
        history: model.history_input(Some(&prev), &f.pose).unwrap(),
    };
    (model, input, prep)
}

pub fn forward_values(model: &ElevNet, input: &FrameInput) -> Array2<f64> {
    let mut tape = Tape::new();
    let vars = model.forward(&mut tape, input).unwrap();
    model.prediction_values(&tape, &vars)
}

/// `||a - b|| / max(||a||, ||b||)`, with 0 for two zero vectors.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a
        .mapv(|v| v * v)
        .sum()
        .sqrt()
        .max(b.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of a scalar function of an array.
pub fn numeric_gradient(
    x: &Array2<f64>,
    h: f64,
    mut f: impl FnMut(&Array2<f64>) -> f64,
) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut xp = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let x0 = xp[idx];
        xp[idx] = x0 + h;
        let fp = f(&xp);
        xp[idx] = x0 - h;
        let fm = f(&xp);
        xp[idx] = x0;
        g[idx] = (fp - fm) / (2.0 * h);
    }
    g
}

pub struct GradientError {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub relative: f64,
}

/// Per-parameter comparison of the tape gradient of
/// `sum(weights * prediction)` with central differences.
pub fn model_gradient_errors(
    model: &ElevNet,
    input: &FrameInput,
    weights: &Array2<f64>,
    h: f64,
) -> Vec<GradientError> {
    let mut tape = Tape::new();
    let vars = model.forward(&mut tape, input).unwrap();
    let seed = weights
        .clone()
        .into_shape_with_order((1, weights.len()))
        .unwrap();
    let grads = tape.backward(vars.prediction, seed, model.params.len());
    let mut probe = model.clone();
    let mut out = Vec::new();
    for (i, name) in model.params.names().to_vec().into_iter().enumerate() {
        let x = model.params.get(&name).unwrap().clone();
        let numeric = numeric_gradient(&x, h, |xp| {
            *probe.params.get_mut(&name).unwrap() = xp.clone();
            (forward_values(&probe, input) * weights).sum()
        });
        *probe.params.get_mut(&name).unwrap() = x.clone();
        let analytic = grads.0[i].clone().unwrap_or_else(|| Array2::zeros(x.dim()));
        out.push(GradientError {
            name,
            analytic_norm: analytic.mapv(|v| v * v).sum().sqrt(),
            numeric_norm: numeric.mapv(|v| v * v).sum().sqrt(),
            relative: relative_error(&analytic, &numeric),
        });
    }
    out
}

/// Largest relative error among parameters with a nonzero gradient.
/// Parameters the output cannot depend on (a bias shared by every softmax
/// key, say) must have both gradients below `zero_tol` instead.
pub fn worst_gradient_error(errors: &[GradientError], zero_tol: f64) -> (String, f64) {
    let mut worst = (String::new(), 0.0);
    for e in errors {
        let err = if e.analytic_norm.max(e.numeric_norm) < zero_tol {
            0.0
        } else {
            e.relative
        };
        if err > worst.1 {
            worst = (e.name.clone(), err);
        }
    }
    worst
}

pub fn map_from(values: Array2<f64>, grid: GridSpec) -> ElevationMap {
    ElevationMap::new(
        grid,
        values,
        elevnet::mapspace::VehiclePose::level(0.0, 0.0, 0.0, 0.0),
        0.0,
    )
    .unwrap()
}
