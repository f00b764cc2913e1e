use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{load_model, prepare_sequence, run_sequence};
use crate::camera::View;
use crate::error::{Error, Result};
use crate::evalkit::{frustum_mask, EvalReport, MetricOptions, ReportBuilder};
use crate::mapspace::ElevationMap;
use crate::net::{read_checkpoint, ElevNet};
use crate::synthworld::{read_dataset, Sequence};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub metrics: MetricOptions,
    /// Restrict MAE and SDR to cells seen by these cameras.
    pub views: Option<Vec<View>>,
    /// Score the ground truth against itself instead of running a model.
    pub gt_as_prediction: bool,
    /// Score only frames with `|roll|` above this many radians; mTC still
    /// covers every frame.
    pub min_abs_roll: Option<f64>,
}

/// Label used in reports produced without a model.
pub const GROUND_TRUTH_FINGERPRINT: &str = "ground-truth";

fn add_sequence(
    builder: &mut ReportBuilder,
    seq: &Sequence,
    preds: &[ElevationMap],
    opts: &EvalOptions,
) -> Result<()> {
    let gts: Vec<ElevationMap> = seq.samples.iter().map(|s| s.gt_map.clone()).collect();
    let masks = match &opts.views {
        Some(views) => Some(
            seq.samples
                .iter()
                .map(|s| frustum_mask(&seq.rig, views, &s.pose, &seq.grid(), Some(&s.gt_map)))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let scored = opts.min_abs_roll.map(|r| {
        seq.samples
            .iter()
            .map(|s| s.pose.roll.abs() > r)
            .collect::<Vec<_>>()
    });
    builder.add_sequence(preds, &gts, masks.as_deref(), scored.as_deref())
}

/// Sequence-ordered inference with recursive history, then metrics.
/// Returns the report and the predictions of every sequence.
pub fn evaluate_model(
    model: &ElevNet,
    fingerprint: &str,
    sequences: &[Sequence],
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<Vec<ElevationMap>>)> {
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::Dataset("evaluation dataset is empty".into()));
    }
    let mut builder = ReportBuilder::new(&opts.metrics)?;
    let mut all = Vec::with_capacity(sequences.len());
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let preds = if opts.gt_as_prediction {
            seq.samples.iter().map(|s| s.gt_map.clone()).collect()
        } else {
            run_sequence(model, &prepare_sequence(model, seq)?)?
        };
        add_sequence(&mut builder, seq, &preds, opts)?;
        all.push(preds);
    }
    Ok((builder.finish(fingerprint)?, all))
}

/// Ground truth scored against itself.
pub fn evaluate_ground_truth(sequences: &[Sequence], opts: &EvalOptions) -> Result<EvalReport> {
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::Dataset("evaluation dataset is empty".into()));
    }
    let mut builder = ReportBuilder::new(&opts.metrics)?;
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        let preds: Vec<_> = seq.samples.iter().map(|s| s.gt_map.clone()).collect();
        add_sequence(&mut builder, seq, &preds, opts)?;
    }
    builder.finish(GROUND_TRUTH_FINGERPRINT)
}

/// Loads a checkpoint and datasets and evaluates. When `expected` is given
/// the checkpoint fingerprint must equal it.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    datasets: &[PathBuf],
    opts: &EvalOptions,
    expected: Option<&str>,
) -> Result<EvalReport> {
    let sequences = datasets
        .iter()
        .map(|p| read_dataset(p))
        .collect::<Result<Vec<_>>>()?;
    if opts.gt_as_prediction {
        return evaluate_ground_truth(&sequences, opts);
    }
    let ckpt = read_checkpoint(checkpoint)?;
    if let Some(e) = expected {
        if e != ckpt.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: e.to_string(),
                found: ckpt.fingerprint.clone(),
            });
        }
    }
    let (_, model) = load_model(&ckpt)?;
    Ok(evaluate_model(&model, &ckpt.fingerprint, &sequences, opts)?.0)
}
