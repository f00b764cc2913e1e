//! Evaluation metrics: range-banded MAE, structural disagreement rate (SDR),
//! mean temporal consistency (mTC), and camera-frustum masks.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{project_point, CameraRig, View};
use crate::error::{config_err, Error, Result};
use crate::mapspace::{align_previous, ElevationMap, GridSpec, VehiclePose};
use crate::objective::tc_with_grad;

pub const DEFAULT_BANDS_M: [f64; 3] = [25.0, 50.0, 100.0];
pub const SDR_EPS: f64 = 1e-6;
pub const DEFAULT_SDR_PAIRS: usize = 100;
pub const DEFAULT_SDR_TAU: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandMae {
    /// Cells with forward distance `row * r` below this bound.
    pub max_range_m: f64,
    /// `None` when the band holds no evaluated cell.
    pub mae: Option<f64>,
    pub cells: usize,
}

/// Per-band sums for pooling over frames.
#[derive(Clone, Debug, Default)]
struct BandAccumulator {
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl BandAccumulator {
    fn new(n: usize) -> Self {
        Self {
            sums: vec![0.0; n],
            counts: vec![0; n],
        }
    }

    fn add(
        &mut self,
        pred: &Array2<f64>,
        gt: &Array2<f64>,
        grid: &GridSpec,
        bands: &[f64],
        mask: Option<&Array2<bool>>,
    ) {
        for ((row, col), &p) in pred.indexed_iter() {
            if mask.is_some_and(|m| !m[(row, col)]) {
                continue;
            }
            let dist = row as f64 * grid.resolution_m;
            let err = (p - gt[(row, col)]).abs();
            for (b, &bound) in bands.iter().enumerate() {
                if dist < bound {
                    self.sums[b] += err;
                    self.counts[b] += 1;
                }
            }
        }
    }

    fn finish(&self, bands: &[f64]) -> Vec<BandMae> {
        bands
            .iter()
            .enumerate()
            .map(|(b, &bound)| BandMae {
                max_range_m: bound,
                mae: (self.counts[b] > 0).then(|| self.sums[b] / self.counts[b] as f64),
                cells: self.counts[b],
            })
            .collect()
    }
}

fn check_bands(bands: &[f64]) -> Result<()> {
    if bands.is_empty() || bands.iter().any(|b| !(*b > 0.0)) {
        return Err(config_err("range bands must be positive"));
    }
    Ok(())
}

/// Mean absolute error over cells in each forward range band, optionally
/// restricted to `mask`.
pub fn mae_banded(
    pred: &ElevationMap,
    gt: &ElevationMap,
    bands: &[f64],
    mask: Option<&Array2<bool>>,
) -> Result<Vec<BandMae>> {
    pred.ensure_same_grid(gt)?;
    check_bands(bands)?;
    let mut acc = BandAccumulator::new(bands.len());
    acc.add(&pred.values, &gt.values, &pred.grid, bands, mask);
    Ok(acc.finish(bands))
}

/// Min-max normalization to `[0, 1]` over the selected cells; a constant
/// map becomes all 0.5.
fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Ordinal relation of two normalized depths with threshold `tau`.
pub fn ord(di: f64, dj: f64, tau: f64) -> i8 {
    let ratio = di.max(SDR_EPS) / dj.max(SDR_EPS);
    if ratio > 1.0 + tau {
        1
    } else if ratio < 1.0 - tau {
        -1
    } else {
        0
    }
}

fn selected(
    pred: &ElevationMap,
    gt: &ElevationMap,
    mask: Option<&Array2<bool>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    pred.ensure_same_grid(gt)?;
    let mut p = Vec::new();
    let mut g = Vec::new();
    for ((r, c), &v) in pred.values.indexed_iter() {
        if mask.is_none_or(|m| m[(r, c)]) {
            p.push(v);
            g.push(gt.values[(r, c)]);
        }
    }
    if p.len() < 2 {
        return Err(config_err("SDR needs at least two cells"));
    }
    Ok((normalize(&p), normalize(&g)))
}

/// SDR over `n` ordered cell pairs `i != j` drawn uniformly from `rng`.
pub fn sdr_with_rng(
    pred: &ElevationMap,
    gt: &ElevationMap,
    mask: Option<&Array2<bool>>,
    n: usize,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "SDR sample count must be positive".into(),
        ));
    }
    let (p, g) = selected(pred, gt, mask)?;
    let m = p.len();
    let mut disagree = 0usize;
    for _ in 0..n {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        if ord(p[i], p[j], tau) != ord(g[i], g[j], tau) {
            disagree += 1;
        }
    }
    Ok(disagree as f64 / n as f64)
}

pub fn sdr(pred: &ElevationMap, gt: &ElevationMap, n: usize, tau: f64, seed: u64) -> Result<f64> {
    sdr_with_rng(pred, gt, None, n, tau, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// SDR over every ordered pair `i != j`.
pub fn sdr_exhaustive(
    pred: &ElevationMap,
    gt: &ElevationMap,
    mask: Option<&Array2<bool>>,
    tau: f64,
) -> Result<f64> {
    let (p, g) = selected(pred, gt, mask)?;
    let m = p.len();
    let mut disagree = 0usize;
    for i in 0..m {
        for j in 0..m {
            if i != j && ord(p[i], p[j], tau) != ord(g[i], g[j], tau) {
                disagree += 1;
            }
        }
    }
    Ok(disagree as f64 / (m * (m - 1)) as f64)
}

/// Temporal term between each prediction and its aligned predecessor.
pub fn temporal_discrepancies(preds: &[ElevationMap]) -> Result<Vec<f64>> {
    preds
        .windows(2)
        .map(|w| {
            let (aligned, mask) = align_previous(&w[0], &w[1].frame_pose, &w[1].grid)?;
            Ok(tc_with_grad(&w[1].values, &aligned.values, &mask.mask)?.0)
        })
        .collect()
}

/// Mean temporal consistency over a prediction sequence.
pub fn mtc(preds: &[ElevationMap]) -> Result<f64> {
    if preds.len() < 2 {
        return Err(Error::InvalidArgument(
            "mTC needs at least two frames".into(),
        ));
    }
    let d = temporal_discrepancies(preds)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Cells whose center, lifted to the local ground height (`heights`, or 0),
/// projects inside at least one selected camera with positive depth.
pub fn frustum_mask(
    rig: &CameraRig,
    views: &[View],
    pose: &VehiclePose,
    grid: &GridSpec,
    heights: Option<&ElevationMap>,
) -> Result<Array2<bool>> {
    if let Some(h) = heights {
        if h.grid != *grid {
            return Err(config_err("height map grid differs from the mask grid"));
        }
    }
    let g = pose.gravity_rotation();
    Ok(Array2::from_shape_fn(grid.shape(), |(row, col)| {
        let (f, l) = grid.cell_center(row, col);
        let z = heights.map_or(0.0, |h| h.values[(row, col)]);
        let p = Vector3::new(f, l, z);
        views.iter().any(|&v| {
            let cam = rig.camera(v);
            project_point(cam, &g, &p).inside(&cam.intrinsics)
        })
    }))
}

/// Metric settings shared by every evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub bands_m: Vec<f64>,
    pub sdr_pairs: usize,
    pub sdr_tau: f64,
    pub sdr_seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            bands_m: DEFAULT_BANDS_M.to_vec(),
            sdr_pairs: DEFAULT_SDR_PAIRS,
            sdr_tau: DEFAULT_SDR_TAU,
            sdr_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_bands: Vec<BandMae>,
    /// MAE over every evaluated cell.
    pub mae_all: f64,
    pub sdr: f64,
    /// `None` when no sequence has two frames.
    pub mtc: Option<f64>,
    /// Frames scored for MAE and SDR.
    pub frames: usize,
    pub fingerprint: String,
}

impl EvalReport {
    /// Metrics as a small text table.
    pub fn table(&self, label: &str) -> String {
        let mut header = format!("{:<16}", "");
        let mut row = format!("{label:<16}");
        for b in &self.mae_bands {
            header.push_str(&format!(" {:>10}", format!("0-{}m", b.max_range_m)));
            row.push_str(&format!(
                " {:>10}",
                b.mae.map_or("-".to_string(), |m| format!("{m:.3}"))
            ));
        }
        header.push_str(&format!(" {:>10} {:>10} {:>10}", "all", "SDR", "mTC"));
        row.push_str(&format!(
            " {:>10.3} {:>10.3} {:>10}",
            self.mae_all,
            self.sdr,
            self.mtc.map_or("-".to_string(), |m| format!("{m:.3}"))
        ));
        format!("{header}\n{row}\n")
    }
}

/// Pools metrics over one or more sequences. MAE is pooled over cells,
/// SDR averaged over frames, and mTC averaged over consecutive prediction
/// pairs within each sequence.
pub struct ReportBuilder {
    opts: MetricOptions,
    bands: BandAccumulator,
    all: BandAccumulator,
    rng: ChaCha8Rng,
    sdr_sum: f64,
    frames: usize,
    discrepancies: Vec<f64>,
}

impl ReportBuilder {
    pub fn new(opts: &MetricOptions) -> Result<Self> {
        check_bands(&opts.bands_m)?;
        Ok(Self {
            opts: opts.clone(),
            bands: BandAccumulator::new(opts.bands_m.len()),
            all: BandAccumulator::new(1),
            rng: ChaCha8Rng::seed_from_u64(opts.sdr_seed),
            sdr_sum: 0.0,
            frames: 0,
            discrepancies: Vec::new(),
        })
    }

    /// Adds one sequence. `scored` selects the frames that enter MAE and
    /// SDR (all when `None`); mTC always uses the whole sequence.
    pub fn add_sequence(
        &mut self,
        preds: &[ElevationMap],
        gts: &[ElevationMap],
        masks: Option<&[Array2<bool>]>,
        scored: Option<&[bool]>,
    ) -> Result<()> {
        if preds.len() != gts.len()
            || masks.is_some_and(|m| m.len() != preds.len())
            || scored.is_some_and(|s| s.len() != preds.len())
        {
            return Err(config_err(
                "prediction, ground-truth, and mask counts differ",
            ));
        }
        for (k, (p, g)) in preds.iter().zip(gts).enumerate() {
            p.ensure_same_grid(g)?;
            if scored.is_some_and(|s| !s[k]) {
                continue;
            }
            let mask = masks.map(|m| &m[k]);
            self.bands
                .add(&p.values, &g.values, &p.grid, &self.opts.bands_m, mask);
            self.all
                .add(&p.values, &g.values, &p.grid, &[f64::INFINITY], mask);
            self.sdr_sum += sdr_with_rng(
                p,
                g,
                mask,
                self.opts.sdr_pairs,
                self.opts.sdr_tau,
                &mut self.rng,
            )?;
            self.frames += 1;
        }
        self.discrepancies.extend(temporal_discrepancies(preds)?);
        Ok(())
    }

    pub fn finish(&self, fingerprint: &str) -> Result<EvalReport> {
        if self.frames == 0 {
            return Err(Error::Dataset("nothing to evaluate".into()));
        }
        let n = self.discrepancies.len();
        Ok(EvalReport {
            mae_bands: self.bands.finish(&self.opts.bands_m),
            mae_all: self.all.finish(&[f64::INFINITY])[0].mae.unwrap_or(0.0),
            sdr: self.sdr_sum / self.frames as f64,
            mtc: (n > 0).then(|| self.discrepancies.iter().sum::<f64>() / n as f64),
            frames: self.frames,
            fingerprint: fingerprint.to_string(),
        })
    }
}

/// Metrics for a single sequence.
pub fn evaluate_predictions(
    preds: &[ElevationMap],
    gts: &[ElevationMap],
    masks: Option<&[Array2<bool>]>,
    opts: &MetricOptions,
    fingerprint: &str,
) -> Result<EvalReport> {
    let mut b = ReportBuilder::new(opts)?;
    b.add_sequence(preds, gts, masks, None)?;
    b.finish(fingerprint)
}
