use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossConfig, RunConfig};
use super::optim::{clip_grad_norm, grad_norm, learning_rate, Adam};
use crate::error::{config_err, Error, Result};
use crate::mapspace::{align_previous, ElevationMap, VehiclePose};
use crate::net::{image_tensor, Checkpoint, ElevNet, FrameInput, ParamStore};
use crate::objective::{total_with_grad, LossBreakdown, TemporalTarget};
use crate::synthworld::{read_dataset, Sequence};
use crate::tape::{ParamGrads, Tape};
use crate::util::atomic_write;

/// A frame with its model inputs precomputed.
#[derive(Clone, Debug)]
pub struct PreparedFrame {
    pub index: usize,
    pub images: Array2<f64>,
    pub directions: [Array2<f64>; 3],
    pub pose: VehiclePose,
    pub timestamp: f64,
    pub gt: ElevationMap,
}

#[derive(Clone, Debug)]
pub struct PreparedSequence {
    pub frames: Vec<PreparedFrame>,
}

pub fn prepare_sequence(model: &ElevNet, seq: &Sequence) -> Result<PreparedSequence> {
    if seq.grid() != model.config.grid {
        return Err(config_err(format!(
            "dataset grid {:?} does not match model grid {:?}",
            seq.grid(),
            model.config.grid
        )));
    }
    let frames = seq
        .samples
        .iter()
        .map(|s| {
            Ok(PreparedFrame {
                index: s.index,
                images: image_tensor(&s.images, model.config.image_size)?,
                directions: model.directions(&seq.rig, &s.pose)?,
                pose: s.pose,
                timestamp: s.timestamp,
                gt: s.gt_map.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSequence { frames })
}

fn frame_input(
    model: &ElevNet,
    frame: &PreparedFrame,
    prev: Option<&ElevationMap>,
) -> Result<FrameInput> {
    let history = if model.config.history {
        model.history_input(prev, &frame.pose)?
    } else {
        None
    };
    Ok(FrameInput {
        images: frame.images.clone(),
        directions: frame.directions.clone(),
        history,
    })
}

/// Inference with history from `prev`.
pub fn infer_frame(
    model: &ElevNet,
    frame: &PreparedFrame,
    prev: Option<&ElevationMap>,
) -> Result<ElevationMap> {
    model.infer(
        &frame_input(model, frame, prev)?,
        &frame.pose,
        frame.timestamp,
    )
}

/// Runs a whole sequence in order, feeding each prediction to the next
/// frame. Frame `t` only sees the prediction for `t - 1`.
pub fn run_sequence(model: &ElevNet, seq: &PreparedSequence) -> Result<Vec<ElevationMap>> {
    let mut preds: Vec<ElevationMap> = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        let pred = infer_frame(model, f, preds.last())?;
        preds.push(pred);
    }
    Ok(preds)
}

#[derive(Clone, Debug)]
pub struct FrameOutcome {
    pub breakdown: LossBreakdown,
    pub prediction: ElevationMap,
    pub grads: ParamGrads,
}

/// Forward, loss, and backward for one frame. `prev` is the detached
/// previous prediction; it feeds the history input and the temporal term.
pub fn frame_loss(
    model: &ElevNet,
    frame: &PreparedFrame,
    prev: Option<&ElevationMap>,
    loss: &LossConfig,
) -> Result<FrameOutcome> {
    let grid = model.config.grid;
    let input = frame_input(model, frame, prev)?;
    let mut tape = Tape::new();
    let vars = model.forward(&mut tape, &input)?;
    let pred = model.prediction_values(&tape, &vars);
    let aligned = match prev {
        Some(p) if loss.tc_loss => Some(align_previous(p, &frame.pose, &grid)?),
        _ => None,
    };
    let temporal = aligned.as_ref().map(|(a, m)| TemporalTarget {
        values: &a.values,
        mask: &m.mask,
    });
    let (breakdown, g) = total_with_grad(
        &pred,
        &frame.gt.values,
        temporal,
        &loss.weights(),
        loss.beta,
    )?;
    let seed = g
        .into_shape_with_order((1, grid.len()))
        .expect("gradient shape");
    let grads = tape.backward(vars.prediction, seed, model.params.len());
    Ok(FrameOutcome {
        breakdown,
        prediction: ElevationMap::new(grid, pred, frame.pose, frame.timestamp)?,
        grads,
    })
}

fn add_grads(acc: &mut ParamGrads, g: ParamGrads, scale: f64) {
    for (a, g) in acc.0.iter_mut().zip(g.0) {
        if let Some(g) = g {
            match a {
                Some(a) => a.scaled_add(scale, &g),
                None => *a = Some(g * scale),
            }
        }
    }
}

fn mean_breakdown(items: &[LossBreakdown]) -> LossBreakdown {
    let n = items.len() as f64;
    let mut m = LossBreakdown::default();
    for b in items {
        m.recons += b.recons / n;
        m.grad += b.grad / n;
        m.tc += b.tc / n;
        m.tv += b.tv / n;
        m.total += b.total / n;
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub sequence: usize,
    pub start_frame: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
}

#[derive(Serialize)]
struct NanDump<'a> {
    step: usize,
    sequence: usize,
    frames: Vec<usize>,
    poses: Vec<VehiclePose>,
    losses: &'a [LossBreakdown],
}

/// Gradients of one training window, before clipping and the update.
#[derive(Clone, Debug)]
pub struct WindowGradients {
    pub sequence: usize,
    pub start_frame: usize,
    pub losses: Vec<LossBreakdown>,
    pub grads: ParamGrads,
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: ElevNet,
    pub adam: Adam,
    /// Number of completed updates.
    pub step: usize,
    data: Vec<PreparedSequence>,
    /// Where non-finite-loss diagnostics go.
    pub dump_dir: PathBuf,
}

const PARAM_PREFIX: &str = "param.";
const ADAM_M_PREFIX: &str = "adam_m.";
const ADAM_V_PREFIX: &str = "adam_v.";

/// Rebuilds config and model from a checkpoint, checking that the stored
/// fingerprint matches the stored config.
pub fn load_model(ckpt: &Checkpoint) -> Result<(RunConfig, ElevNet)> {
    let cfg: RunConfig = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| Error::Checkpoint(format!("bad embedded config: {e}")))?;
    let fp = cfg.fingerprint();
    if fp != ckpt.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: fp,
            found: ckpt.fingerprint.clone(),
        });
    }
    let mut model = ElevNet::new(cfg.model.clone(), cfg.seeds.init)?;
    model.params.load_from(&ckpt.with_prefix(PARAM_PREFIX))?;
    Ok((cfg, model))
}

impl Trainer {
    pub fn new(config: RunConfig, sequences: &[Sequence]) -> Result<Self> {
        config.validate()?;
        let model = ElevNet::new(config.model.clone(), config.seeds.init)?;
        Self::with_model(config, model, sequences)
    }

    fn with_model(config: RunConfig, model: ElevNet, sequences: &[Sequence]) -> Result<Self> {
        if sequences.iter().all(|s| s.is_empty()) {
            return Err(Error::Dataset("no training frames".into()));
        }
        let data = sequences
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| prepare_sequence(&model, s))
            .collect::<Result<Vec<_>>>()?;
        let adam = Adam::new(&model.params);
        Ok(Self {
            config,
            model,
            adam,
            step: 0,
            data,
            dump_dir: std::env::temp_dir(),
        })
    }

    /// Continues from a checkpoint written with the same config.
    pub fn resume(config: RunConfig, ckpt: &Checkpoint, sequences: &[Sequence]) -> Result<Self> {
        config.validate()?;
        let fp = config.fingerprint();
        if fp != ckpt.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: fp,
                found: ckpt.fingerprint.clone(),
            });
        }
        let (_, model) = load_model(ckpt)?;
        let mut t = Self::with_model(config, model, sequences)?;
        let names = t.model.params.names().to_vec();
        let mut moments = ParamStore::new();
        for n in &names {
            moments.insert(
                n.clone(),
                Array2::zeros(t.model.params.get(n).unwrap().dim()),
            );
        }
        let mut m = moments.clone();
        m.load_from(&ckpt.with_prefix(ADAM_M_PREFIX))?;
        let mut v = moments;
        v.load_from(&ckpt.with_prefix(ADAM_V_PREFIX))?;
        t.adam.m = m.values().to_vec();
        t.adam.v = v.values().to_vec();
        t.adam.t = ckpt.step;
        t.step = ckpt.step as usize;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (n, v) in self.model.params.iter() {
            tensors.push((format!("{PARAM_PREFIX}{n}"), v.clone()));
        }
        for (prefix, moments) in [(ADAM_M_PREFIX, &self.adam.m), (ADAM_V_PREFIX, &self.adam.v)] {
            for (n, v) in self.model.params.names().iter().zip(moments) {
                tensors.push((format!("{prefix}{n}"), v.clone()));
            }
        }
        Checkpoint {
            fingerprint: self.config.fingerprint(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            step: self.step as u64,
            tensors,
        }
    }

    pub fn sequences(&self) -> &[PreparedSequence] {
        &self.data
    }

    /// Training window for `step`, a pure function of the data seed and the
    /// step number.
    pub fn window(&self, step: usize) -> (usize, usize, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seeds.data);
        rng.set_stream(step as u64);
        let seq = rng.random_range(0..self.data.len());
        let len = self.data[seq].frames.len();
        let b = self.config.optim.batch_frames.min(len);
        let start = rng.random_range(0..=len - b);
        (seq, start, b)
    }

    fn needs_previous(&self) -> bool {
        self.config.model.history || self.config.loss.tc_loss
    }

    /// Averaged gradients of the window for `step`. History comes from a
    /// gradient-free warm-up over the preceding frames, starting from zero
    /// history.
    pub fn window_gradients(&self, step: usize) -> Result<WindowGradients> {
        let (seq, start, b) = self.window(step);
        let frames = &self.data[seq].frames;
        let mut prev: Option<ElevationMap> = None;
        if self.needs_previous() {
            let warm = start.saturating_sub(self.config.optim.warmup_frames);
            for f in &frames[warm..start] {
                // non-finite warm-up output surfaces as a non-finite loss below
                let input = frame_input(&self.model, f, prev.as_ref())?;
                let mut tape = Tape::new();
                let vars = self.model.forward(&mut tape, &input)?;
                let values = self.model.prediction_values(&tape, &vars);
                prev = Some(ElevationMap::new(
                    self.model.config.grid,
                    values,
                    f.pose,
                    f.timestamp,
                )?);
            }
        }
        let mut grads = ParamGrads(vec![None; self.model.params.len()]);
        let mut losses = Vec::with_capacity(b);
        for f in &frames[start..start + b] {
            let p = if self.needs_previous() {
                prev.as_ref()
            } else {
                None
            };
            let out = frame_loss(&self.model, f, p, &self.config.loss)?;
            add_grads(&mut grads, out.grads, 1.0 / b as f64);
            losses.push(out.breakdown);
            prev = Some(out.prediction);
        }
        Ok(WindowGradients {
            sequence: seq,
            start_frame: start,
            losses,
            grads,
        })
    }

    fn dump_non_finite(&self, step: usize, w: &WindowGradients) -> Result<PathBuf> {
        let frames = &self.data[w.sequence].frames[w.start_frame..w.start_frame + w.losses.len()];
        let dump = NanDump {
            step,
            sequence: w.sequence,
            frames: frames.iter().map(|f| f.index).collect(),
            poses: frames.iter().map(|f| f.pose).collect(),
            losses: &w.losses,
        };
        let path = self.dump_dir.join(format!("nonfinite_step{step:06}.json"));
        atomic_write(&path, &serde_json::to_vec_pretty(&dump)?)?;
        Ok(path)
    }

    pub fn train_step(&mut self) -> Result<StepRecord> {
        let step = self.step;
        let mut w = self.window_gradients(step)?;
        let loss = mean_breakdown(&w.losses);
        let norm = match self.config.optim.clip_norm {
            Some(c) => clip_grad_norm(&mut w.grads, c),
            None => grad_norm(&w.grads),
        };
        if !loss.total.is_finite() || !norm.is_finite() {
            let dump = self.dump_non_finite(step, &w)?;
            return Err(Error::NonFiniteLoss { step, dump });
        }
        let lr = learning_rate(&self.config.optim, step);
        self.adam
            .update(&mut self.model.params, &w.grads, &self.config.optim, lr);
        self.step += 1;
        Ok(StepRecord {
            step,
            lr,
            sequence: w.sequence,
            start_frame: w.start_frame,
            loss,
            grad_norm: norm,
        })
    }
}

pub fn load_sequences(paths: &[PathBuf]) -> Result<Vec<Sequence>> {
    paths.iter().map(|p| read_dataset(p)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
    pub fingerprint: String,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.jsonl";

fn write_log(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

fn read_log(path: &Path, before: usize) -> Result<Vec<StepRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let r: StepRecord = serde_json::from_str(line)?;
        if r.step < before {
            out.push(r);
        }
    }
    Ok(out)
}

/// Trains on the config's datasets, writing `checkpoint.ckpt`,
/// `metrics.jsonl`, and `config.json` into `out_dir`. With `resume`, an
/// existing checkpoint there is continued.
pub fn train_run(
    config: &RunConfig,
    out_dir: &Path,
    resume: bool,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainSummary> {
    config.validate()?;
    let sequences = load_sequences(&config.data.train)?;
    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(METRICS_FILE);
    let mut trainer = if resume && ckpt_path.exists() {
        let ckpt = crate::net::read_checkpoint(&ckpt_path)?;
        Trainer::resume(config.clone(), &ckpt, &sequences)?
    } else {
        Trainer::new(config.clone(), &sequences)?
    };
    trainer.dump_dir = out_dir.to_path_buf();
    config.save(&out_dir.join("config.json"))?;
    let mut records = read_log(&log_path, trainer.step)?;
    let every = config.logging.checkpoint_every;
    while trainer.step < config.optim.steps {
        let rec = trainer.train_step()?;
        on_step(&rec);
        if rec.step % config.logging.log_every == 0 {
            records.push(rec);
        }
        if trainer.step % every == 0 || trainer.step == config.optim.steps {
            crate::net::write_checkpoint(&ckpt_path, &trainer.checkpoint())?;
            write_log(&log_path, &records)?;
        }
    }
    if !ckpt_path.exists() {
        crate::net::write_checkpoint(&ckpt_path, &trainer.checkpoint())?;
        write_log(&log_path, &records)?;
    }
    Ok(TrainSummary {
        steps: trainer.step,
        final_loss: records.last().map(|r| r.loss.total),
        checkpoint: ckpt_path,
        fingerprint: config.fingerprint(),
    })
}
