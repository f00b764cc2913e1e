//! `elevnet` command line. Exit codes: 0 success, 1 usage error, 2 runtime
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use image::{Rgb, RgbImage};

use super::ablate::ablate_run;
use super::config::RunConfig;
use super::evaluate::{evaluate_checkpoint, EvalOptions};
use super::train::{load_model, train_run};
use crate::camera::{CameraRig, View};
use crate::error::{Error, Result};
use crate::evalkit::MetricOptions;
use crate::mapspace::io::{read_map, write_map};
use crate::mapspace::{ElevationMap, GridSpec};
use crate::net::read_checkpoint;
use crate::synthworld::dataset::{load_frame_dir, RIG_FILE};
use crate::synthworld::{generate_sequence, write_dataset, SequenceSpec, TerrainStyle};
use crate::util::atomic_write;

#[derive(Parser, Debug)]
#[command(
    name = "elevnet",
    version,
    about = "Long-range elevation maps from three camera views"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Style {
    DesertFlat,
    Hilly,
}

impl From<Style> for TerrainStyle {
    fn from(s: Style) -> Self {
        match s {
            Style::DesertFlat => TerrainStyle::DesertFlat,
            Style::Hilly => TerrainStyle::Hilly,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ViewArg {
    Front,
    Left,
    Right,
}

impl From<ViewArg> for View {
    fn from(v: ViewArg) -> Self {
        match v {
            ViewArg::Front => View::Front,
            ViewArg::Left => View::Left,
            ViewArg::Right => View::Right,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Desk,
    Tiny,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic sequence into a dataset directory.
    Synthgen {
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        style: Style,
        #[arg(long)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        #[arg(long, default_value_t = 32)]
        rows: usize,
        #[arg(long, default_value_t = 32)]
        cols: usize,
        /// Cell size in meters.
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        #[arg(long)]
        amplitude_scale: Option<f64>,
    },
    /// Write a starting run config.
    InitConfig {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "train", required = true)]
        train: Vec<PathBuf>,
        #[arg(long = "test")]
        test: Vec<PathBuf>,
    },
    /// Train a model from a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>/checkpoint.ckpt` if present.
        #[arg(long)]
        resume: bool,
        /// Override the step budget. This changes the run fingerprint.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint on datasets.
    Eval {
        #[arg(long, required_unless_present = "gt_as_prediction")]
        checkpoint: Option<PathBuf>,
        #[arg(long = "dataset", required = true)]
        dataset: Vec<PathBuf>,
        /// Score only cells seen by these cameras.
        #[arg(long, value_enum, value_delimiter = ',')]
        views: Option<Vec<ViewArg>>,
        #[arg(long)]
        gt_as_prediction: bool,
        /// Require the checkpoint to come from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Score only frames with |roll| above this (radians).
        #[arg(long)]
        min_abs_roll: Option<f64>,
        #[arg(long, default_value_t = 0)]
        sdr_seed: u64,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict one frame directory.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        /// Defaults to the rig file of the dataset holding the frame.
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Previous prediction (map header) used as history.
        #[arg(long)]
        prev: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the positional-encoding x history sweep.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        min_abs_roll: Option<f64>,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Error::InvalidArgument(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synthgen {
            seed,
            style,
            frames,
            out,
            image_size,
            rows,
            cols,
            resolution,
            amplitude_scale,
        } => {
            let grid = GridSpec {
                rows,
                cols,
                resolution_m: resolution,
            };
            let mut spec = SequenceSpec::sized(seed, style.into(), frames, image_size, grid);
            if let Some(a) = amplitude_scale {
                spec.terrain.amplitude_scale = a;
            }
            let rig = CameraRig::desk(image_size)?;
            let seq = generate_sequence(&spec, &rig)?;
            write_dataset(&seq, &out)?;
            println!("wrote {} frames to {}", seq.len(), out.display());
            Ok(())
        }
        Command::InitConfig {
            preset,
            out,
            train,
            test,
        } => {
            let mut cfg = match preset {
                Preset::Desk => RunConfig::desk(),
                Preset::Tiny => RunConfig::tiny(),
            };
            cfg.data.train = train;
            cfg.data.test = test;
            cfg.save(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Train {
            config,
            out,
            resume,
            steps,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = steps {
                cfg.optim.steps = s;
            }
            let total = cfg.optim.steps;
            let mut report = |r: &super::train::StepRecord| {
                if (r.step + 1).is_multiple_of(100) || r.step + 1 == total {
                    eprintln!(
                        "step {:>6}/{total}  loss {:.4}  lr {:.2e}  |g| {:.3}",
                        r.step + 1,
                        r.loss.total,
                        r.lr,
                        r.grad_norm
                    );
                }
            };
            let summary = train_run(&cfg, &out, resume, &mut report)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            views,
            gt_as_prediction,
            config,
            min_abs_roll,
            sdr_seed,
            out,
        } => {
            let opts = EvalOptions {
                metrics: MetricOptions {
                    sdr_seed,
                    ..MetricOptions::default()
                },
                views: views.map(|v| v.into_iter().map(View::from).collect()),
                gt_as_prediction,
                min_abs_roll,
            };
            let expected = match &config {
                Some(p) => Some(RunConfig::load(p)?.fingerprint()),
                None => None,
            };
            let ckpt = checkpoint.unwrap_or_default();
            let report = evaluate_checkpoint(&ckpt, &dataset, &opts, expected.as_deref())?;
            let label = if gt_as_prediction {
                "ground truth".to_string()
            } else {
                short(&report.fingerprint)
            };
            print!("{}", report.table(&label));
            if let Some(o) = out {
                atomic_write(&o, &serde_json::to_vec_pretty(&report)?)?;
            }
            Ok(())
        }
        Command::Predict {
            checkpoint,
            frame,
            rig,
            prev,
            out,
        } => predict(&checkpoint, &frame, rig.as_deref(), prev.as_deref(), &out),
        Command::Ablate {
            config,
            out,
            steps,
            min_abs_roll,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = steps {
                cfg.optim.steps = s;
            }
            let opts = EvalOptions {
                min_abs_roll,
                ..EvalOptions::default()
            };
            std::fs::create_dir_all(&out)?;
            let (_, table) = ablate_run(&cfg, &out, &opts)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn short(fingerprint: &str) -> String {
    fingerprint.chars().take(12).collect()
}

fn predict(
    checkpoint: &Path,
    frame: &Path,
    rig: Option<&Path>,
    prev: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let (_, model) = load_model(&ckpt)?;
    let rig_path = match rig {
        Some(p) => p.to_path_buf(),
        None => frame
            .parent()
            .and_then(Path::parent)
            .map(|d| d.join(RIG_FILE))
            .filter(|p| p.exists())
            .ok_or_else(|| {
                Error::InvalidArgument("no rig file next to the frame; pass --rig".into())
            })?,
    };
    let rig = CameraRig::load(&rig_path)?;
    let (images, record, gt) = load_frame_dir(frame)?;
    let prev = prev.map(read_map).transpose()?;
    let pred = model.predict(&rig, &images, &record.pose, prev.as_ref(), record.timestamp)?;
    std::fs::create_dir_all(out)?;
    write_map(&pred, &out.join("prediction.json"))?;
    let png = render_panel(&images, &pred, gt.as_ref());
    let mut bytes = Vec::new();
    png.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )?;
    atomic_write(&out.join("prediction.png"), &bytes)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Blue to green to yellow ramp.
fn colormap(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    let stops = [
        (0.0, [40.0, 60.0, 160.0]),
        (0.5, [60.0, 170.0, 90.0]),
        (1.0, [250.0, 230.0, 80.0]),
    ];
    let (a, b) = if t < 0.5 {
        (stops[0], stops[1])
    } else {
        (stops[1], stops[2])
    };
    let u = (t - a.0) / (b.0 - a.0);
    Rgb(std::array::from_fn(|k| {
        (a.1[k] + u * (b.1[k] - a.1[k])).round() as u8
    }))
}

/// Views left to right as [left, front, right], then the prediction and the
/// ground truth when given. Maps are drawn forward-up with the vehicle's
/// left on the left, on a shared color scale.
fn render_panel(
    images: &[RgbImage; 3],
    pred: &ElevationMap,
    gt: Option<&ElevationMap>,
) -> RgbImage {
    let h = images[0].height();
    let maps: Vec<&ElevationMap> = std::iter::once(pred).chain(gt).collect();
    let lo = maps
        .iter()
        .flat_map(|m| m.values.iter())
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = maps
        .iter()
        .flat_map(|m| m.values.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let widths: Vec<u32> = [1usize, 0, 2]
        .iter()
        .map(|&i| images[i].width())
        .chain(maps.iter().map(|_| h))
        .collect();
    let mut panel = RgbImage::new(widths.iter().sum(), h);
    let mut x0 = 0;
    for &i in &[1usize, 0, 2] {
        image::imageops::replace(&mut panel, &images[i], x0 as i64, 0);
        x0 += images[i].width();
    }
    for m in maps {
        let (rows, cols) = m.values.dim();
        for y in 0..h {
            for x in 0..h {
                let r = rows - 1 - (y as usize * rows / h as usize);
                let c = cols - 1 - (x as usize * cols / h as usize);
                panel.put_pixel(x0 + x, y, colormap((m.values[(r, c)] - lo) / span));
            }
        }
        x0 += h;
    }
    panel
}
