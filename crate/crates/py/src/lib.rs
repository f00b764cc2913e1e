//! Python bindings. Maps cross the boundary as nested lists of floats.

use std::path::PathBuf;

use elevnet::camera::{project_to_image, unproject_direction, CameraRig, View};
use elevnet::error::Error;
use elevnet::evalkit::{self, BandMae, EvalReport};
use elevnet::harness::{self, EvalOptions, RunConfig};
use elevnet::mapspace::{self, ElevationMap, GridSpec, VehiclePose};
use elevnet::net::{read_checkpoint, ElevNet, ModelConfig, PosEncoding};
use elevnet::objective::{self, LossWeights};
use elevnet::synthworld::{self, Sequence, SequenceSpec, TerrainStyle};
use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn rows3(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (Error::Config(_) | Error::InvalidArgument(_)) => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

fn parse_view(s: &str) -> PyResult<View> {
    View::parse(s).map_err(py_err)
}

#[pyclass(name = "GridSpec", module = "pyelevnet", frozen, from_py_object)]
#[derive(Clone)]
struct PyGrid(GridSpec);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (rows, cols, resolution_m=1.0))]
    fn new(rows: usize, cols: usize, resolution_m: f64) -> PyResult<Self> {
        GridSpec::new(rows, cols, resolution_m)
            .map(Self)
            .map_err(py_err)
    }
    #[getter]
    fn rows(&self) -> usize {
        self.0.rows
    }
    #[getter]
    fn cols(&self) -> usize {
        self.0.cols
    }
    #[getter]
    fn resolution_m(&self) -> f64 {
        self.0.resolution_m
    }
    #[getter]
    fn anchor(&self) -> (usize, usize) {
        self.0.anchor()
    }
    /// `(forward, left)` of a cell center in meters.
    fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        self.0.cell_center(row, col)
    }
    fn __repr__(&self) -> String {
        format!(
            "GridSpec(rows={}, cols={}, resolution_m={})",
            self.0.rows, self.0.cols, self.0.resolution_m
        )
    }
}

#[pyclass(name = "VehiclePose", module = "pyelevnet", frozen, from_py_object)]
#[derive(Clone)]
struct PyPose(VehiclePose);

#[pymethods]
impl PyPose {
    #[new]
    #[pyo3(signature = (position, yaw=0.0, roll=0.0, pitch=0.0))]
    fn new(position: [f64; 3], yaw: f64, roll: f64, pitch: f64) -> PyResult<Self> {
        VehiclePose::new(position, yaw, roll, pitch)
            .map(Self)
            .map_err(py_err)
    }
    #[getter]
    fn position(&self) -> [f64; 3] {
        self.0.position
    }
    #[getter]
    fn yaw(&self) -> f64 {
        self.0.yaw
    }
    #[getter]
    fn roll(&self) -> f64 {
        self.0.roll
    }
    #[getter]
    fn pitch(&self) -> f64 {
        self.0.pitch
    }
    fn gravity_rotation(&self) -> [[f64; 3]; 3] {
        rows3(&self.0.gravity_rotation())
    }
    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "VehiclePose(position={:?}, yaw={}, roll={}, pitch={})",
            p.position, p.yaw, p.roll, p.pitch
        )
    }
}

#[pyclass(name = "ElevationMap", module = "pyelevnet", frozen, from_py_object)]
#[derive(Clone)]
struct PyMap(ElevationMap);

#[pymethods]
impl PyMap {
    #[new]
    #[pyo3(signature = (grid, values, pose, timestamp=0.0))]
    fn new(grid: PyGrid, values: Vec<Vec<f64>>, pose: PyPose, timestamp: f64) -> PyResult<Self> {
        ElevationMap::new(grid.0, to_array(values)?, pose.0, timestamp)
            .map(Self)
            .map_err(py_err)
    }
    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0.values)
    }
    #[getter]
    fn valid(&self) -> Vec<Vec<bool>> {
        to_rows(&self.0.valid)
    }
    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid)
    }
    #[getter]
    fn pose(&self) -> PyPose {
        PyPose(self.0.frame_pose)
    }
    #[getter]
    fn timestamp(&self) -> f64 {
        self.0.timestamp
    }
    fn anchor_value(&self) -> f64 {
        self.0.anchor_value()
    }
    /// Writes `path` (JSON header) and its float32 payload next to it.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        mapspace::io::write_map(&self.0, &path)
            .map(|_| ())
            .map_err(py_err)
    }
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        mapspace::io::read_map(&path).map(Self).map_err(py_err)
    }
}

/// Resamples `prev` into the frame of `pose`; returns the aligned map and the
/// overlap mask.
#[pyfunction]
fn align_previous(prev: &PyMap, pose: &PyPose) -> PyResult<(PyMap, Vec<Vec<bool>>)> {
    let (m, mask) = mapspace::align_previous(&prev.0, &pose.0, &prev.0.grid).map_err(py_err)?;
    Ok((PyMap(m), to_rows(&mask.mask)))
}

#[pyclass(name = "CameraRig", module = "pyelevnet", frozen, from_py_object)]
#[derive(Clone)]
struct PyRig(CameraRig);

#[pymethods]
impl PyRig {
    #[staticmethod]
    #[pyo3(signature = (image_size=64))]
    fn desk(image_size: usize) -> PyResult<Self> {
        CameraRig::desk(image_size).map(Self).map_err(py_err)
    }
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CameraRig::load(&path).map(Self).map_err(py_err)
    }
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(py_err)
    }
    #[getter]
    fn image_size(&self) -> (usize, usize) {
        self.0.image_size()
    }
    /// Unit ray of pixel `(u, v)` in the gravity-aligned vehicle frame.
    #[pyo3(signature = (view, u, v, roll=0.0, pitch=0.0))]
    fn unproject(&self, view: &str, u: f64, v: f64, roll: f64, pitch: f64) -> PyResult<[f64; 3]> {
        let cam = self.0.camera(parse_view(view)?);
        let d = unproject_direction(cam, &mapspace::gravity_rotation(roll, pitch), (u, v));
        Ok([d.x, d.y, d.z])
    }
    /// Pixel of a gravity-aligned direction, and whether it is in front.
    #[pyo3(signature = (view, direction, roll=0.0, pitch=0.0))]
    fn project(
        &self,
        view: &str,
        direction: [f64; 3],
        roll: f64,
        pitch: f64,
    ) -> PyResult<(f64, f64, bool)> {
        let cam = self.0.camera(parse_view(view)?);
        let p = project_to_image(
            cam,
            &mapspace::gravity_rotation(roll, pitch),
            &Vector3::from(direction),
        );
        Ok((p.u, p.v, p.in_front))
    }
}

fn parse_style(s: &str) -> PyResult<TerrainStyle> {
    match s {
        "hilly" => Ok(TerrainStyle::Hilly),
        "desert_flat" => Ok(TerrainStyle::DesertFlat),
        _ => Err(PyValueError::new_err(format!(
            "unknown terrain style {s:?}"
        ))),
    }
}

#[pyclass(name = "Sequence", module = "pyelevnet", frozen, from_py_object)]
#[derive(Clone)]
struct PySequence(Sequence);

#[pymethods]
impl PySequence {
    #[staticmethod]
    #[pyo3(signature = (seed, style="hilly", frames=50, image_size=64, rows=32, cols=32, resolution_m=1.0, amplitude_scale=None))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        seed: u64,
        style: &str,
        frames: usize,
        image_size: usize,
        rows: usize,
        cols: usize,
        resolution_m: f64,
        amplitude_scale: Option<f64>,
    ) -> PyResult<Self> {
        let grid = GridSpec::new(rows, cols, resolution_m).map_err(py_err)?;
        let mut spec = SequenceSpec::sized(seed, parse_style(style)?, frames, image_size, grid);
        if let Some(a) = amplitude_scale {
            spec.terrain.amplitude_scale = a;
        }
        let rig = CameraRig::desk(image_size).map_err(py_err)?;
        synthworld::generate_sequence(&spec, &rig)
            .map(Self)
            .map_err(py_err)
    }
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        synthworld::read_dataset(&path).map(Self).map_err(py_err)
    }
    fn write(&self, path: PathBuf) -> PyResult<()> {
        synthworld::write_dataset(&self.0, &path).map_err(py_err)
    }
    fn __len__(&self) -> usize {
        self.0.len()
    }
    #[getter]
    fn rig(&self) -> PyRig {
        PyRig(self.0.rig.clone())
    }
    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid())
    }
    fn poses(&self) -> Vec<PyPose> {
        self.0.samples.iter().map(|s| PyPose(s.pose)).collect()
    }
    fn ground_truth(&self) -> Vec<PyMap> {
        self.0
            .samples
            .iter()
            .map(|s| PyMap(s.gt_map.clone()))
            .collect()
    }
    /// The three views of a frame as nested `[row][col][rgb]` lists, in
    /// front, left, right order.
    fn images(&self, index: usize) -> PyResult<Vec<Vec<Vec<[u8; 3]>>>> {
        let s = self
            .0
            .samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("frame {index} out of range")))?;
        Ok(s.images
            .iter()
            .map(|img| {
                (0..img.height())
                    .map(|y| (0..img.width()).map(|x| img.get_pixel(x, y).0).collect())
                    .collect()
            })
            .collect())
    }
}

fn band_list(bands: &[BandMae]) -> Vec<(f64, Option<f64>, usize)> {
    bands
        .iter()
        .map(|b| (b.max_range_m, b.mae, b.cells))
        .collect()
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mae_bands", band_list(&r.mae_bands))?;
    d.set_item("mae_all", r.mae_all)?;
    d.set_item("sdr", r.sdr)?;
    d.set_item("mtc", r.mtc)?;
    d.set_item("frames", r.frames)?;
    d.set_item("fingerprint", &r.fingerprint)?;
    Ok(d)
}

#[pyclass(name = "Model", module = "pyelevnet", frozen)]
struct PyModel {
    model: ElevNet,
    fingerprint: Option<String>,
}

#[pymethods]
impl PyModel {
    /// Freshly initialized model from a preset (`"desk"` or `"tiny"`).
    #[new]
    #[pyo3(signature = (preset="desk", seed=0, pos_encoding="ope", history=true))]
    fn new(preset: &str, seed: u64, pos_encoding: &str, history: bool) -> PyResult<Self> {
        let mut cfg = match preset {
            "desk" => ModelConfig::desk(),
            "tiny" => ModelConfig::tiny(),
            _ => return Err(PyValueError::new_err(format!("unknown preset {preset:?}"))),
        };
        cfg.pos_encoding = match pos_encoding {
            "ope" => PosEncoding::Ope,
            "cpe" => PosEncoding::Cpe,
            _ => {
                return Err(PyValueError::new_err(format!(
                    "unknown positional encoding {pos_encoding:?}"
                )))
            }
        };
        cfg.history = history;
        let model = ElevNet::new(cfg, seed).map_err(py_err)?;
        Ok(Self {
            model,
            fingerprint: None,
        })
    }
    #[staticmethod]
    fn load(checkpoint: PathBuf) -> PyResult<Self> {
        let ckpt = read_checkpoint(&checkpoint).map_err(py_err)?;
        let (_, model) = harness::load_model(&ckpt).map_err(py_err)?;
        Ok(Self {
            model,
            fingerprint: Some(ckpt.fingerprint),
        })
    }
    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }
    #[getter]
    fn fingerprint(&self) -> Option<String> {
        self.fingerprint.clone()
    }
    /// One frame of `sequence`, optionally with a previous prediction.
    #[pyo3(signature = (sequence, index, prev=None))]
    fn predict(
        &self,
        sequence: &PySequence,
        index: usize,
        prev: Option<&PyMap>,
    ) -> PyResult<PyMap> {
        let s = sequence
            .0
            .samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("frame {index} out of range")))?;
        self.model
            .predict(
                &sequence.0.rig,
                &s.images,
                &s.pose,
                prev.map(|p| &p.0),
                s.timestamp,
            )
            .map(PyMap)
            .map_err(py_err)
    }
    /// Every frame in order, feeding each prediction to the next frame.
    fn predict_sequence(&self, sequence: &PySequence) -> PyResult<Vec<PyMap>> {
        let prep = harness::prepare_sequence(&self.model, &sequence.0).map_err(py_err)?;
        let preds = harness::run_sequence(&self.model, &prep).map_err(py_err)?;
        Ok(preds.into_iter().map(PyMap).collect())
    }
    #[pyo3(signature = (sequences, views=None, min_abs_roll=None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        sequences: Vec<PySequence>,
        views: Option<Vec<String>>,
        min_abs_roll: Option<f64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let views = views
            .map(|v| {
                v.iter()
                    .map(|s| parse_view(s))
                    .collect::<PyResult<Vec<_>>>()
            })
            .transpose()?;
        let opts = EvalOptions {
            views,
            min_abs_roll,
            ..EvalOptions::default()
        };
        let seqs: Vec<Sequence> = sequences.into_iter().map(|s| s.0).collect();
        let fp = self.fingerprint.clone().unwrap_or_default();
        let (report, _) =
            harness::evaluate_model(&self.model, &fp, &seqs, &opts).map_err(py_err)?;
        report_dict(py, &report)
    }
}

#[pyfunction]
#[pyo3(signature = (pred, gt, bands=vec![25.0, 50.0, 100.0]))]
fn mae_banded(
    pred: &PyMap,
    gt: &PyMap,
    bands: Vec<f64>,
) -> PyResult<Vec<(f64, Option<f64>, usize)>> {
    evalkit::mae_banded(&pred.0, &gt.0, &bands, None)
        .map(|b| band_list(&b))
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, pairs=100, tau=0.1, seed=0))]
fn sdr(pred: &PyMap, gt: &PyMap, pairs: usize, tau: f64, seed: u64) -> PyResult<f64> {
    evalkit::sdr(&pred.0, &gt.0, pairs, tau, seed).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, tau=0.1))]
fn sdr_exhaustive(pred: &PyMap, gt: &PyMap, tau: f64) -> PyResult<f64> {
    evalkit::sdr_exhaustive(&pred.0, &gt.0, None, tau).map_err(py_err)
}

#[pyfunction]
fn mtc(maps: Vec<PyMap>) -> PyResult<f64> {
    let maps: Vec<ElevationMap> = maps.into_iter().map(|m| m.0).collect();
    evalkit::mtc(&maps).map_err(py_err)
}

/// All loss terms. With `prev`, the previous prediction is aligned into the
/// frame of `pred` for the temporal term.
#[pyfunction]
#[pyo3(signature = (pred, gt, prev=None, mu=1.0, lam=0.05, gamma=0.01, beta=1.0))]
fn losses<'py>(
    py: Python<'py>,
    pred: &PyMap,
    gt: &PyMap,
    prev: Option<&PyMap>,
    mu: f64,
    lam: f64,
    gamma: f64,
    beta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let w = LossWeights {
        mu,
        lambda: lam,
        gamma,
    };
    w.validate().map_err(py_err)?;
    let aligned = prev
        .map(|p| mapspace::align_previous(&p.0, &pred.0.frame_pose, &pred.0.grid))
        .transpose()
        .map_err(py_err)?;
    let target = aligned.as_ref().map(|(m, mask)| objective::TemporalTarget {
        values: &m.values,
        mask: &mask.mask,
    });
    let (b, _) = objective::total_with_grad(&pred.0.values, &gt.0.values, target, &w, beta)
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("recons", b.recons)?;
    d.set_item("grad", b.grad)?;
    d.set_item("tc", b.tc)?;
    d.set_item("tv", b.tv)?;
    d.set_item("total", b.total)?;
    Ok(d)
}

/// Trains from a run-config file into `out_dir`; returns the summary.
#[pyfunction]
#[pyo3(signature = (config, out_dir, resume=false, steps=None))]
fn train<'py>(
    py: Python<'py>,
    config: PathBuf,
    out_dir: PathBuf,
    resume: bool,
    steps: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig::load(&config).map_err(py_err)?;
    if let Some(s) = steps {
        cfg.optim.steps = s;
    }
    let summary = harness::train_run(&cfg, &out_dir, resume, &mut |_| {}).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("steps", summary.steps)?;
    d.set_item("final_loss", summary.final_loss)?;
    d.set_item("checkpoint", summary.checkpoint)?;
    d.set_item("fingerprint", summary.fingerprint)?;
    Ok(d)
}

/// Writes a preset run config pointing at the given datasets.
#[pyfunction]
#[pyo3(signature = (path, train, test=vec![], preset="desk", steps=None))]
fn write_config(
    path: PathBuf,
    train: Vec<PathBuf>,
    test: Vec<PathBuf>,
    preset: &str,
    steps: Option<usize>,
) -> PyResult<()> {
    let mut cfg = match preset {
        "desk" => RunConfig::desk(),
        "tiny" => RunConfig::tiny(),
        _ => return Err(PyValueError::new_err(format!("unknown preset {preset:?}"))),
    };
    cfg.data.train = train;
    cfg.data.test = test;
    if let Some(s) = steps {
        cfg.optim.steps = s;
    }
    cfg.save(&path).map_err(py_err)
}

/// Runs the command line with `args` (without the program name); returns
/// the exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    harness::cli::run(std::iter::once("elevnet".to_string()).chain(args))
}

#[pymodule]
pub fn pyelevnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyRig>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(align_previous, m)?)?;
    m.add_function(wrap_pyfunction!(mae_banded, m)?)?;
    m.add_function(wrap_pyfunction!(sdr, m)?)?;
    m.add_function(wrap_pyfunction!(sdr_exhaustive, m)?)?;
    m.add_function(wrap_pyfunction!(mtc, m)?)?;
    m.add_function(wrap_pyfunction!(losses, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(write_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
