use std::sync::Arc;

use image::RgbImage;
use nalgebra::Matrix3;
use ndarray::Array2;

use super::config::{ModelConfig, PosEncoding};
use super::params::{Init, ParamStore};
use super::plan::{pool_history, row_slice, Plan};
use crate::camera::{feature_grid_pixels, unproject_direction, CameraRig};
use crate::error::{config_err, Result};
use crate::mapspace::{align_previous, masked_history, ElevationMap, VehiclePose};
use crate::tape::{Tape, Var};

/// Per-frame constant inputs to the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameInput {
    /// `(3 channels, 3 cameras * h * w)`, cameras front, left, right.
    pub images: Array2<f64>,
    /// Unit ray direction per feature token, `(3, 3 * h_s * w_s)` per scale.
    pub directions: [Array2<f64>; 3],
    /// Masked previous prediction pooled to the finest query grid,
    /// `(1, qr * qc)`; `None` means zero history.
    pub history: Option<Array2<f64>>,
}

/// Parameters bound into a tape.
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn get(&self, name: &str) -> Var {
        let i = self
            .store
            .index_of(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.vars[i]
    }
}

/// Tape variables of interest from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub features: [Var; 3],
    pub embeddings: [Var; 3],
    pub query_inputs: [Var; 3],
    pub attended: [Var; 3],
    /// `(1, rows * cols)`, anchor cell exactly zero.
    pub prediction: Var,
}

#[derive(Clone, Debug)]
pub struct ElevNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    plan: Arc<Plan>,
}

fn linear(store: &mut ParamStore, init: &mut Init, name: &str, out: usize, fan_in: usize) {
    store.insert(format!("{name}.weight"), init.lecun(out, fan_in));
    store.insert(format!("{name}.bias"), Array2::zeros((out, 1)));
}

fn conv(store: &mut ParamStore, init: &mut Init, name: &str, out: usize, fan_in: usize) {
    store.insert(format!("{name}.weight"), init.he(out, fan_in));
    store.insert(format!("{name}.bias"), Array2::zeros((out, 1)));
}

/// Converts 8-bit RGB to `[-1, 1]`, laid out as described on
/// [`FrameInput::images`].
pub fn image_tensor(images: &[RgbImage; 3], size: usize) -> Result<Array2<f64>> {
    let hw = size * size;
    let mut out = Array2::zeros((3, 3 * hw));
    for (cam, img) in images.iter().enumerate() {
        if img.dimensions() != (size as u32, size as u32) {
            return Err(config_err(format!(
                "image is {:?}, model expects {size}x{size}",
                img.dimensions()
            )));
        }
        for (x, y, px) in img.enumerate_pixels() {
            let col = cam * hw + y as usize * size + x as usize;
            for c in 0..3 {
                out[(c, col)] = px.0[c] as f64 / 127.5 - 1.0;
            }
        }
    }
    Ok(out)
}

fn init_params(config: &ModelConfig, seed: u64) -> ParamStore {
    let mut p = ParamStore::new();
    let mut init = Init::new(seed);
    let mut c_in = 3;
    for (k, &w) in config.backbone_widths.iter().enumerate() {
        conv(
            &mut p,
            &mut init,
            &format!("backbone.stage{k}"),
            w,
            c_in * 9,
        );
        c_in = w;
    }
    let chans = config.feature_channels();
    let qin = config.query_input_channels();
    for (s, &d) in config.embed_dims.iter().enumerate() {
        conv(&mut p, &mut init, &format!("ope.scale{s}.fc1"), d, 3);
        linear(&mut p, &mut init, &format!("ope.scale{s}.fc2"), d, d);
        linear(
            &mut p,
            &mut init,
            &format!("attn.scale{s}.feat"),
            d,
            chans[s],
        );
        linear(&mut p, &mut init, &format!("attn.scale{s}.key"), d, 2 * d);
        linear(&mut p, &mut init, &format!("attn.scale{s}.value"), d, d);
        linear(&mut p, &mut init, &format!("attn.scale{s}.query"), d, qin);
    }
    let (qr, qc) = config.query_grids()[0];
    p.insert(
        "queries.embedding",
        init.uniform((config.query_channels, qr * qc), 1.0),
    );
    if config.history {
        let [h0, h1] = config.history_channels;
        conv(&mut p, &mut init, "history.conv1", h0, 1);
        linear(&mut p, &mut init, "history.conv2", h1, h0);
    }
    let cd = config.decoder_channels;
    for (s, &d) in config.embed_dims.iter().enumerate() {
        p.insert(
            format!("decoder.scale{s}.proj.weight"),
            init.lecun(cd, d + qin),
        );
    }
    p.insert("decoder.bias", Array2::zeros((cd, 1)));
    conv(&mut p, &mut init, "decoder.conv", cd, cd * 9);
    p.insert("decoder.head.weight", init.lecun(1, cd));
    p
}

impl ElevNet {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        let plan = Arc::new(Plan::new(&config));
        Ok(Self {
            config,
            params,
            plan,
        })
    }

    /// Wraps existing parameters; names and shapes must match `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let reference = init_params(&config, 0);
        let same = reference.len() == params.len()
            && reference
                .iter()
                .zip(params.iter())
                .all(|((n1, v1), (n2, v2))| n1 == n2 && v1.dim() == v2.dim());
        if !same {
            return Err(config_err(
                "parameter names or shapes do not match the model config",
            ));
        }
        let plan = Arc::new(Plan::new(&config));
        Ok(Self {
            config,
            params,
            plan,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Ray directions of every feature token at every scale.
    pub fn directions(&self, rig: &CameraRig, pose: &VehiclePose) -> Result<[Array2<f64>; 3]> {
        let size = self.config.image_size;
        if rig.image_size() != (size, size) {
            return Err(config_err(format!(
                "rig image size {:?} does not match model image size {size}",
                rig.image_size()
            )));
        }
        let g = match self.config.pos_encoding {
            PosEncoding::Ope => pose.gravity_rotation(),
            PosEncoding::Cpe => Matrix3::identity(),
        };
        let sizes = self.config.feature_sizes();
        let mut out = Vec::with_capacity(3);
        for &n in &sizes {
            let mut d = Array2::zeros((3, 3 * n * n));
            let mut col = 0;
            for cam in rig.cameras() {
                for px in feature_grid_pixels(&cam.intrinsics, n, n)? {
                    let v = unproject_direction(cam, &g, px);
                    for k in 0..3 {
                        d[(k, col)] = v[k];
                    }
                    col += 1;
                }
            }
            out.push(d);
        }
        Ok(out.try_into().unwrap())
    }

    /// Aligns, masks, and pools a previous prediction into the current frame.
    pub fn history_input(
        &self,
        prev: Option<&ElevationMap>,
        pose: &VehiclePose,
    ) -> Result<Option<Array2<f64>>> {
        let Some(prev) = prev else { return Ok(None) };
        let (aligned, mask) = align_previous(prev, pose, &self.config.grid)?;
        let masked = masked_history(&aligned, &mask)?;
        Ok(Some(pool_history(
            &masked,
            &mask.mask,
            self.config.query_grids()[0],
        )))
    }

    pub fn prepare(
        &self,
        rig: &CameraRig,
        images: &[RgbImage; 3],
        pose: &VehiclePose,
        prev: Option<&ElevationMap>,
    ) -> Result<FrameInput> {
        pose.validate()?;
        Ok(FrameInput {
            images: image_tensor(images, self.config.image_size)?,
            directions: self.directions(rig, pose)?,
            history: self.history_input(prev, pose)?,
        })
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape) -> Bound<'a> {
        let vars = self
            .params
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(i, v))
            .collect();
        Bound {
            store: &self.params,
            vars,
        }
    }

    fn affine(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Var {
        let y = tape.matmul(p.get(&format!("{name}.weight")), x);
        tape.add_col(y, p.get(&format!("{name}.bias")))
    }

    /// Shared backbone over the three views; returns the last three stages.
    pub fn backbone(&self, tape: &mut Tape, p: &Bound, images: Var) -> [Var; 3] {
        let mut x = images;
        let mut stages = Vec::new();
        for k in 0..self.config.backbone_widths.len() {
            let cols = tape.gather(x, &self.plan.backbone_im2col[k]);
            let y = Self::affine(tape, p, &format!("backbone.stage{k}"), cols);
            x = tape.silu(y);
            stages.push(x);
        }
        let n = stages.len();
        [stages[n - 3], stages[n - 2], stages[n - 1]]
    }

    /// Two-layer MLP over token ray directions.
    pub fn embed_directions(
        &self,
        tape: &mut Tape,
        p: &Bound,
        scale: usize,
        directions: Var,
    ) -> Var {
        let h = Self::affine(tape, p, &format!("ope.scale{scale}.fc1"), directions);
        let h = tape.silu(h);
        Self::affine(tape, p, &format!("ope.scale{scale}.fc2"), h)
    }

    /// Pointwise history encoder on the finest query grid.
    pub fn encode_history(&self, tape: &mut Tape, p: &Bound, history: Var) -> Var {
        let h = Self::affine(tape, p, "history.conv1", history);
        let h = tape.silu(h);
        Self::affine(tape, p, "history.conv2", h)
    }

    /// Multi-head scaled dot-product attention, channel-major: `q` is
    /// `(d, nq)`, `k` is `(d, nk)`, `v` is `(dv, nk)`; returns `(dv, nq)`.
    pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (d, _) = tape.shape(q);
        let (dv, _) = tape.shape(v);
        let (dh, dvh) = (d / heads, dv / heads);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                let sq = Arc::new(row_slice(tape.shape(q), h * dh, (h + 1) * dh));
                let sk = Arc::new(row_slice(tape.shape(k), h * dh, (h + 1) * dh));
                let sv = Arc::new(row_slice(tape.shape(v), h * dvh, (h + 1) * dvh));
                (
                    tape.gather(q, &sq),
                    tape.gather(k, &sk),
                    tape.gather(v, &sv),
                )
            };
            let qt = tape.transpose(qh);
            let scores = tape.matmul(qt, kh);
            let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = tape.softmax_rows(scores);
            let at = tape.transpose(attn);
            outs.push(tape.matmul(vh, at));
        }
        if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_rows(&outs)
        }
    }

    /// Keys from `[delta; phi']`, values from `phi'`, queries from the
    /// map-view query input.
    pub fn cross_view_attend(
        &self,
        tape: &mut Tape,
        p: &Bound,
        scale: usize,
        query_input: Var,
        delta: Var,
        phi: Var,
    ) -> Var {
        let feat = Self::affine(tape, p, &format!("attn.scale{scale}.feat"), phi);
        let kin = tape.concat_rows(&[delta, feat]);
        let k = Self::affine(tape, p, &format!("attn.scale{scale}.key"), kin);
        let v = Self::affine(tape, p, &format!("attn.scale{scale}.value"), feat);
        let q = Self::affine(tape, p, &format!("attn.scale{scale}.query"), query_input);
        Self::attention(tape, q, k, v, self.config.heads)
    }

    /// Per-scale map features to the anchor-relative elevation map.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, per_scale: [Var; 3]) -> Var {
        let mut sum: Option<Var> = None;
        for (s, &f) in per_scale.iter().enumerate() {
            let proj = tape.matmul(p.get(&format!("decoder.scale{s}.proj.weight")), f);
            let up = tape.sparse(proj, &self.plan.upsample[s]);
            sum = Some(match sum {
                None => up,
                Some(acc) => tape.add(acc, up),
            });
        }
        let x = tape.add_col(sum.unwrap(), p.get("decoder.bias"));
        let x = tape.silu(x);
        let cols = tape.gather(x, &self.plan.decoder_im2col);
        let x = Self::affine(tape, p, "decoder.conv", cols);
        let x = tape.silu(x);
        let y = tape.matmul(p.get("decoder.head.weight"), x);
        tape.sparse(y, &self.plan.anchor)
    }

    pub fn forward(&self, tape: &mut Tape, input: &FrameInput) -> Result<ForwardVars> {
        let p = self.bind(tape);
        self.forward_bound(tape, &p, input)
    }

    pub fn forward_bound(
        &self,
        tape: &mut Tape,
        p: &Bound,
        input: &FrameInput,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let hw = cfg.image_size * cfg.image_size;
        if input.images.dim() != (3, 3 * hw) {
            return Err(config_err(format!(
                "image tensor has shape {:?}",
                input.images.dim()
            )));
        }
        let sizes = cfg.feature_sizes();
        for (s, d) in input.directions.iter().enumerate() {
            if d.dim() != (3, 3 * sizes[s] * sizes[s]) {
                return Err(config_err(format!(
                    "direction tensor {s} has shape {:?}",
                    d.dim()
                )));
            }
        }
        let (qr, qc) = cfg.query_grids()[0];
        if let Some(h) = &input.history {
            if h.dim() != (1, qr * qc) {
                return Err(config_err(format!(
                    "history tensor has shape {:?}",
                    h.dim()
                )));
            }
        }

        let images = tape.constant(input.images.clone());
        let features = self.backbone(tape, p, images);
        let mut embeddings = Vec::with_capacity(3);
        for (s, dirs) in input.directions.iter().enumerate() {
            let d = tape.constant(dirs.clone());
            embeddings.push(self.embed_directions(tape, p, s, d));
        }

        let queries = p.get("queries.embedding");
        let fine_input = if cfg.history {
            let h = input
                .history
                .clone()
                .unwrap_or_else(|| Array2::zeros((1, qr * qc)));
            let h = tape.constant(h);
            let enc = self.encode_history(tape, p, h);
            tape.concat_rows(&[queries, enc])
        } else {
            queries
        };
        let mut query_inputs = Vec::with_capacity(3);
        let mut attended = Vec::with_capacity(3);
        let mut per_scale = Vec::with_capacity(3);
        for s in 0..3 {
            let qin = match &self.plan.query_pool[s] {
                None => fine_input,
                Some(pool) => tape.sparse(fine_input, pool),
            };
            let a = self.cross_view_attend(tape, p, s, qin, embeddings[s], features[s]);
            per_scale.push(tape.concat_rows(&[a, qin]));
            query_inputs.push(qin);
            attended.push(a);
        }
        let prediction = self.decode(tape, p, per_scale.try_into().unwrap());
        Ok(ForwardVars {
            features,
            embeddings: embeddings.try_into().unwrap(),
            query_inputs: query_inputs.try_into().unwrap(),
            attended: attended.try_into().unwrap(),
            prediction,
        })
    }

    /// Prediction values as a `rows x cols` array.
    pub fn prediction_values(&self, tape: &Tape, vars: &ForwardVars) -> Array2<f64> {
        let g = self.config.grid;
        tape.value(vars.prediction)
            .clone()
            .into_shape_with_order((g.rows, g.cols))
            .expect("prediction shape")
    }

    /// Runs the model on pre-built inputs.
    pub fn infer(
        &self,
        input: &FrameInput,
        pose: &VehiclePose,
        timestamp: f64,
    ) -> Result<ElevationMap> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, input)?;
        let values = self.prediction_values(&tape, &vars);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::Error::NonFiniteOutput);
        }
        ElevationMap::new(self.config.grid, values, *pose, timestamp)
    }

    /// End-to-end prediction for one frame with an optional previous
    /// prediction as history.
    pub fn predict(
        &self,
        rig: &CameraRig,
        images: &[RgbImage; 3],
        pose: &VehiclePose,
        prev: Option<&ElevationMap>,
        timestamp: f64,
    ) -> Result<ElevationMap> {
        let input = self.prepare(rig, images, pose, prev)?;
        self.infer(&input, pose, timestamp)
    }
}
