use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::net::{ModelConfig, PosEncoding};
use crate::objective::{LossWeights, DEFAULT_BETA};
use crate::util::{atomic_write, sha256_hex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mu: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Smooth-L1 transition point, meters.
    pub beta: f64,
    /// When false the temporal term is dropped regardless of `lambda`.
    pub tc_loss: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            mu: w.mu,
            lambda: w.lambda,
            gamma: w.gamma,
            beta: DEFAULT_BETA,
            tc_loss: true,
        }
    }
}

impl LossConfig {
    /// Weights actually applied, with the temporal switch folded in.
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            mu: self.mu,
            lambda: if self.tc_loss { self.lambda } else { 0.0 },
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Adam step size before decay.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    /// Cosine decay floor as a fraction of `lr`.
    pub min_lr_ratio: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Contiguous frames per step.
    pub batch_frames: usize,
    /// Frames run without gradient before each window to build history.
    pub warmup_frames: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 2000,
            min_lr_ratio: 0.05,
            clip_norm: Some(5.0),
            batch_frames: 2,
            warmup_frames: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// Parameter initialization.
    pub init: u64,
    /// Window sampling.
    pub data: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Dataset directories, relative to the config file.
    #[serde(default)]
    pub train: Vec<PathBuf>,
    #[serde(default)]
    pub test: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogConfig {
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for LogConfig {
    fn default() -> Self {
        Self {
            log_every: 1,
            checkpoint_every: 250,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub seeds: Seeds,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub logging: LogConfig,
}

/// The OPE x HA switches. History-augmentation covers both the history
/// input and the temporal loss term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub pos_encoding: PosEncoding,
    pub history: bool,
    pub tc_loss: bool,
}

impl AblationFlags {
    /// The four rows of the OPE x HA sweep.
    pub fn sweep() -> [(String, AblationFlags); 4] {
        let row = |pos_encoding, ha: bool| {
            let name = format!(
                "{}_{}",
                if pos_encoding == PosEncoding::Ope {
                    "ope"
                } else {
                    "cpe"
                },
                if ha { "ha" } else { "noha" }
            );
            (
                name,
                AblationFlags {
                    pos_encoding,
                    history: ha,
                    tc_loss: ha,
                },
            )
        };
        [
            row(PosEncoding::Cpe, false),
            row(PosEncoding::Ope, false),
            row(PosEncoding::Cpe, true),
            row(PosEncoding::Ope, true),
        ]
    }
}

#[derive(Serialize)]
struct FingerprintView<'a> {
    model: &'a ModelConfig,
    loss: &'a LossConfig,
    optim: &'a OptimConfig,
    seeds: &'a Seeds,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            seeds: Seeds { init: 0, data: 0 },
            data: DataConfig::default(),
            logging: LogConfig::default(),
        }
    }

    pub fn tiny() -> Self {
        let mut c = Self::desk();
        c.model = ModelConfig::tiny();
        c.optim.steps = 20;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.weights().validate()?;
        if !(self.loss.beta > 0.0) {
            return Err(config_err("smooth-L1 beta must be positive"));
        }
        let o = &self.optim;
        if !(o.lr > 0.0)
            || !(0.0..1.0).contains(&o.beta1)
            || !(0.0..1.0).contains(&o.beta2)
            || !(o.eps > 0.0)
        {
            return Err(config_err("invalid optimizer settings"));
        }
        if !(0.0..=1.0).contains(&o.min_lr_ratio) {
            return Err(config_err("min_lr_ratio must be in [0, 1]"));
        }
        if o.batch_frames == 0 {
            return Err(config_err("batch_frames must be positive"));
        }
        if o.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(config_err("clip_norm must be positive"));
        }
        if self.logging.log_every == 0 || self.logging.checkpoint_every == 0 {
            return Err(config_err("logging intervals must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of everything that affects training
    /// results: model, loss, optimizer, and seeds.
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            model: &self.model,
            loss: &self.loss,
            optim: &self.optim,
            seeds: &self.seeds,
        };
        // `serde_json::Value` objects keep keys sorted
        let canonical = serde_json::to_value(&view)
            .expect("config serializes")
            .to_string();
        sha256_hex(canonical.as_bytes())
    }

    pub fn ablation(&self) -> AblationFlags {
        AblationFlags {
            pos_encoding: self.model.pos_encoding,
            history: self.model.history,
            tc_loss: self.loss.tc_loss,
        }
    }

    pub fn with_ablation(mut self, flags: AblationFlags) -> Self {
        self.model.pos_encoding = flags.pos_encoding;
        self.model.history = flags.history;
        self.loss.tc_loss = flags.tc_loss;
        self
    }

    /// Reads a config and resolves data paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.data.train.iter_mut().chain(cfg.data.test.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &serde_json::to_vec_pretty(self)?)
    }
}
