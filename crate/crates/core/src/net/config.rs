use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::mapspace::GridSpec;

/// Positional encoding variant: gravity-aware rays, or rays with `G = I`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosEncoding {
    Ope,
    Cpe,
}

/// Map-view upsample factor of each scale, fine to coarse.
pub const UPSAMPLE: [usize; 3] = [4, 8, 16];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub grid: GridSpec,
    /// Channel width of each stride-2 backbone stage; the last three stages
    /// feed attention.
    pub backbone_widths: Vec<usize>,
    /// Embedding / attention width per scale, fine to coarse.
    pub embed_dims: [usize; 3],
    pub query_channels: usize,
    /// Widths of the two pointwise history convs.
    pub history_channels: [usize; 2],
    pub heads: usize,
    pub decoder_channels: usize,
    pub pos_encoding: PosEncoding,
    pub history: bool,
}

impl ModelConfig {
    /// 64 px views, 32 x 32 grid at 1 m.
    pub fn desk() -> Self {
        Self {
            image_size: 64,
            grid: GridSpec {
                rows: 32,
                cols: 32,
                resolution_m: 1.0,
            },
            backbone_widths: vec![12, 16, 24, 32, 48],
            embed_dims: [32, 24, 16],
            query_channels: 32,
            history_channels: [16, 32],
            heads: 1,
            decoder_channels: 16,
            pos_encoding: PosEncoding::Ope,
            history: true,
        }
    }

    /// 16 px views and an 8 x 8 grid, small enough for finite differences.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            grid: GridSpec {
                rows: 8,
                cols: 8,
                resolution_m: 1.0,
            },
            backbone_widths: vec![4, 5, 6, 6],
            embed_dims: [6, 4, 4],
            query_channels: 4,
            history_channels: [3, 4],
            heads: 2,
            decoder_channels: 4,
            pos_encoding: PosEncoding::Ope,
            history: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.backbone_widths.len();
        if n < 3 {
            return Err(config_err("backbone needs at least three stages"));
        }
        if self.backbone_widths.contains(&0) {
            return Err(config_err("backbone widths must be positive"));
        }
        let stride = 1usize << n;
        if self.image_size < 8 || !self.image_size.is_multiple_of(stride) {
            return Err(config_err(format!(
                "image size {} is not a multiple of the coarsest stride {stride}",
                self.image_size
            )));
        }
        if self.heads == 0 {
            return Err(config_err("attention needs at least one head"));
        }
        for &d in &self.embed_dims {
            if d == 0 || d % self.heads != 0 {
                return Err(config_err(format!(
                    "embed dim {d} is not divisible by {} heads",
                    self.heads
                )));
            }
        }
        if self.query_channels == 0
            || self.decoder_channels == 0
            || self.history_channels.contains(&0)
        {
            return Err(config_err("channel widths must be positive"));
        }
        Ok(())
    }

    /// Stride of each attention scale, fine to coarse.
    pub fn strides(&self) -> [usize; 3] {
        let n = self.backbone_widths.len();
        [1 << (n - 2), 1 << (n - 1), 1 << n]
    }

    /// Feature map side per scale.
    pub fn feature_sizes(&self) -> [usize; 3] {
        self.strides().map(|s| self.image_size / s)
    }

    /// Backbone channel width per scale.
    pub fn feature_channels(&self) -> [usize; 3] {
        let n = self.backbone_widths.len();
        [
            self.backbone_widths[n - 3],
            self.backbone_widths[n - 2],
            self.backbone_widths[n - 1],
        ]
    }

    /// Query grid `(rows, cols)` per scale.
    pub fn query_grids(&self) -> [(usize, usize); 3] {
        UPSAMPLE.map(|f| (self.grid.rows.div_ceil(f), self.grid.cols.div_ceil(f)))
    }

    /// Channels of the map-view query input (embedding plus history).
    pub fn query_input_channels(&self) -> usize {
        self.query_channels
            + if self.history {
                self.history_channels[1]
            } else {
                0
            }
    }
}
