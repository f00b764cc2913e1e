use ndarray::Array2;

use super::{GridSpec, VehiclePose};
use crate::error::{config_err, Result};

/// Gravity-aligned 2.5D elevation map in the frame of `frame_pose`.
///
/// `values` are meters relative to the ground height under the vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct ElevationMap {
    pub grid: GridSpec,
    pub values: Array2<f64>,
    pub valid: Array2<bool>,
    pub frame_pose: VehiclePose,
    pub timestamp: f64,
}

impl ElevationMap {
    pub fn new(
        grid: GridSpec,
        values: Array2<f64>,
        frame_pose: VehiclePose,
        timestamp: f64,
    ) -> Result<Self> {
        let valid = Array2::from_elem(values.dim(), true);
        Self::with_mask(grid, values, valid, frame_pose, timestamp)
    }

    pub fn with_mask(
        grid: GridSpec,
        values: Array2<f64>,
        valid: Array2<bool>,
        frame_pose: VehiclePose,
        timestamp: f64,
    ) -> Result<Self> {
        if values.dim() != grid.shape() || valid.dim() != grid.shape() {
            return Err(config_err(format!(
                "map arrays {:?}/{:?} do not match grid {:?}",
                values.dim(),
                valid.dim(),
                grid.shape()
            )));
        }
        Ok(Self {
            grid,
            values,
            valid,
            frame_pose,
            timestamp,
        })
    }

    pub fn zeros(grid: GridSpec, frame_pose: VehiclePose, timestamp: f64) -> Self {
        Self {
            grid,
            values: Array2::zeros(grid.shape()),
            valid: Array2::from_elem(grid.shape(), true),
            frame_pose,
            timestamp,
        }
    }

    pub fn anchor_value(&self) -> f64 {
        self.values[self.grid.anchor()]
    }

    /// Rounds every value through `f32`, the on-disk precision.
    pub fn quantized(mut self) -> Self {
        self.values.mapv_inplace(|v| v as f32 as f64);
        self
    }

    pub fn ensure_same_grid(&self, other: &ElevationMap) -> Result<()> {
        if self.grid != other.grid {
            return Err(config_err(format!(
                "grid mismatch: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

/// Cells of the current prediction area covered by the previous one.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapMask {
    pub grid: GridSpec,
    pub mask: Array2<bool>,
}

impl OverlapMask {
    pub fn empty(grid: GridSpec) -> Self {
        Self {
            grid,
            mask: Array2::from_elem(grid.shape(), false),
        }
    }

    pub fn full(grid: GridSpec) -> Self {
        Self {
            grid,
            mask: Array2::from_elem(grid.shape(), true),
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.grid.len() as f64
    }
}
