use ndarray::Array2;

use super::pose::wrap_angle;
use super::{ElevationMap, GridSpec, OverlapMask, VehiclePose};
use crate::error::{config_err, Result};

/// Planar ego-motion between two gravity-aligned vehicle frames.
///
/// `(dx, dy, dyaw)` is the current frame's pose expressed in the previous
/// frame. `dz = z_prev - z_curr` is the offset added to previous-frame
/// elevations so they are referenced to the current vehicle's ground height.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarMotion {
    pub dx: f64,
    pub dy: f64,
    pub dyaw: f64,
    pub dz: f64,
}

impl PlanarMotion {
    pub fn identity() -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            dyaw: 0.0,
            dz: 0.0,
        }
    }

    /// Maps a point from the current frame into the previous frame.
    pub fn curr_to_prev(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.dyaw.sin_cos();
        (self.dx + c * p.0 - s * p.1, self.dy + s * p.0 + c * p.1)
    }

    /// Maps a point from the previous frame into the current frame.
    pub fn prev_to_curr(&self, q: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.dyaw.sin_cos();
        let (x, y) = (q.0 - self.dx, q.1 - self.dy);
        (c * x + s * y, -s * x + c * y)
    }
}

pub fn relative_se2z(prev: &VehiclePose, curr: &VehiclePose) -> PlanarMotion {
    let gx = curr.position[0] - prev.position[0];
    let gy = curr.position[1] - prev.position[1];
    let (s, c) = prev.yaw.sin_cos();
    PlanarMotion {
        dx: c * gx + s * gy,
        dy: -s * gx + c * gy,
        dyaw: wrap_angle(curr.yaw - prev.yaw),
        dz: prev.position[2] - curr.position[2],
    }
}

/// Bilinear sample of a grid-shaped array at continuous cell coordinates,
/// clamping to the border. Returns `None` if a contributing cell is invalid.
fn sample_bilinear(values: &Array2<f64>, valid: &Array2<bool>, row: f64, col: f64) -> Option<f64> {
    let (rows, cols) = values.dim();
    let rc = row.clamp(0.0, (rows - 1) as f64);
    let cc = col.clamp(0.0, (cols - 1) as f64);
    let r0 = (rc.floor() as usize).min(rows - 2);
    let c0 = (cc.floor() as usize).min(cols - 2);
    let fr = rc - r0 as f64;
    let fc = cc - c0 as f64;
    let mut acc = 0.0;
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            let w = wr * wc;
            if w == 0.0 {
                continue;
            }
            let idx = (r0 + dr, c0 + dc);
            if !valid[idx] {
                return None;
            }
            acc += w * values[idx];
        }
    }
    Some(acc)
}

/// Resamples the previous prediction into the current vehicle frame and
/// computes the overlap mask. Cells outside the previous footprint get value
/// 0 and `mask = false`.
pub fn align_previous(
    prev_map: &ElevationMap,
    curr_pose: &VehiclePose,
    grid: &GridSpec,
) -> Result<(ElevationMap, OverlapMask)> {
    if prev_map.grid != *grid {
        return Err(config_err(format!(
            "previous map grid {:?} does not match current grid {:?}",
            prev_map.grid, grid
        )));
    }
    let motion = relative_se2z(&prev_map.frame_pose, curr_pose);
    let mut values = Array2::zeros(grid.shape());
    let mut mask = Array2::from_elem(grid.shape(), false);
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let q = motion.curr_to_prev(grid.cell_center(row, col));
            if !grid.footprint_contains(q.0, q.1) {
                continue;
            }
            let (qr, qc) = grid.point_to_cell(q.0, q.1);
            if let Some(v) = sample_bilinear(&prev_map.values, &prev_map.valid, qr, qc) {
                values[(row, col)] = v + motion.dz;
                mask[(row, col)] = true;
            }
        }
    }
    let aligned = ElevationMap {
        grid: *grid,
        values,
        valid: mask.clone(),
        frame_pose: *curr_pose,
        timestamp: prev_map.timestamp,
    };
    Ok((aligned, OverlapMask { grid: *grid, mask }))
}

/// Elementwise product of aligned history and overlap mask.
pub fn masked_history(prev_aligned: &ElevationMap, mask: &OverlapMask) -> Result<Array2<f64>> {
    if prev_aligned.values.dim() != mask.mask.dim() {
        return Err(config_err("history and mask shapes differ"));
    }
    let mut out = prev_aligned.values.clone();
    out.zip_mut_with(&mask.mask, |v, &m| {
        if !m {
            *v = 0.0;
        }
    });
    Ok(out)
}

/// History input for the first frame of a sequence.
pub fn zero_history(grid: &GridSpec) -> Array2<f64> {
    Array2::zeros(grid.shape())
}
