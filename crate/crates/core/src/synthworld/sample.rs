use image::RgbImage;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    generate_terrain, render_views, simulate_trajectory, TerrainField, TerrainParams, TerrainStyle,
    TrajectoryParams,
};
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::mapspace::{ElevationMap, GridSpec, VehiclePose};

/// Ground-truth map: terrain height at each cell center of the pose-anchored,
/// yaw-rotated grid, minus the height under the vehicle.
pub fn crop_gt_map(
    terrain: &TerrainField,
    pose: &VehiclePose,
    grid: &GridSpec,
) -> Result<ElevationMap> {
    let [px, py, _] = pose.position;
    if !terrain.contains(px, py, grid.footprint_radius()) {
        return Err(Error::Generation(format!(
            "map footprint at ({px:.1}, {py:.1}) leaves the terrain region"
        )));
    }
    let base = terrain.height_at(px, py);
    let (s, c) = pose.yaw.sin_cos();
    let values = Array2::from_shape_fn(grid.shape(), |(row, col)| {
        let (f, l) = grid.cell_center(row, col);
        terrain.height_at(px + c * f - s * l, py + s * f + c * l) - base
    });
    ElevationMap::new(*grid, values, *pose, 0.0)
}

/// One timestep of supervision: three views, the pose, and the GT map.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    pub index: usize,
    pub timestamp: f64,
    pub pose: VehiclePose,
    /// Front, left, right.
    pub images: [RgbImage; 3],
    pub gt_map: ElevationMap,
}

/// Everything needed to regenerate a synthetic sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub terrain: TerrainParams,
    pub trajectory: TrajectoryParams,
    pub grid: GridSpec,
    pub image_size: usize,
}

impl SequenceSpec {
    /// Desk-scale defaults: 64 px views, 32 x 32 m map at 1 m, 4 m/s at 2 Hz.
    pub fn desk(seed: u64, style: TerrainStyle, frames: usize) -> Self {
        Self::sized(
            seed,
            style,
            frames,
            64,
            GridSpec {
                rows: 32,
                cols: 32,
                resolution_m: 1.0,
            },
        )
    }

    pub fn sized(
        seed: u64,
        style: TerrainStyle,
        frames: usize,
        image_size: usize,
        grid: GridSpec,
    ) -> Self {
        let speed = 4.0;
        let dt = 0.5;
        let margin = grid.footprint_radius().max(100.0) + 10.0;
        let path = frames as f64 * speed * dt;
        let extent = (2.0 * (path + margin)).ceil();
        Self {
            terrain: TerrainParams {
                seed,
                style,
                extent_m: extent,
                resolution_m: 1.0,
                amplitude_scale: 1.0,
            },
            trajectory: TrajectoryParams {
                seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
                num_frames: frames,
                speed_mps: speed,
                dt_s: dt,
                max_yaw_rate: 0.25,
                initial_yaw: None,
                margin_m: margin,
            },
            grid,
            image_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub spec: SequenceSpec,
    pub rig: CameraRig,
    pub samples: Vec<FrameSample>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn grid(&self) -> GridSpec {
        self.spec.grid
    }
}

/// Builds one sample; images are 8-bit and the GT map is rounded through
/// `f32` so the sample matches its on-disk form exactly.
pub fn make_sample(
    terrain: &TerrainField,
    rig: &CameraRig,
    grid: &GridSpec,
    index: usize,
    timestamp: f64,
    pose: VehiclePose,
) -> Result<FrameSample> {
    let mut gt_map = crop_gt_map(terrain, &pose, grid)?.quantized();
    gt_map.timestamp = timestamp;
    Ok(FrameSample {
        index,
        timestamp,
        pose,
        images: render_views(terrain, &pose, rig),
        gt_map,
    })
}

/// Generates terrain, trajectory, renders, and GT crops. Frames are rendered
/// in parallel; the result does not depend on thread scheduling.
pub fn generate_sequence(spec: &SequenceSpec, rig: &CameraRig) -> Result<Sequence> {
    if rig.image_size() != (spec.image_size, spec.image_size) {
        return Err(Error::Config(format!(
            "rig image size {:?} does not match sequence image size {}",
            rig.image_size(),
            spec.image_size
        )));
    }
    let terrain = generate_terrain(&spec.terrain)?;
    let poses = simulate_trajectory(&terrain, &spec.trajectory)?;
    let samples = poses
        .into_par_iter()
        .enumerate()
        .map(|(k, pose)| {
            let t = k as f64 * spec.trajectory.dt_s;
            make_sample(&terrain, rig, &spec.grid, k, t, pose)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        spec: spec.clone(),
        rig: rig.clone(),
        samples,
    })
}
