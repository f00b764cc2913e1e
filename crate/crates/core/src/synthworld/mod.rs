//! Procedural stand-in for real driving data: terrain synthesis, trajectory
//! simulation, shaded heightfield renders of the three views, and
//! ground-truth map crops.

pub mod dataset;
mod render;
mod sample;
mod terrain;
mod trajectory;

pub use dataset::{read_dataset, write_dataset};
pub use render::{camera_ray, march, render_view, render_views, trace_view, RayHit};
pub use sample::{
    crop_gt_map, generate_sequence, make_sample, FrameSample, Sequence, SequenceSpec,
};
pub use terrain::{generate_terrain, TerrainField, TerrainParams, TerrainStyle};
pub use trajectory::{attitude_from_slope, simulate_trajectory, TrajectoryParams};
