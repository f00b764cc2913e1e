//! Grid conventions, elevation maps, and ego-motion alignment of past
//! predictions.

mod align;
mod grid;
pub mod io;
mod map;
mod pose;

pub use align::{align_previous, masked_history, relative_se2z, zero_history, PlanarMotion};
pub use grid::GridSpec;
pub use map::{ElevationMap, OverlapMask};
pub use pose::{gravity_rotation, wrap_angle, VehiclePose};
