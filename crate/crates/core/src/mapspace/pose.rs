use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Vehicle pose in the world frame (x east, y north, z up).
///
/// `position.z` is the ground height under the vehicle. Attitude is split into
/// a heading (`yaw`, about gravity) and the gravity-alignment part (`roll`,
/// `pitch`). Positive pitch raises the nose; positive roll raises the left
/// side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehiclePose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl VehiclePose {
    pub fn new(position: [f64; 3], yaw: f64, roll: f64, pitch: f64) -> Result<Self> {
        let pose = Self {
            position,
            yaw: wrap_angle(yaw),
            roll,
            pitch,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn level(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            position: [x, y, z],
            yaw: wrap_angle(yaw),
            roll: 0.0,
            pitch: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.position.iter().all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.roll.is_finite()
            && self.pitch.is_finite();
        if !finite {
            return Err(config_err("pose has non-finite fields"));
        }
        let half = PI / 2.0;
        if self.roll.abs() >= half || self.pitch.abs() >= half {
            return Err(config_err(format!(
                "roll/pitch must lie in (-pi/2, pi/2), got roll={} pitch={}",
                self.roll, self.pitch
            )));
        }
        if !(-PI..PI).contains(&self.yaw) {
            return Err(config_err(format!(
                "yaw must lie in [-pi, pi), got {}",
                self.yaw
            )));
        }
        Ok(())
    }

    /// The gravity-alignment rotation `G = R_pitch * R_roll`, mapping
    /// gravity-aligned vehicle coordinates into body coordinates.
    pub fn gravity_rotation(&self) -> Matrix3<f64> {
        gravity_rotation(self.roll, self.pitch)
    }

    /// Rotation taking heading-frame vectors into the world frame.
    pub fn heading_rotation(&self) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw).matrix()
    }

    /// Rotation taking body-frame vectors into the world frame.
    pub fn body_to_world(&self) -> Matrix3<f64> {
        self.heading_rotation() * self.gravity_rotation().transpose()
    }

    pub fn position_vec(&self) -> Vector3<f64> {
        Vector3::from(self.position)
    }
}

/// `G = Ry(pitch) * Rx(-roll)`; identity when roll = pitch = 0.
pub fn gravity_rotation(roll: f64, pitch: f64) -> Matrix3<f64> {
    let r_pitch = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch);
    let r_roll = Rotation3::from_axis_angle(&Vector3::x_axis(), -roll);
    *(r_pitch * r_roll).matrix()
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn level_gravity_is_identity() {
        assert_eq!(gravity_rotation(0.0, 0.0), Matrix3::identity());
    }

    #[test]
    fn gravity_rotation_is_orthonormal() {
        let g = gravity_rotation(0.3, -0.2);
        assert_relative_eq!(g.transpose() * g, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(g.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn attitude_signs() {
        // nose up: body forward axis has positive world z
        let pose = VehiclePose::new([0.0; 3], 0.0, 0.0, 0.2).unwrap();
        let fwd = pose.body_to_world() * Vector3::x();
        assert!(fwd.z > 0.0);
        // left side up
        let pose = VehiclePose::new([0.0; 3], 0.0, 0.2, 0.0).unwrap();
        let left = pose.body_to_world() * Vector3::y();
        assert!(left.z > 0.0);
    }

    #[test]
    fn wraps_into_half_open_range() {
        assert_relative_eq!(wrap_angle(PI), -PI);
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(-PI / 2.0), -PI / 2.0);
        assert!(VehiclePose::new([0.0; 3], 0.0, 1.6, 0.0).is_err());
        assert!(VehiclePose::new([f64::NAN, 0.0, 0.0], 0.0, 0.0, 0.0).is_err());
    }
}
