use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TerrainField;
use crate::error::{Error, Result};
use crate::mapspace::{wrap_angle, VehiclePose};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryParams {
    pub seed: u64,
    pub num_frames: usize,
    pub speed_mps: f64,
    pub dt_s: f64,
    /// Peak heading rate of the random heading walk; 0 drives straight.
    pub max_yaw_rate: f64,
    /// Fixed initial heading; drawn from the seed when absent.
    #[serde(default)]
    pub initial_yaw: Option<f64>,
    /// Minimum clearance between every pose and the terrain border.
    pub margin_m: f64,
}

/// Roll and pitch of a vehicle resting on a surface with the given height
/// gradient, heading `yaw`.
pub fn attitude_from_slope(gradient: (f64, f64), yaw: f64) -> (f64, f64) {
    let (s, c) = yaw.sin_cos();
    let forward = gradient.0 * c + gradient.1 * s;
    let left = -gradient.0 * s + gradient.1 * c;
    let roll = left.atan();
    let pitch = (forward * roll.cos()).atan();
    (roll, pitch)
}

/// Smooth path driven by a sum-of-sinusoids heading rate, with height and
/// attitude taken from the terrain under each pose.
pub fn simulate_trajectory(
    terrain: &TerrainField,
    params: &TrajectoryParams,
) -> Result<Vec<VehiclePose>> {
    if params.num_frames == 0 {
        return Err(Error::Generation(
            "trajectory needs at least one frame".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let heading0 = rng.random_range(-PI..PI);
    let heading0 = params.initial_yaw.unwrap_or(heading0);
    let components: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                params.max_yaw_rate * rng.random_range(0.2..0.5),
                rng.random_range(0.05..0.4),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let yaw_rate = |t: f64| -> f64 {
        components
            .iter()
            .map(|(a, w, phase)| a * (w * t + phase).sin())
            .sum()
    };

    let step = params.speed_mps * params.dt_s;
    let (mut x, mut y, mut heading) = (0.0f64, 0.0f64, heading0);
    let mut poses = Vec::with_capacity(params.num_frames);
    for k in 0..params.num_frames {
        if !terrain.contains(x, y, params.margin_m) {
            return Err(Error::Generation(format!(
                "trajectory leaves the terrain at frame {k} ({x:.1}, {y:.1})"
            )));
        }
        let yaw = wrap_angle(heading);
        let (roll, pitch) = attitude_from_slope(terrain.gradient_at(x, y), yaw);
        poses.push(VehiclePose {
            position: [x, y, terrain.height_at(x, y)],
            yaw,
            roll,
            pitch,
        });
        let (s, c) = heading.sin_cos();
        x += step * c;
        y += step * s;
        heading += yaw_rate(k as f64 * params.dt_s) * params.dt_s;
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::TerrainStyle;

    fn params(n: usize) -> TrajectoryParams {
        TrajectoryParams {
            seed: 11,
            num_frames: n,
            speed_mps: 4.0,
            dt_s: 0.5,
            max_yaw_rate: 0.2,
            initial_yaw: None,
            margin_m: 10.0,
        }
    }

    #[test]
    fn flat_terrain_is_level() {
        let t = TerrainField::from_fn(200.0, 1.0, TerrainStyle::DesertFlat, 0, |_, _| 0.0).unwrap();
        let poses = simulate_trajectory(&t, &params(30)).unwrap();
        assert!(poses.iter().all(|p| p.roll == 0.0 && p.pitch == 0.0));
        for w in poses.windows(2) {
            let d =
                (w[1].position[0] - w[0].position[0]).hypot(w[1].position[1] - w[0].position[1]);
            assert!((d - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ramp_pitch_matches_plane_normal() {
        let g = 0.15;
        let t = TerrainField::from_fn(200.0, 1.0, TerrainStyle::Hilly, 0, |x, _| g * x).unwrap();
        let mut p = params(5);
        p.max_yaw_rate = 0.0;
        p.initial_yaw = Some(0.0);
        let poses = simulate_trajectory(&t, &p).unwrap();
        for pose in &poses {
            assert!((pose.pitch - g.atan()).abs() < 1e-12);
            assert!(pose.roll.abs() < 1e-12);
        }
        // finite-difference surface normal oracle at the first pose
        let h = 1e-4;
        let (x, y) = (poses[2].position[0], poses[2].position[1]);
        let hx = (t.height_at(x + h, y) - t.height_at(x - h, y)) / (2.0 * h);
        let hy = (t.height_at(x, y + h) - t.height_at(x, y - h)) / (2.0 * h);
        let n = [-hx, -hy, 1.0];
        let tilt = (n[0].hypot(n[1])).atan2(n[2]);
        assert!((poses[2].pitch - tilt).abs() < 1e-9);
    }

    #[test]
    fn sideways_slope_rolls() {
        // heading +x, terrain rising towards +y (vehicle's left)
        let t = TerrainField::from_fn(200.0, 1.0, TerrainStyle::Hilly, 0, |_, y| 0.2 * y).unwrap();
        let mut p = params(3);
        p.max_yaw_rate = 0.0;
        p.initial_yaw = Some(0.0);
        let poses = simulate_trajectory(&t, &p).unwrap();
        assert!((poses[0].roll - 0.2f64.atan()).abs() < 1e-12);
        assert!(poses[0].pitch.abs() < 1e-12);
    }

    #[test]
    fn leaving_extent_is_an_error() {
        let t = TerrainField::from_fn(40.0, 1.0, TerrainStyle::Hilly, 0, |_, _| 0.0).unwrap();
        let err = simulate_trajectory(&t, &params(100)).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
        assert!(simulate_trajectory(&t, &params(0)).is_err());
    }
}
