use image::{Rgb, RgbImage};
use nalgebra::Vector3;

use super::TerrainField;
use crate::camera::{Camera, CameraRig};
use crate::mapspace::VehiclePose;

/// Horizontal distance after which a ray counts as sky.
pub const MAX_RANGE_M: f64 = 1500.0;
const FOG_DISTANCE_M: f64 = 350.0;
const CONTOUR_PERIOD_M: f64 = 4.0;

/// Per-pixel ray-march result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RayHit {
    Sky,
    Ground { distance: f64, point: [f64; 3] },
}

/// World-frame origin and unit direction of the ray through pixel `(u, v)`.
pub fn camera_ray(
    cam: &Camera,
    pose: &VehiclePose,
    u: f64,
    v: f64,
) -> (Vector3<f64>, Vector3<f64>) {
    let body_to_world = pose.body_to_world();
    let origin = pose.position_vec() + body_to_world * cam.extrinsics.mount_translation;
    let dir = (body_to_world * cam.pixel_to_body() * Vector3::new(u, v, 1.0)).normalize();
    (origin, dir)
}

/// Marches along the ray until it passes below the heightfield, then refines
/// the crossing by bisection.
pub fn march(terrain: &TerrainField, origin: Vector3<f64>, dir: Vector3<f64>) -> RayHit {
    let above = |t: f64| {
        let p = origin + dir * t;
        p.z - terrain.height_at(p.x, p.y)
    };
    let horizontal = dir.xy().norm().max(1e-9);
    let t_max = MAX_RANGE_M / horizontal;
    let ceiling = terrain.max_height();
    let mut t_prev = 0.0;
    let mut t = 0.05;
    if above(0.0) < 0.0 {
        return RayHit::Ground {
            distance: 0.0,
            point: origin.into(),
        };
    }
    while t < t_max {
        let z = origin.z + dir.z * t;
        if dir.z >= 0.0 && z > ceiling {
            return RayHit::Sky;
        }
        if above(t) < 0.0 {
            let (mut lo, mut hi) = (t_prev, t);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if above(mid) < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let p = origin + dir * hi;
            return RayHit::Ground {
                distance: hi,
                point: p.into(),
            };
        }
        t_prev = t;
        t += 0.25 + 0.01 * t;
    }
    RayHit::Sky
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

const SKY_HORIZON: [f64; 3] = [0.78, 0.84, 0.92];
const SKY_ZENITH: [f64; 3] = [0.35, 0.55, 0.85];
const GROUND_LOW: [f64; 3] = [0.30, 0.40, 0.18];
const GROUND_HIGH: [f64; 3] = [0.78, 0.66, 0.46];

fn sky_color(dir: &Vector3<f64>) -> [f64; 3] {
    mix(SKY_HORIZON, SKY_ZENITH, dir.z.max(0.0).sqrt())
}

/// Diffuse term from the terrain normal, a height tint, contour banding, and
/// distance fog.
fn ground_color(terrain: &TerrainField, point: [f64; 3], distance: f64) -> [f64; 3] {
    let (gx, gy) = terrain.gradient_at(point[0], point[1]);
    let normal = Vector3::new(-gx, -gy, 1.0).normalize();
    let light = Vector3::new(-0.45, 0.3, 0.84).normalize();
    let diffuse = normal.dot(&light).max(0.0);
    let tint = 0.5 + 0.5 * (point[2] / 6.0).tanh();
    let bands = 0.88 + 0.12 * (2.0 * std::f64::consts::PI * point[2] / CONTOUR_PERIOD_M).cos();
    let base = mix(GROUND_LOW, GROUND_HIGH, tint);
    let lit = base.map(|c| c * (0.25 + 0.75 * diffuse) * bands);
    let fog = 1.0 - (-distance / FOG_DISTANCE_M).exp();
    mix(lit, SKY_HORIZON, fog)
}

/// Hit test for every pixel center of one camera, row-major.
pub fn trace_view(
    terrain: &TerrainField,
    pose: &VehiclePose,
    cam: &Camera,
) -> Vec<(RayHit, Vector3<f64>)> {
    let (w, h) = (cam.intrinsics.width, cam.intrinsics.height);
    let mut out = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            let (origin, dir) = camera_ray(cam, pose, j as f64 + 0.5, i as f64 + 0.5);
            out.push((march(terrain, origin, dir), dir));
        }
    }
    out
}

pub fn render_view(terrain: &TerrainField, pose: &VehiclePose, cam: &Camera) -> RgbImage {
    let (w, h) = (cam.intrinsics.width as u32, cam.intrinsics.height as u32);
    let hits = trace_view(terrain, pose, cam);
    let mut img = RgbImage::new(w, h);
    for (idx, (hit, dir)) in hits.iter().enumerate() {
        let color = match hit {
            RayHit::Sky => sky_color(dir),
            RayHit::Ground { distance, point } => ground_color(terrain, *point, *distance),
        };
        let px = color.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8);
        img.put_pixel(idx as u32 % w, idx as u32 / w, Rgb(px));
    }
    img
}

/// Front, left, and right shaded renders.
pub fn render_views(terrain: &TerrainField, pose: &VehiclePose, rig: &CameraRig) -> [RgbImage; 3] {
    let [f, l, r] = rig.cameras();
    [
        render_view(terrain, pose, f),
        render_view(terrain, pose, l),
        render_view(terrain, pose, r),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraExtrinsics, CameraIntrinsics, View};
    use crate::synthworld::TerrainStyle;

    fn level_rig() -> CameraRig {
        CameraRig::symmetric(64, 90f64.to_radians(), 60f64.to_radians(), 0.0).unwrap()
    }

    fn first_ground_rows(hits: &[(RayHit, Vector3<f64>)], w: usize) -> Vec<usize> {
        let h = hits.len() / w;
        (0..w)
            .map(|j| {
                (0..h)
                    .find(|&i| matches!(hits[i * w + j].0, RayHit::Ground { .. }))
                    .unwrap_or(h)
            })
            .collect()
    }

    fn flat() -> TerrainField {
        TerrainField::from_fn(400.0, 1.0, TerrainStyle::DesertFlat, 0, |_, _| 0.0).unwrap()
    }

    #[test]
    fn flat_horizon_is_straight() {
        let rig = level_rig();
        let pose = VehiclePose::level(0.0, 0.0, 0.0, 0.3);
        let hits = trace_view(&flat(), &pose, rig.camera(View::Front));
        let rows = first_ground_rows(&hits, 64);
        assert!(rows.iter().all(|&r| r == rows[0]), "{rows:?}");
        assert_eq!(rows[0], 32);
    }

    #[test]
    fn pitch_moves_horizon_down() {
        let rig = level_rig();
        let fy = rig.camera(View::Front).intrinsics.fy;
        let terrain = flat();
        let level = first_ground_rows(
            &trace_view(
                &terrain,
                &VehiclePose::level(0.0, 0.0, 0.0, 0.0),
                rig.camera(View::Front),
            ),
            64,
        )[32];
        for theta in [0.05f64, 0.1, 0.2] {
            let pose = VehiclePose::new([0.0, 0.0, 0.0], 0.0, 0.0, theta).unwrap();
            let pitched =
                first_ground_rows(&trace_view(&terrain, &pose, rig.camera(View::Front)), 64)[32];
            let shift = pitched as f64 - level as f64;
            assert!(
                (shift - fy * theta.tan()).abs() <= 1.0,
                "theta {theta}: shift {shift}"
            );
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let terrain = TerrainField::from_fn(400.0, 1.0, TerrainStyle::Hilly, 0, |x, y| {
            3.0 * (x / 30.0).sin() * (y / 25.0).cos()
        })
        .unwrap();
        let rig = CameraRig::desk(32).unwrap();
        let pose =
            VehiclePose::new([1.0, 2.0, terrain.height_at(1.0, 2.0)], 0.5, 0.05, -0.02).unwrap();
        let a = render_views(&terrain, &pose, &rig);
        let b = render_views(&terrain, &pose, &rig);
        assert_eq!(a, b);
        // the three views differ
        assert_ne!(a[1], a[2]);
    }

    #[test]
    fn downward_camera_sees_ground_at_mount_height() {
        let intr = CameraIntrinsics::centered(16, 1.0);
        let extr = CameraExtrinsics::looking(
            0.0,
            std::f64::consts::FRAC_PI_2,
            Vector3::new(0.0, 0.0, 2.0),
        );
        let cam = Camera::new(intr, extr).unwrap();
        let pose = VehiclePose::level(0.0, 0.0, 0.0, 0.0);
        let (o, d) = camera_ray(&cam, &pose, 8.0, 8.0);
        match march(&flat(), o, d) {
            RayHit::Ground { distance, .. } => assert!((distance - 2.0).abs() < 1e-9),
            RayHit::Sky => panic!("expected ground"),
        }
    }
}
