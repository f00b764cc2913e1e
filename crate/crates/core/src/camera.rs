//! Pinhole camera rig and ray unprojection for the orientation-aware
//! positional encoding.
//!
//! Frames: the gravity-aligned vehicle frame is x forward, y left, z up. The
//! body frame is that frame rotated by roll/pitch (`p_body = G * p_grav`).
//! Camera frames are x right, y down, z along the optical axis, with
//! `p_cam = R * p_body`. Pixel `(i, j)` spans `[j, j + 1) x [i, i + 1)` in
//! `(u, v)`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::util::atomic_write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Front,
    Left,
    Right,
}

impl View {
    pub const ALL: [View; 3] = [View::Front, View::Left, View::Right];

    pub fn index(self) -> usize {
        match self {
            View::Front => 0,
            View::Left => 1,
            View::Right => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Front => "front",
            View::Left => "left",
            View::Right => "right",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "front" | "f" => Ok(View::Front),
            "left" | "l" => Ok(View::Left),
            "right" | "r" => Ok(View::Right),
            _ => Err(Error::InvalidArgument(format!("unknown view `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Square image with the principal point at the image center.
    pub fn centered(size: usize, hfov_rad: f64) -> Self {
        let f = size as f64 / 2.0 / (hfov_rad / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(config_err(format!("invalid focal lengths {self:?}")));
        }
        if self.width < 8 || self.height < 8 {
            return Err(config_err(format!(
                "image must be at least 8x8, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraExtrinsics {
    /// Vehicle (body) frame to camera frame.
    pub rotation: Matrix3<f64>,
    /// Camera center in the body frame; only the renderer and the frustum
    /// test use it.
    pub mount_translation: Vector3<f64>,
}

impl CameraExtrinsics {
    /// A camera yawed by `yaw` (positive = towards the left) and tilted down by
    /// `tilt_down`, mounted at `mount`.
    pub fn looking(yaw: f64, tilt_down: f64, mount: Vector3<f64>) -> Self {
        // camera axes expressed in the body frame for a forward-looking camera
        let base = Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
        let cam_to_body = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), tilt_down);
        Self {
            rotation: (cam_to_body.matrix() * base).transpose(),
            mount_translation: mount,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(config_err(format!(
                "extrinsic rotation is not a proper rotation (|RtR-I|={ortho:e}, det={det})"
            )));
        }
        if !self.mount_translation.iter().all(|v| v.is_finite()) {
            return Err(config_err("mount translation is not finite"));
        }
        Ok(())
    }
}

/// A validated camera with its cached inverse matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
    r_inv: Matrix3<f64>,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, extrinsics: CameraExtrinsics) -> Result<Self> {
        intrinsics.validate()?;
        extrinsics.validate()?;
        let k = intrinsics.matrix();
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| config_err("intrinsic matrix is singular"))?;
        let r_inv = extrinsics
            .rotation
            .try_inverse()
            .ok_or_else(|| config_err("extrinsic rotation is singular"))?;
        Ok(Self {
            intrinsics,
            extrinsics,
            k,
            k_inv,
            r_inv,
        })
    }

    pub fn k(&self) -> &Matrix3<f64> {
        &self.k
    }

    pub fn k_inv(&self) -> &Matrix3<f64> {
        &self.k_inv
    }

    /// `R^-1 K^-1`: pixel homogeneous coordinates to a body-frame ray.
    pub fn pixel_to_body(&self) -> Matrix3<f64> {
        self.r_inv * self.k_inv
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.extrinsics.rotation
    }
}

/// Unit ray direction `normalize(G^-1 R^-1 K^-1 [u, v, 1]^T)` in the
/// gravity-aligned vehicle frame.
pub fn unproject_direction(
    cam: &Camera,
    gravity: &Matrix3<f64>,
    pixel: (f64, f64),
) -> Vector3<f64> {
    let g_inv = gravity.transpose();
    (g_inv * cam.pixel_to_body() * Vector3::new(pixel.0, pixel.1, 1.0)).normalize()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub in_front: bool,
}

impl Projection {
    pub fn inside(&self, intr: &CameraIntrinsics) -> bool {
        self.in_front
            && self.u >= 0.0
            && self.u < intr.width as f64
            && self.v >= 0.0
            && self.v < intr.height as f64
    }
}

fn perspective(k: &Matrix3<f64>, p_cam: Vector3<f64>) -> Projection {
    let h = k * p_cam;
    Projection {
        u: h.x / h.z,
        v: h.y / h.z,
        in_front: p_cam.z > 0.0,
    }
}

/// Projects a gravity-aligned direction or point through `K R G`, ignoring the
/// mount translation (the inverse of [`unproject_direction`]).
pub fn project_to_image(cam: &Camera, gravity: &Matrix3<f64>, point: &Vector3<f64>) -> Projection {
    perspective(cam.k(), cam.rotation() * gravity * point)
}

/// Projects a gravity-aligned vehicle-frame point, accounting for where the
/// camera is mounted.
pub fn project_point(cam: &Camera, gravity: &Matrix3<f64>, point: &Vector3<f64>) -> Projection {
    let p_body = gravity * point - cam.extrinsics.mount_translation;
    perspective(cam.k(), cam.rotation() * p_body)
}

/// Pixel-space centers of a `feature_rows x feature_cols` grid laid over the
/// image, row-major.
pub fn feature_grid_pixels(
    intr: &CameraIntrinsics,
    feature_rows: usize,
    feature_cols: usize,
) -> Result<Vec<(f64, f64)>> {
    if feature_rows == 0
        || feature_cols == 0
        || !intr.height.is_multiple_of(feature_rows)
        || !intr.width.is_multiple_of(feature_cols)
    {
        return Err(config_err(format!(
            "feature grid {feature_rows}x{feature_cols} does not divide image {}x{}",
            intr.height, intr.width
        )));
    }
    let sv = (intr.height / feature_rows) as f64;
    let su = (intr.width / feature_cols) as f64;
    let mut out = Vec::with_capacity(feature_rows * feature_cols);
    for i in 0..feature_rows {
        for j in 0..feature_cols {
            out.push(((j as f64 + 0.5) * su, (i as f64 + 0.5) * sv));
        }
    }
    Ok(out)
}

/// Front, left, and right cameras, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    cameras: [Camera; 3],
}

impl CameraRig {
    pub fn new(front: Camera, left: Camera, right: Camera) -> Result<Self> {
        let dims = (front.intrinsics.width, front.intrinsics.height);
        for c in [&left, &right] {
            if (c.intrinsics.width, c.intrinsics.height) != dims {
                return Err(config_err("all rig cameras must share image dimensions"));
            }
        }
        Ok(Self {
            cameras: [front, left, right],
        })
    }

    /// Three 90-degree cameras at 0 and +/-60 degrees yaw, mounted 2 m up.
    pub fn desk(image_size: usize) -> Result<Self> {
        Self::symmetric(
            image_size,
            90f64.to_radians(),
            60f64.to_radians(),
            8f64.to_radians(),
        )
    }

    pub fn symmetric(image_size: usize, hfov: f64, side_yaw: f64, tilt_down: f64) -> Result<Self> {
        let intr = CameraIntrinsics::centered(image_size, hfov);
        let mount = Vector3::new(0.5, 0.0, 2.0);
        let cam = |yaw: f64| Camera::new(intr, CameraExtrinsics::looking(yaw, tilt_down, mount));
        Self::new(cam(0.0)?, cam(side_yaw)?, cam(-side_yaw)?)
    }

    pub fn camera(&self, view: View) -> &Camera {
        &self.cameras[view.index()]
    }

    pub fn cameras(&self) -> &[Camera; 3] {
        &self.cameras
    }

    pub fn image_size(&self) -> (usize, usize) {
        let i = &self.cameras[0].intrinsics;
        (i.height, i.width)
    }

    pub fn to_file(&self) -> RigFile {
        RigFile {
            cameras: View::ALL
                .iter()
                .zip(self.cameras.iter())
                .map(|(view, cam)| {
                    let r = &cam.extrinsics.rotation;
                    let t = &cam.extrinsics.mount_translation;
                    RigCameraRecord {
                        name: view.name().to_string(),
                        fx: cam.intrinsics.fx,
                        fy: cam.intrinsics.fy,
                        cx: cam.intrinsics.cx,
                        cy: cam.intrinsics.cy,
                        width: cam.intrinsics.width,
                        height: cam.intrinsics.height,
                        rotation: [
                            r[(0, 0)],
                            r[(0, 1)],
                            r[(0, 2)],
                            r[(1, 0)],
                            r[(1, 1)],
                            r[(1, 2)],
                            r[(2, 0)],
                            r[(2, 1)],
                            r[(2, 2)],
                        ],
                        mount_translation: [t.x, t.y, t.z],
                    }
                })
                .collect(),
        }
    }

    pub fn from_file(file: &RigFile) -> Result<Self> {
        if file.cameras.len() != 3 {
            return Err(config_err(format!(
                "rig must list exactly 3 cameras, found {}",
                file.cameras.len()
            )));
        }
        let mut cams = Vec::with_capacity(3);
        for (view, rec) in View::ALL.iter().zip(file.cameras.iter()) {
            if View::parse(&rec.name)? != *view {
                return Err(config_err(format!(
                    "rig cameras must be ordered front, left, right; found `{}` in slot {}",
                    rec.name,
                    view.index()
                )));
            }
            let intr = CameraIntrinsics {
                fx: rec.fx,
                fy: rec.fy,
                cx: rec.cx,
                cy: rec.cy,
                width: rec.width,
                height: rec.height,
            };
            let extr = CameraExtrinsics {
                rotation: Matrix3::from_row_slice(&rec.rotation),
                mount_translation: Vector3::from(rec.mount_translation),
            };
            cams.push(Camera::new(intr, extr)?);
        }
        let right = cams.pop().unwrap();
        let left = cams.pop().unwrap();
        let front = cams.pop().unwrap();
        Self::new(front, left, right)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: RigFile = serde_json::from_slice(&fs::read(path)?)?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(
            path,
            serde_json::to_string_pretty(&self.to_file())?.as_bytes(),
        )
    }
}

/// Rig file: per camera, intrinsics, a row-major 3x3 rotation, and the mount
/// translation in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub cameras: Vec<RigCameraRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigCameraRecord {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: [f64; 9],
    pub mount_translation: [f64; 3],
}
