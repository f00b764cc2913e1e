use ndarray::Array2;
use noise::{Fbm, MultiFractal, NoiseFn, Perlin};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainStyle {
    /// Open desert with modest elevation changes.
    DesertFlat,
    /// Rolling hills with pronounced elevation changes.
    Hilly,
}

impl TerrainStyle {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desert_flat" | "desert" | "flat" => Ok(Self::DesertFlat),
            "hilly" | "hills" => Ok(Self::Hilly),
            _ => Err(Error::InvalidArgument(format!(
                "unknown terrain style `{s}`"
            ))),
        }
    }

    fn shape(self) -> NoiseShape {
        match self {
            TerrainStyle::DesertFlat => NoiseShape {
                amplitude_m: 2.0,
                wavelength_m: 160.0,
                octaves: 4,
                persistence: 0.4,
            },
            TerrainStyle::Hilly => NoiseShape {
                amplitude_m: 10.0,
                wavelength_m: 110.0,
                octaves: 5,
                persistence: 0.45,
            },
        }
    }
}

struct NoiseShape {
    amplitude_m: f64,
    wavelength_m: f64,
    octaves: usize,
    persistence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub seed: u64,
    pub style: TerrainStyle,
    /// Side length of the square world region, centered on the origin.
    pub extent_m: f64,
    pub resolution_m: f64,
    /// Multiplies the style's height amplitude; 0 gives flat terrain.
    pub amplitude_scale: f64,
}

/// Dense world-frame heightfield sampled on a square lattice centered on the
/// origin. Heights between lattice points are bilinear, so the field is C0.
#[derive(Clone, Debug, PartialEq)]
pub struct TerrainField {
    /// Indexed `[iy, ix]`.
    pub heights: Array2<f64>,
    pub origin: [f64; 2],
    pub resolution_m: f64,
    pub seed: u64,
    pub style: TerrainStyle,
    max_height: f64,
}

impl TerrainField {
    /// Samples `f(x, y)` on a lattice covering `[-extent/2, extent/2]^2`.
    pub fn from_fn(
        extent_m: f64,
        resolution_m: f64,
        style: TerrainStyle,
        seed: u64,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        if !(resolution_m > 0.0) || !(extent_m > 2.0 * resolution_m) {
            return Err(Error::Generation(format!(
                "bad terrain extent {extent_m} m / resolution {resolution_m} m"
            )));
        }
        let n = (extent_m / resolution_m).round() as usize + 1;
        let origin = [-extent_m / 2.0, -extent_m / 2.0];
        let heights = Array2::from_shape_fn((n, n), |(iy, ix)| {
            f(
                origin[0] + ix as f64 * resolution_m,
                origin[1] + iy as f64 * resolution_m,
            )
        });
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::Generation("terrain heights are not finite".into()));
        }
        let max_height = heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            heights,
            origin,
            resolution_m,
            seed,
            style,
            max_height,
        })
    }

    pub fn half_extent(&self) -> f64 {
        (self.heights.ncols() - 1) as f64 * self.resolution_m / 2.0
    }

    pub fn max_height(&self) -> f64 {
        self.max_height
    }

    /// Whether `(x, y)` lies at least `margin` inside the terrain region.
    pub fn contains(&self, x: f64, y: f64, margin: f64) -> bool {
        let h = self.half_extent() - margin;
        x.abs() <= h && y.abs() <= h
    }

    /// Bilinear height; positions outside the region clamp to the border.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let (ny, nx) = self.heights.dim();
        let gx = ((x - self.origin[0]) / self.resolution_m).clamp(0.0, (nx - 1) as f64);
        let gy = ((y - self.origin[1]) / self.resolution_m).clamp(0.0, (ny - 1) as f64);
        let ix = (gx.floor() as usize).min(nx - 2);
        let iy = (gy.floor() as usize).min(ny - 2);
        let fx = gx - ix as f64;
        let fy = gy - iy as f64;
        let h = &self.heights;
        let top = h[(iy, ix)] * (1.0 - fx) + h[(iy, ix + 1)] * fx;
        let bottom = h[(iy + 1, ix)] * (1.0 - fx) + h[(iy + 1, ix + 1)] * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Central-difference height gradient `(dh/dx, dh/dy)` with a one-cell
    /// step.
    pub fn gradient_at(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.resolution_m;
        (
            (self.height_at(x + s, y) - self.height_at(x - s, y)) / (2.0 * s),
            (self.height_at(x, y + s) - self.height_at(x, y - s)) / (2.0 * s),
        )
    }

    pub fn variance(&self) -> f64 {
        let n = self.heights.len() as f64;
        let mean = self.heights.sum() / n;
        self.heights.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n
    }
}

/// Multi-octave Perlin heightfield, deterministic in `seed`.
pub fn generate_terrain(params: &TerrainParams) -> Result<TerrainField> {
    let shape = params.style.shape();
    let fbm = Fbm::<Perlin>::new(params.seed as u32 ^ (params.seed >> 32) as u32)
        .set_octaves(shape.octaves)
        .set_frequency(1.0 / shape.wavelength_m)
        .set_persistence(shape.persistence)
        .set_lacunarity(2.0);
    let amplitude = shape.amplitude_m * params.amplitude_scale;
    TerrainField::from_fn(
        params.extent_m,
        params.resolution_m,
        params.style,
        params.seed,
        |x, y| {
            if amplitude == 0.0 {
                0.0
            } else {
                amplitude * fbm.get([x, y])
            }
        },
    )
}
