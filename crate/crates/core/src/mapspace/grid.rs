use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Map grid geometry.
///
/// The vehicle sits in the anchor cell `(0, cols / 2)`. Row index grows with
/// forward distance, column index grows towards the vehicle's left. Cell
/// `(row, col)` has its center at `(row * r, (col - cols / 2) * r)` in the
/// gravity-aligned vehicle frame (x forward, y left), so the anchor cell center
/// is the vehicle position itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub resolution_m: f64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, resolution_m: f64) -> Result<Self> {
        let grid = Self {
            rows,
            cols,
            resolution_m,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Builds a grid from a metric extent; the extent must be an exact
    /// multiple of the resolution.
    pub fn from_extent(height_m: f64, width_m: f64, resolution_m: f64) -> Result<Self> {
        if !(resolution_m > 0.0) || !resolution_m.is_finite() {
            return Err(config_err(format!(
                "resolution must be > 0, got {resolution_m}"
            )));
        }
        let rows = (height_m / resolution_m).round();
        let cols = (width_m / resolution_m).round();
        if rows * resolution_m != height_m || cols * resolution_m != width_m {
            return Err(config_err(format!(
                "extent {height_m}x{width_m} m is not a multiple of resolution {resolution_m} m"
            )));
        }
        Self::new(rows as usize, cols as usize, resolution_m)
    }

    /// The paper-scale grid: 100 m x 100 m at 1 m.
    pub fn long_range() -> Self {
        Self {
            rows: 100,
            cols: 100,
            resolution_m: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution_m > 0.0) || !self.resolution_m.is_finite() {
            return Err(config_err(format!(
                "resolution must be > 0, got {}",
                self.resolution_m
            )));
        }
        if self.rows < 2 || self.cols < 2 {
            return Err(config_err(format!(
                "grid must be at least 2x2, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.resolution_m
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.resolution_m
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn anchor_col(&self) -> usize {
        self.cols / 2
    }

    pub fn anchor(&self) -> (usize, usize) {
        (0, self.anchor_col())
    }

    /// Flat row-major index of the anchor cell.
    pub fn anchor_index(&self) -> usize {
        self.anchor_col()
    }

    /// Cell center `(forward, left)` in meters.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let r = self.resolution_m;
        (row as f64 * r, (col as f64 - self.anchor_col() as f64) * r)
    }

    /// Continuous `(row, col)` coordinates of a vehicle-frame point; integer
    /// values land on cell centers.
    pub fn point_to_cell(&self, forward: f64, left: f64) -> (f64, f64) {
        let r = self.resolution_m;
        (forward / r, left / r + self.anchor_col() as f64)
    }

    /// Whether a vehicle-frame point lies inside the grid footprint (the union
    /// of all cell squares).
    pub fn footprint_contains(&self, forward: f64, left: f64) -> bool {
        let (row, col) = self.point_to_cell(forward, left);
        row >= -0.5 && row <= self.rows as f64 - 0.5 && col >= -0.5 && col <= self.cols as f64 - 0.5
    }

    /// Largest distance from the vehicle to any footprint corner.
    pub fn footprint_radius(&self) -> f64 {
        let r = self.resolution_m;
        let fwd = (self.rows as f64 - 0.5) * r;
        let left = (self.anchor_col() as f64 + 0.5) * r;
        let right = (self.cols as f64 - 0.5 - self.anchor_col() as f64) * r;
        fwd.hypot(left.max(right))
            .max((0.5 * r).hypot(left.max(right)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extent_must_divide() {
        let g = GridSpec::from_extent(100.0, 100.0, 1.0).unwrap();
        assert_eq!(g, GridSpec::long_range());
        assert_eq!(g.height_m(), 100.0);
        assert!(GridSpec::from_extent(100.0, 100.0, 3.0).is_err());
        assert!(GridSpec::from_extent(100.0, 100.0, 0.0).is_err());
        assert!(GridSpec::new(1, 10, 1.0).is_err());
    }

    #[test]
    fn anchor_is_bottom_middle() {
        let g = GridSpec::new(100, 100, 1.0).unwrap();
        assert_eq!(g.anchor(), (0, 50));
        assert_eq!(g.cell_center(0, 50), (0.0, 0.0));
        assert_eq!(g.cell_center(10, 52), (10.0, 2.0));
        assert_eq!(g.point_to_cell(10.0, 2.0), (10.0, 52.0));
        let g = GridSpec::new(8, 7, 0.5).unwrap();
        assert_eq!(g.anchor(), (0, 3));
        assert!(g.footprint_contains(3.74, 0.0));
        assert!(!g.footprint_contains(3.76, 0.0));
        assert!(!g.footprint_contains(-0.26, 0.0));
    }
}
