//! On-disk elevation maps: a JSON header plus a sibling raw payload of
//! little-endian `f32` values in row-major order.
//!
//! ```text
//! {
//!   "format": "elevation-map", "version": 1,
//!   "rows": 32, "cols": 32, "resolution_m": 1.0, "timestamp": 0.5,
//!   "pose": {"position": [x, y, z], "yaw": .., "roll": .., "pitch": ..},
//!   "byte_order": "little-endian", "dtype": "float32",
//!   "payload": "gt.bin", "invalid_cells": [[row, col], ...]
//! }
//! ```
//!
//! Values survive a round trip bit-exactly when they are `f32`-representable
//! (see [`ElevationMap::quantized`]).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ElevationMap, GridSpec, VehiclePose};
use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const MAP_FORMAT: &str = "elevation-map";
pub const BYTE_ORDER: &str = "little-endian";
pub const DTYPE: &str = "float32";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapHeader {
    pub format: String,
    pub version: u32,
    pub rows: usize,
    pub cols: usize,
    pub resolution_m: f64,
    pub timestamp: f64,
    pub pose: VehiclePose,
    pub byte_order: String,
    pub dtype: String,
    pub payload: String,
    #[serde(default)]
    pub invalid_cells: Vec<[usize; 2]>,
}

pub fn payload_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("bin")
}

pub fn encode_payload(values: &Array2<f64>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values.iter() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    bytes
}

pub fn header_for(map: &ElevationMap, payload_name: &str) -> MapHeader {
    let invalid_cells = map
        .valid
        .indexed_iter()
        .filter(|(_, &ok)| !ok)
        .map(|((r, c), _)| [r, c])
        .collect();
    MapHeader {
        format: MAP_FORMAT.to_string(),
        version: 1,
        rows: map.grid.rows,
        cols: map.grid.cols,
        resolution_m: map.grid.resolution_m,
        timestamp: map.timestamp,
        pose: map.frame_pose,
        byte_order: BYTE_ORDER.to_string(),
        dtype: DTYPE.to_string(),
        payload: payload_name.to_string(),
        invalid_cells,
    }
}

/// Writes `<stem>.json` and `<stem>.bin`; returns the payload path.
pub fn write_map(map: &ElevationMap, header_path: &Path) -> Result<PathBuf> {
    let payload = payload_path(header_path);
    let name = payload
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad map path {}", header_path.display())))?;
    let header = header_for(map, name);
    atomic_write(&payload, &encode_payload(&map.values))?;
    atomic_write(
        header_path,
        serde_json::to_string_pretty(&header)?.as_bytes(),
    )?;
    Ok(payload)
}

pub fn decode_map(header: &MapHeader, payload: &[u8]) -> Result<ElevationMap> {
    if header.format != MAP_FORMAT || header.byte_order != BYTE_ORDER || header.dtype != DTYPE {
        return Err(Error::Dataset(format!(
            "unsupported map encoding {}/{}/{}",
            header.format, header.byte_order, header.dtype
        )));
    }
    let grid = GridSpec::new(header.rows, header.cols, header.resolution_m)?;
    let expected = grid.len() * 4;
    if payload.len() != expected {
        return Err(Error::Dataset(format!(
            "map payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let values =
        Array2::from_shape_vec(grid.shape(), data).map_err(|e| Error::Dataset(e.to_string()))?;
    let mut valid = Array2::from_elem(grid.shape(), true);
    for [r, c] in &header.invalid_cells {
        if *r >= grid.rows || *c >= grid.cols {
            return Err(Error::Dataset(format!(
                "invalid cell ({r}, {c}) out of range"
            )));
        }
        valid[(*r, *c)] = false;
    }
    ElevationMap::with_mask(grid, values, valid, header.pose, header.timestamp)
}

pub fn read_map(header_path: &Path) -> Result<ElevationMap> {
    let header: MapHeader = serde_json::from_slice(&fs::read(header_path)?)?;
    let payload_file = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.payload);
    let payload = fs::read(payload_file)?;
    decode_map(&header, &payload)
}
