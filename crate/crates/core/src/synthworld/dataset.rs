//! Dataset directories.
//!
//! ```text
//! <dir>/manifest.json        sequence spec, rig reference, per-frame checksums
//! <dir>/rig.json             camera rig (see `camera::RigFile`)
//! <dir>/frames/000007/
//!     front.png left.png right.png   8-bit RGB
//!     pose.json                      {"index", "timestamp", "pose"}
//!     gt.json gt.bin                 elevation map (see `mapspace::io`)
//! ```
//!
//! Checksums are SHA-256 over the raw file bytes. A directory is written to a
//! temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FrameSample, Sequence, SequenceSpec};
use crate::camera::CameraRig;
use crate::error::{Error, Result};
use crate::mapspace::io::{decode_map, encode_payload, header_for, read_map, MapHeader};
use crate::mapspace::{ElevationMap, VehiclePose};
use crate::util::sha256_hex;

pub const DATASET_FORMAT: &str = "elevnet-dataset";
pub const MANIFEST: &str = "manifest.json";
pub const RIG_FILE: &str = "rig.json";
const VIEW_FILES: [&str; 3] = ["front.png", "left.png", "right.png"];
const POSE_FILE: &str = "pose.json";
const MAP_HEADER: &str = "gt.json";
const MAP_PAYLOAD: &str = "gt.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub rig_file: String,
    pub spec: SequenceSpec,
    pub frame_count: usize,
    pub frames: Vec<FrameEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub timestamp: f64,
    pub dir: String,
    /// File name to SHA-256 hex digest.
    pub sha256: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub index: usize,
    pub timestamp: f64,
    pub pose: VehiclePose,
}

fn encode_png(img: &image::RgbImage) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )?;
    Ok(bytes)
}

fn frame_files(sample: &FrameSample) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut files = Vec::with_capacity(6);
    for (name, img) in VIEW_FILES.iter().zip(sample.images.iter()) {
        files.push((*name, encode_png(img)?));
    }
    let pose = PoseRecord {
        index: sample.index,
        timestamp: sample.timestamp,
        pose: sample.pose,
    };
    files.push((POSE_FILE, serde_json::to_vec_pretty(&pose)?));
    let header = header_for(&sample.gt_map, MAP_PAYLOAD);
    files.push((MAP_HEADER, serde_json::to_vec_pretty(&header)?));
    files.push((MAP_PAYLOAD, encode_payload(&sample.gt_map.values)));
    Ok(files)
}

/// Writes the sequence to `directory`, which must not exist or be empty.
pub fn write_dataset(seq: &Sequence, directory: &Path) -> Result<()> {
    if directory.exists() && fs::read_dir(directory)?.next().is_some() {
        return Err(Error::Dataset(format!(
            "refusing to overwrite non-empty directory {}",
            directory.display()
        )));
    }
    let parent = match directory.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let staging = tempfile::Builder::new()
        .prefix(".dataset-")
        .tempdir_in(&parent)?;
    let root = staging.path();

    let mut frames = Vec::with_capacity(seq.samples.len());
    for sample in &seq.samples {
        let rel = format!("frames/{:06}", sample.index);
        let dir = root.join(&rel);
        fs::create_dir_all(&dir)?;
        let mut sha256 = BTreeMap::new();
        for (name, bytes) in frame_files(sample)? {
            fs::write(dir.join(name), &bytes)?;
            sha256.insert(name.to_string(), sha256_hex(&bytes));
        }
        frames.push(FrameEntry {
            index: sample.index,
            timestamp: sample.timestamp,
            dir: rel,
            sha256,
        });
    }
    seq.rig.save(&root.join(RIG_FILE))?;
    let manifest = Manifest {
        format: DATASET_FORMAT.to_string(),
        version: 1,
        rig_file: RIG_FILE.to_string(),
        spec: seq.spec.clone(),
        frame_count: frames.len(),
        frames,
    };
    fs::write(root.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;

    if directory.exists() {
        fs::remove_dir(directory)?;
    }
    let staged = staging.keep();
    fs::rename(&staged, directory)?;
    Ok(())
}

fn frame_err(frame: usize, message: impl Into<String>) -> Error {
    Error::Frame {
        frame,
        message: message.into(),
    }
}

fn read_frame(root: &Path, entry: &FrameEntry, spec: &SequenceSpec) -> Result<FrameSample> {
    let idx = entry.index;
    let dir = root.join(&entry.dir);
    let mut contents = BTreeMap::new();
    for name in VIEW_FILES
        .iter()
        .chain([POSE_FILE, MAP_HEADER, MAP_PAYLOAD].iter())
    {
        let path = dir.join(name);
        let bytes =
            fs::read(&path).map_err(|e| frame_err(idx, format!("cannot read {name}: {e}")))?;
        let expected = entry
            .sha256
            .get(*name)
            .ok_or_else(|| frame_err(idx, format!("manifest has no checksum for {name}")))?;
        if &sha256_hex(&bytes) != expected {
            return Err(frame_err(idx, format!("checksum mismatch for {name}")));
        }
        contents.insert(*name, bytes);
    }
    let mut images = Vec::with_capacity(3);
    for name in VIEW_FILES {
        let img = image::load_from_memory_with_format(&contents[name], image::ImageFormat::Png)
            .map_err(|e| frame_err(idx, format!("bad image {name}: {e}")))?
            .to_rgb8();
        if img.dimensions() != (spec.image_size as u32, spec.image_size as u32) {
            return Err(frame_err(
                idx,
                format!("{name} has size {:?}", img.dimensions()),
            ));
        }
        images.push(img);
    }
    let pose: PoseRecord = serde_json::from_slice(&contents[POSE_FILE])
        .map_err(|e| frame_err(idx, format!("bad pose record: {e}")))?;
    let header: MapHeader = serde_json::from_slice(&contents[MAP_HEADER])
        .map_err(|e| frame_err(idx, format!("bad map header: {e}")))?;
    let gt_map =
        decode_map(&header, &contents[MAP_PAYLOAD]).map_err(|e| frame_err(idx, e.to_string()))?;
    if gt_map.grid != spec.grid {
        return Err(frame_err(idx, "map grid differs from manifest grid"));
    }
    let right = images.pop().unwrap();
    let left = images.pop().unwrap();
    let front = images.pop().unwrap();
    Ok(FrameSample {
        index: pose.index,
        timestamp: pose.timestamp,
        pose: pose.pose,
        images: [front, left, right],
        gt_map,
    })
}

/// One frame directory read without manifest checks: the three views, the
/// pose record, and the ground-truth map when present.
pub fn load_frame_dir(
    dir: &Path,
) -> Result<([image::RgbImage; 3], PoseRecord, Option<ElevationMap>)> {
    let mut images = Vec::with_capacity(3);
    for name in VIEW_FILES {
        let img = image::open(dir.join(name))
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.join(name).display())))?
            .to_rgb8();
        images.push(img);
    }
    let pose_path = dir.join(POSE_FILE);
    let pose: PoseRecord = serde_json::from_slice(
        &fs::read(&pose_path)
            .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", pose_path.display())))?,
    )
    .map_err(|e| Error::Dataset(format!("bad pose record: {e}")))?;
    let gt_path = dir.join(MAP_HEADER);
    let gt = if gt_path.exists() {
        Some(read_map(&gt_path)?)
    } else {
        None
    };
    let [front, left, right]: [image::RgbImage; 3] = images.try_into().unwrap();
    Ok(([front, left, right], pose, gt))
}

pub fn read_manifest(directory: &Path) -> Result<Manifest> {
    let path = directory.join(MANIFEST);
    let bytes = fs::read(&path)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Dataset(format!("malformed manifest: {e}")))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Dataset(format!(
            "unknown dataset format `{}`",
            manifest.format
        )));
    }
    if manifest.frame_count != manifest.frames.len() {
        return Err(Error::Dataset(format!(
            "manifest lists {} frames but frame_count is {}",
            manifest.frames.len(),
            manifest.frame_count
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(directory: &Path) -> Result<Sequence> {
    let manifest = read_manifest(directory)?;
    let rig = CameraRig::load(&directory.join(&manifest.rig_file))?;
    let samples = manifest
        .frames
        .iter()
        .map(|entry| read_frame(directory, entry, &manifest.spec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        spec: manifest.spec,
        rig,
        samples,
    })
}
