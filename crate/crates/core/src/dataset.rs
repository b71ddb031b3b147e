//! On-disk dataset format.
//!
//! ```text
//! <root>/index.json              sequence directories and split
//! <root>/<seq>/manifest.json     intrinsics, extrinsics, file names
//! <root>/<seq>/frame_000.bin     little-endian f32 points, N×3
//! <root>/<seq>/frame_000.pgm     8-bit grayscale image
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraModel, PointCloud, RigidTransform};
use crate::scenesim::{Frame, FrameSequence, GrayImage};

pub const FORMAT_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: corrupt manifest: {detail}")]
    CorruptManifest { path: PathBuf, detail: String },
    #[error("{path}: expected {expected} bytes, found {found}")]
    SizeMismatch { path: PathBuf, expected: u64, found: u64 },
    #[error("{path}: format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("{path} already exists")]
    Exists { path: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    t_lc: RigidTransform,
    t_init: RigidTransform,
    distance: f64,
    points_file: String,
    image_file: String,
    num_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    frames_per_sequence: usize,
    camera: CameraModel,
    delta: RigidTransform,
    frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub dir: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub version: u32,
    pub seed: u64,
    pub sequences: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn dirs(&self, split: Split) -> impl Iterator<Item = &str> {
        self.sequences.iter().filter(move |e| e.split == split).map(|e| e.dir.as_str())
    }
}

/// 80/10/10 split by position: the last 10% of sequences are test, the
/// 10% before them validation. Small counts keep at least one training
/// sequence.
pub fn split_for(index: usize, count: usize) -> Split {
    let n_test = count / 10;
    let n_val = count / 10;
    if index >= count - n_test {
        Split::Test
    } else if index >= count - n_test - n_val {
        Split::Val
    } else {
        Split::Train
    }
}

pub fn sequence_dir_name(index: usize) -> String {
    format!("seq_{index:05}")
}

fn write_points(path: &Path, cloud: &PointCloud) -> Result<(), DatasetError> {
    let mut bytes = Vec::with_capacity(cloud.len() * 12);
    for p in &cloud.points {
        for c in [p.x, p.y, p.z] {
            bytes.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_points(path: &Path, expected: usize) -> Result<PointCloud, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let want = expected as u64 * 12;
    if bytes.len() as u64 != want {
        return Err(DatasetError::SizeMismatch {
            path: path.to_path_buf(),
            expected: want,
            found: bytes.len() as u64,
        });
    }
    let f = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    let points = bytes
        .chunks_exact(12)
        .map(|c| Vector3::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12])))
        .collect();
    PointCloud::new(points).map_err(|e| DatasetError::CorruptManifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn write_image(path: &Path, img: &GrayImage) -> Result<(), DatasetError> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .expect("image buffer matches its dimensions");
    buf.save_with_format(path, image::ImageFormat::Pnm).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

pub fn read_image(path: &Path) -> Result<GrayImage, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm).map_err(|e| DatasetError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let gray = img.into_luma8();
    Ok(GrayImage {
        width: gray.width() as usize,
        height: gray.height() as usize,
        data: gray.into_raw(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(value).expect("dataset records serialize");
    fs::write(path, text).map_err(io_err(path))
}

/// Parses JSON, checking the `version` field before the rest of the schema
/// so an unknown version is reported as such.
fn read_versioned<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let corrupt = |detail: String| DatasetError::CorruptManifest {
        path: path.to_path_buf(),
        detail,
    };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("missing version".into()))?;
    if version != FORMAT_VERSION as u64 {
        return Err(DatasetError::Version {
            path: path.to_path_buf(),
            found: version.min(u32::MAX as u64) as u32,
        });
    }
    serde_json::from_value(raw).map_err(|e| corrupt(e.to_string()))
}

pub fn write_sequence(dir: &Path, seq: &FrameSequence) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut records = Vec::with_capacity(seq.len());
    for (i, frame) in seq.frames.iter().enumerate() {
        let points_file = format!("frame_{i:03}.bin");
        let image_file = format!("frame_{i:03}.pgm");
        write_points(&dir.join(&points_file), &frame.points)?;
        write_image(&dir.join(&image_file), &frame.image)?;
        records.push(FrameRecord {
            t_lc: frame.t_lc,
            t_init: frame.t_init,
            distance: frame.distance,
            points_file,
            image_file,
            num_points: frame.points.len(),
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        frames_per_sequence: seq.len(),
        camera: seq.camera,
        delta: seq.delta,
        frames: records,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_sequence(dir: &Path) -> Result<FrameSequence, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let m: Manifest = read_versioned(&path)?;
    let corrupt = |detail: String| DatasetError::CorruptManifest {
        path: path.clone(),
        detail,
    };
    if m.frames.len() != m.frames_per_sequence {
        return Err(corrupt(format!(
            "{} frame records for a sequence of {}",
            m.frames.len(),
            m.frames_per_sequence
        )));
    }
    m.camera.validate().map_err(|e| corrupt(e.to_string()))?;
    let mut frames = Vec::with_capacity(m.frames.len());
    for rec in m.frames {
        let image_path = dir.join(&rec.image_file);
        let image = read_image(&image_path)?;
        if (image.width, image.height) != (m.camera.width, m.camera.height) {
            return Err(DatasetError::SizeMismatch {
                path: image_path,
                expected: (m.camera.width * m.camera.height) as u64,
                found: (image.width * image.height) as u64,
            });
        }
        frames.push(Frame {
            points: read_points(&dir.join(&rec.points_file), rec.num_points)?,
            image,
            t_lc: rec.t_lc,
            t_init: rec.t_init,
            distance: rec.distance,
        });
    }
    Ok(FrameSequence {
        camera: m.camera,
        delta: m.delta,
        frames,
    })
}

pub fn write_index(root: &Path, index: &DatasetIndex) -> Result<(), DatasetError> {
    write_json(&root.join(INDEX_FILE), index)
}

pub fn read_index(root: &Path) -> Result<DatasetIndex, DatasetError> {
    read_versioned(&root.join(INDEX_FILE))
}

/// Writes sequences under `root` with the default split. Refuses to touch
/// an existing index unless `overwrite` is set.
pub fn write_dataset(root: &Path, seqs: &[FrameSequence], seed: u64, overwrite: bool) -> Result<DatasetIndex, DatasetError> {
    let index_path = root.join(INDEX_FILE);
    if index_path.exists() && !overwrite {
        return Err(DatasetError::Exists { path: index_path });
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut entries = Vec::with_capacity(seqs.len());
    for (i, seq) in seqs.iter().enumerate() {
        let dir = sequence_dir_name(i);
        write_sequence(&root.join(&dir), seq)?;
        entries.push(IndexEntry {
            dir,
            split: split_for(i, seqs.len()),
        });
    }
    let index = DatasetIndex {
        version: FORMAT_VERSION,
        seed,
        sequences: entries,
    };
    write_index(root, &index)?;
    Ok(index)
}

/// Reads every sequence listed in the index, in index order.
pub fn read_dataset(root: &Path) -> Result<(DatasetIndex, Vec<FrameSequence>), DatasetError> {
    let index = read_index(root)?;
    let seqs = index
        .sequences
        .iter()
        .map(|e| read_sequence(&root.join(&e.dir)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((index, seqs))
}

/// Reads the sequences of one split.
pub fn read_split(root: &Path, split: Split) -> Result<Vec<FrameSequence>, DatasetError> {
    let index = read_index(root)?;
    index.dirs(split).map(|d| read_sequence(&root.join(d))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_eighty_ten_ten() {
        let splits: Vec<_> = (0..100).map(|i| split_for(i, 100)).collect();
        assert_eq!(splits.iter().filter(|&&s| s == Split::Train).count(), 80);
        assert_eq!(splits.iter().filter(|&&s| s == Split::Val).count(), 10);
        assert_eq!(splits.iter().filter(|&&s| s == Split::Test).count(), 10);
        assert!((0..5).all(|i| split_for(i, 5) == Split::Train));
    }
}
