use std::path::Path;

use super::{read_file, write_file, DataError, Dataset, Split};
use crate::snn::InputShape;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| DataError::format(path, format!("truncated header (file is {} bytes)", bytes.len())))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(DataError::format(
            path,
            format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"),
        ));
    }
    Ok(())
}

fn body<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8], DataError> {
    let end = offset + len;
    if bytes.len() < end {
        return Err(DataError::format(
            path,
            format!("truncated: header promises {end} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > end {
        return Err(DataError::format(path, format!("{} trailing bytes after payload", bytes.len() - end)));
    }
    Ok(&bytes[offset..end])
}

/// Reads a rank-3 image file and its label file. Pixels become `byte / 255`.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset, DataError> {
    let images = read_file(images_path)?;
    check_magic(&images, IMAGE_MAGIC, images_path)?;
    let n = be_u32(&images, 4, images_path)? as usize;
    let rows = be_u32(&images, 8, images_path)? as usize;
    let cols = be_u32(&images, 12, images_path)? as usize;
    let pixels = body(&images, 16, n * rows * cols, images_path)?;

    let labels = read_file(labels_path)?;
    check_magic(&labels, LABEL_MAGIC, labels_path)?;
    let n_labels = be_u32(&labels, 4, labels_path)? as usize;
    let label_bytes = body(&labels, 8, n_labels, labels_path)?;
    if n_labels != n {
        return Err(DataError::format(
            labels_path,
            format!("{n_labels} labels for {n} images in {}", images_path.display()),
        ));
    }
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(
        "idx",
        split,
        InputShape::new(1, rows, cols),
        None,
        pixels.iter().map(|&b| f32::from(b) / 255.0).collect(),
        labels,
        classes,
    )
}

/// Writes a single-channel dataset as an IDX image/label pair. Pixels are
/// stored as `round(p * 255)`.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<(), DataError> {
    if ds.shape.channels != 1 || ds.timesteps.is_some() {
        return Err(DataError::Config("IDX holds single-channel static images only".into()));
    }
    let mut images = Vec::with_capacity(16 + ds.data.len());
    images.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [ds.len(), ds.shape.height, ds.shape.width] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    images.extend(ds.data.iter().map(|&p| super::to_byte(p)));
    write_file(images_path, &images)?;

    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels.iter().map(|&l| l as u8));
    write_file(labels_path, &labels)
}
