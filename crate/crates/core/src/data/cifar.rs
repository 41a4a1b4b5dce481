use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, write_file, DataError, Dataset, Split};
use crate::snn::InputShape;

const PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    /// One label byte per record.
    Cifar10,
    /// Coarse then fine label byte per record; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    /// File names under a dataset root, as shipped in the binary archives.
    pub fn files(self, split: Split) -> Vec<PathBuf> {
        match (self, split) {
            (CifarVariant::Cifar10, Split::Train) => {
                (1..=5).map(|i| PathBuf::from(format!("data_batch_{i}.bin"))).collect()
            }
            (CifarVariant::Cifar10, Split::Test) => vec![PathBuf::from("test_batch.bin")],
            (CifarVariant::Cifar100, Split::Train) => vec![PathBuf::from("train.bin")],
            (CifarVariant::Cifar100, Split::Test) => vec![PathBuf::from("test.bin")],
        }
    }
}

/// Concatenates the records of every file in `paths`. Pixels are stored
/// channel-planar (all red, then green, then blue) and scaled to `[0, 1]`.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], variant: CifarVariant, split: Split) -> Result<Dataset, DataError> {
    let record = variant.record_len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(DataError::format(
                path,
                format!("length {} is not a multiple of the {record}-byte record size", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(record) {
            let label = rec[variant.label_bytes() - 1] as usize;
            if label >= variant.classes() {
                return Err(DataError::format(path, format!("label {label} out of range")));
            }
            labels.push(label);
            data.extend(rec[variant.label_bytes()..].iter().map(|&b| f32::from(b) / 255.0));
        }
    }
    let name = match variant {
        CifarVariant::Cifar10 => "cifar10",
        CifarVariant::Cifar100 => "cifar100",
    };
    Dataset::new(name, split, InputShape::new(3, 32, 32), None, data, labels, variant.classes())
}

/// Writes a dataset as one binary batch file. `coarse` supplies the first
/// label byte for CIFAR-100 records.
pub fn write_cifar_binary(ds: &Dataset, path: &Path, variant: CifarVariant, coarse: Option<&[u8]>) -> Result<(), DataError> {
    if ds.shape != InputShape::new(3, 32, 32) || ds.timesteps.is_some() {
        return Err(DataError::Config("CIFAR records hold 3×32×32 static images".into()));
    }
    let mut out = Vec::with_capacity(ds.len() * variant.record_len());
    for i in 0..ds.len() {
        if variant == CifarVariant::Cifar100 {
            out.push(coarse.map_or(0, |c| c[i]));
        }
        out.push(ds.labels[i] as u8);
        out.extend(ds.sample(i).iter().map(|&p| super::to_byte(p)));
    }
    write_file(path, &out)
}
