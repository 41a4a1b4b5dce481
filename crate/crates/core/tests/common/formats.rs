//! Loader round trips on synthetic files: raw bytes -> load -> write must
//! reproduce the original bytes.

use std::path::Path;

use rand::Rng;
use tna_snn::data::{load_cifar_binary, load_idx, write_cifar_binary, write_idx, CifarVariant, Split, IMAGE_MAGIC, LABEL_MAGIC};

use super::rng;

fn be(v: u32) -> [u8; 4] {
    v.to_be_bytes()
}

fn idx_files(n: usize, rows: usize, cols: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut r = rng(seed);
    let mut images = be(IMAGE_MAGIC).to_vec();
    for d in [n, rows, cols] {
        images.extend(be(d as u32));
    }
    images.extend((0..n * rows * cols).map(|_| r.gen::<u8>()));
    // pin the extremes so the scaling end points are exercised
    images[16] = 255;
    images[17] = 0;
    let mut labels = be(LABEL_MAGIC).to_vec();
    labels.extend(be(n as u32));
    labels.extend((0..n).map(|_| r.gen_range(0..10u8)));
    (images, labels)
}

fn cifar_file(variant: CifarVariant, n: usize, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(n * variant.record_len());
    for _ in 0..n {
        if variant == CifarVariant::Cifar100 {
            out.push(r.gen_range(0..20u8));
        }
        out.push(r.gen_range(0..variant.classes() as u8));
        out.extend((0..3 * 32 * 32).map(|_| r.gen::<u8>()));
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), String> {
    std::fs::write(path, bytes).map_err(|e| e.to_string())
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| e.to_string())
}

pub fn idx_round_trip(dir: &Path, seed: u64) -> Result<(), String> {
    let (images, labels) = idx_files(7, 5, 4, seed);
    let (ip, lp) = (dir.join("images"), dir.join("labels"));
    write(&ip, &images)?;
    write(&lp, &labels)?;
    let ds = load_idx(&ip, &lp, Split::Train).map_err(|e| e.to_string())?;
    if ds.sample(0)[0] != 1.0 || ds.sample(0)[1] != 0.0 {
        return Err(format!("byte scaling: {} {}", ds.sample(0)[0], ds.sample(0)[1]));
    }
    let (ip2, lp2) = (dir.join("images2"), dir.join("labels2"));
    write_idx(&ds, &ip2, &lp2).map_err(|e| e.to_string())?;
    if read(&ip2)? != images || read(&lp2)? != labels {
        return Err("IDX bytes differ after load and write".into());
    }
    Ok(())
}

pub fn cifar_round_trip(dir: &Path, variant: CifarVariant, seed: u64) -> Result<(), String> {
    let bytes = cifar_file(variant, 6, seed);
    let p = dir.join("batch.bin");
    write(&p, &bytes)?;
    let ds = load_cifar_binary(&[&p], variant, Split::Test).map_err(|e| e.to_string())?;
    let coarse: Option<Vec<u8>> = match variant {
        CifarVariant::Cifar10 => None,
        CifarVariant::Cifar100 => Some(bytes.chunks(variant.record_len()).map(|r| r[0]).collect()),
    };
    for (i, rec) in bytes.chunks(variant.record_len()).enumerate() {
        let fine = rec[usize::from(variant == CifarVariant::Cifar100)] as usize;
        if ds.labels[i] != fine {
            return Err(format!("record {i}: label {} expected {fine}", ds.labels[i]));
        }
    }
    let p2 = dir.join("batch2.bin");
    write_cifar_binary(&ds, &p2, variant, coarse.as_deref()).map_err(|e| e.to_string())?;
    if read(&p2)? != bytes {
        return Err(format!("{variant:?} bytes differ after load and write"));
    }
    Ok(())
}

/// Both IDX files with a corrupted magic must be refused with a message that
/// names the bad value.
pub fn idx_rejects_bad_magic(dir: &Path) -> Result<(), String> {
    let (images, labels) = idx_files(2, 3, 3, 0);
    let (ip, lp) = (dir.join("bad_images"), dir.join("bad_labels"));
    let mut bad = images.clone();
    bad[3] = 0x01;
    write(&ip, &bad)?;
    write(&lp, &labels)?;
    match load_idx(&ip, &lp, Split::Train) {
        Ok(_) => return Err("corrupted image magic accepted".into()),
        Err(e) if !e.to_string().contains("0x00000801") => return Err(format!("unhelpful error: {e}")),
        Err(_) => {}
    }
    write(&ip, &images)?;
    write(&lp, &images[..8])?;
    if load_idx(&ip, &lp, Split::Train).is_ok() {
        return Err("image magic accepted in label file".into());
    }
    Ok(())
}

pub fn all(dir: &Path, seed: u64) -> Result<(), String> {
    idx_round_trip(dir, seed)?;
    cifar_round_trip(dir, CifarVariant::Cifar10, seed)?;
    cifar_round_trip(dir, CifarVariant::Cifar100, seed)?;
    idx_rejects_bad_magic(dir)
}
