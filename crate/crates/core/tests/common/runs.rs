//! End-to-end helpers around the experiment pipeline.

use std::path::Path;

use tna_snn::experiment::{run_train, Checkpoint, CheckpointMeta, Dtype, ExperimentConfig, RunOptions};
use tna_snn::quant::{activate_compression, TernaryPolicy};
use tna_snn::snn::{kaiming_init, BuildOptions, InputShape, NetworkSpec, CIFARNET};
use tna_snn::data::Normalization;
use tna_snn::training::{OptimizerState, TrainMode};

use super::fixture_root;

/// Fashion fixture run with a small batch so a few epochs take seconds.
pub fn fashion_config(architecture: &str, epochs: usize, extra: &[&str]) -> ExperimentConfig {
    let mut overrides: Vec<String> = [
        "data.dataset=fashion_mnist".to_string(),
        "data.augment=false".into(),
        format!("model.architecture={architecture}"),
        format!("train.epochs={epochs}"),
        "train.batch_size=128".into(),
        "train.alpha_match=0.3".into(),
    ]
    .into();
    overrides.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::from_toml("", &overrides).unwrap()
}

pub fn fixture_options(out_dir: &Path) -> RunOptions {
    RunOptions { data_root: Some(fixture_root()), out_dir: out_dir.to_path_buf() }
}

/// Two runs of the same configuration must write byte-identical metrics.
pub fn metrics_reproducible(cfg: &ExperimentConfig, dir: &Path) -> Result<(), String> {
    let mut files = Vec::new();
    for run in ["first", "second"] {
        let out = dir.join(run);
        run_train(cfg, &fixture_options(&out)).map_err(|e| e.to_string())?;
        files.push(std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    if files[0] != files[1] {
        return Err("metrics.csv differs between identical runs".into());
    }
    let text = String::from_utf8_lossy(&files[0]);
    if text.lines().count() != cfg.train.epochs + 1 {
        return Err(format!("expected {} metric rows", cfg.train.epochs));
    }
    Ok(())
}

/// Serialize, parse and re-serialize a compressed image-model checkpoint;
/// also measures the packed size of the compressed layers.
pub fn checkpoint_round_trip(dir: &Path) -> Result<(), String> {
    let spec = NetworkSpec::from_architecture(CIFARNET, InputShape::new(3, 32, 32), 10, 5, &BuildOptions::default())
        .map_err(|e| e.to_string())?;
    let params = kaiming_init::<f32>(&spec, 3);
    let policy = TernaryPolicy { start_epoch: 0, ..Default::default() };
    let state = activate_compression(&params, &policy, 0).map_err(|e| e.to_string())?.ok_or("not activated")?;
    let meta = CheckpointMeta {
        spec: spec.clone(),
        normalization: Normalization::cifar(),
        dataset: "cifar10".into(),
        mode: TrainMode::Tna,
        role: "base".into(),
    };
    let opt = OptimizerState::new(&params, 0.01);
    let ck = Checkpoint::from_model(&meta, [7; 32], 12, &params, Some(&state), Some(&opt));
    let bytes = ck.to_bytes().map_err(|e| e.to_string())?;
    let path = dir.join("round_trip.ckpt");
    ck.save(&path).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    if loaded.to_bytes().map_err(|e| e.to_string())? != bytes {
        return Err("checkpoint bytes changed across save and load".into());
    }
    if loaded.params().map_err(|e| e.to_string())? != state.deployed_params(&params) {
        return Err("loaded weights differ from the deployed weights".into());
    }

    let (mut packed, mut full) = (0usize, 0usize);
    for (k, e) in loaded.entries.iter().filter(|e| e.name.ends_with(".weight")).enumerate() {
        let expected = if state.is_compressed(k) { Dtype::Ternary2Bit } else { Dtype::F32 };
        if e.dtype != expected {
            return Err(format!("{} stored as {}", e.name, e.dtype.as_str()));
        }
        if state.is_compressed(k) {
            packed += e.payload().map_err(|e| e.to_string())?.len();
            full += e.values.len() * 4;
        }
    }
    if packed * 12 > full {
        return Err(format!("compressed layers take {packed} bytes against {full} in f32"));
    }

    let mut corrupt = bytes.clone();
    corrupt[0] ^= 0xff;
    if Checkpoint::from_bytes(&corrupt).is_ok() || Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_ok() {
        return Err("corrupted checkpoint accepted".into());
    }
    Ok(())
}
