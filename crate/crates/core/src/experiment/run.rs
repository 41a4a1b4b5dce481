use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::{DatasetKind, ExperimentConfig};
use super::ExperimentError;
use crate::data::{
    load_cifar_binary, load_idx, split_validation, synthetic_spikes, CifarVariant, Dataset, Normalization, Split,
};
use crate::snn::NetworkSpec;
use crate::training::{evaluate, EvalReport, MetricsRecord, TrainError, TrainMode, TrainObserver, Trainer};

pub const DEFAULT_SWEEP_ALPHAS: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// Where data comes from and where artifacts go.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides `data.root` from the config.
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(path).map_err(|e| ExperimentError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

fn data_root(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf, ExperimentError> {
    opts.data_root
        .clone()
        .or_else(|| cfg.data.root.as_ref().map(PathBuf::from))
        .ok_or_else(|| ExperimentError::Config {
            field: "data.root".into(),
            msg: format!("{} needs a dataset directory (--data-root or DATA_ROOT)", cfg.data.dataset.as_str()),
        })
}

/// Loads one split of the configured dataset.
pub fn load_split(cfg: &ExperimentConfig, opts: &RunOptions, split: Split) -> Result<Dataset, ExperimentError> {
    let d = &cfg.data;
    let ds = match d.dataset {
        DatasetKind::Synthetic => {
            let (n, seed) = match split {
                Split::Train => (d.synthetic_train, cfg.seeds.data),
                Split::Test => (d.synthetic_test, cfg.seeds.data.wrapping_add(1)),
            };
            let mut ds = synthetic_spikes(d.synthetic_classes, cfg.model.timesteps, cfg.input_shape(), n, seed)?;
            ds.split = split;
            ds
        }
        DatasetKind::FashionMnist => {
            let root = data_root(cfg, opts)?;
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            let mut ds = load_idx(
                &root.join(format!("{prefix}-images-idx3-ubyte")),
                &root.join(format!("{prefix}-labels-idx1-ubyte")),
                split,
            )?;
            ds.name = "fashion_mnist".into();
            ds
        }
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
            let root = data_root(cfg, opts)?;
            let variant = if d.dataset == DatasetKind::Cifar10 { CifarVariant::Cifar10 } else { CifarVariant::Cifar100 };
            let paths: Vec<PathBuf> = variant.files(split).into_iter().map(|f| root.join(f)).collect();
            load_cifar_binary(&paths, variant, split)?
        }
    };
    if ds.shape != cfg.input_shape() {
        return Err(ExperimentError::Format(format!(
            "{} samples are {:?}, expected {:?}",
            ds.name,
            ds.shape,
            cfg.input_shape()
        )));
    }
    Ok(ds)
}

fn normalization(cfg: &ExperimentConfig, train: &Dataset) -> Normalization {
    match cfg.data.dataset {
        DatasetKind::Cifar10 | DatasetKind::Cifar100 => Normalization::cifar(),
        DatasetKind::FashionMnist => Normalization::from_dataset(train),
        DatasetKind::Synthetic => Normalization::identity(train.shape.channels),
    }
}

/// Header of `metrics.csv` for a configuration.
pub fn metrics_header(cfg: &ExperimentConfig) -> String {
    let mut cols = vec!["epoch".to_string(), "lr".into(), "loss_total".into(), "ce_base".into()];
    let aux = |k: usize| if k == 1 { "twin".to_string() } else { format!("twin{k}") };
    let n = cfg.train_config().trainable_networks();
    if cfg.train.mode.uses_teacher() {
        cols.push("ce_teacher".into());
    }
    cols.extend((1..n).map(|k| format!("ce_{}", aux(k))));
    cols.push("match_loss".into());
    cols.push("acc_train_base".into());
    cols.push("acc_val_base".into());
    cols.extend((1..n).map(|k| format!("acc_val_{}", aux(k))));
    cols.push("ternary_active".into());
    cols.join(",")
}

fn metrics_row(r: &MetricsRecord, networks: usize) -> String {
    let mut cells = vec![r.epoch.to_string(), r.lr.to_string(), r.loss_total.to_string()];
    cells.extend(r.ce.iter().map(f64::to_string));
    cells.push(r.match_loss.to_string());
    cells.push(r.acc_train_base.to_string());
    if r.acc_val.is_empty() {
        cells.extend(std::iter::repeat_n("nan".to_string(), networks));
    } else {
        cells.extend(r.acc_val.iter().map(f64::to_string));
    }
    cells.push(u8::from(r.ternary_active).to_string());
    cells.join(",")
}

struct ArtifactWriter {
    out_dir: PathBuf,
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
    meta: CheckpointMeta,
    digest: [u8; 32],
    best_acc: f64,
    networks: usize,
}

impl ArtifactWriter {
    fn write(&mut self, trainer: &Trainer, record: &MetricsRecord) -> Result<(), ExperimentError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e| ExperimentError::io(&path, e)
        };
        writeln!(self.metrics, "{}", metrics_row(record, self.networks)).map_err(io(&self.out_dir.join("metrics.csv")))?;
        self.metrics.flush().map_err(io(&self.out_dir.join("metrics.csv")))?;
        writeln!(self.timing, "{},{}", record.epoch, record.wall_seconds).map_err(io(&self.out_dir.join("timing.csv")))?;
        self.timing.flush().map_err(io(&self.out_dir.join("timing.csv")))?;

        let base = trainer.base();
        let epoch = record.epoch as u64;
        Checkpoint::from_model(
            &self.meta,
            self.digest,
            epoch,
            &base.params,
            base.compression.as_ref(),
            Some(&base.optimizer),
        )
        .save(&self.out_dir.join("last.ckpt"))?;
        if let Some(&acc) = record.acc_val.first() {
            if acc > self.best_acc {
                self.best_acc = acc;
                Checkpoint::from_model(&self.meta, self.digest, epoch, &base.params, base.compression.as_ref(), None)
                    .save(&self.out_dir.join("best.ckpt"))?;
            }
        }
        Ok(())
    }
}

impl TrainObserver for ArtifactWriter {
    fn on_epoch(&mut self, trainer: &Trainer, record: &MetricsRecord) -> Result<(), TrainError> {
        self.write(trainer, record).map_err(|e| TrainError::Observer(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs_completed: usize,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub final_val_accuracy: Option<f64>,
    pub test_accuracy: f64,
    pub config_digest: String,
    #[serde(skip)]
    pub history: Vec<MetricsRecord>,
}

/// Trains per `cfg` and writes into `opts.out_dir`:
/// `config.snapshot`, `metrics.csv`, `timing.csv`, `best.ckpt`,
/// `final.ckpt` (base network only) and `summary.json`. `last.ckpt` is
/// updated every epoch and left in place if training aborts.
pub fn run_train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<TrainSummary, ExperimentError> {
    cfg.validate()?;
    let spec = cfg.network_spec().map_err(|e| ExperimentError::Config {
        field: "model.architecture".into(),
        msg: e.to_string(),
    })?;
    let teacher = match &cfg.train.teacher {
        Some(path) => {
            let ck = Checkpoint::load(Path::new(path))?;
            check_compatible(&ck.meta()?.spec, &spec)?;
            Some(ck.params()?)
        }
        None => None,
    };
    let full_train = load_split(cfg, opts, Split::Train)?;
    let test = load_split(cfg, opts, Split::Test)?;
    let (train, val) = split_validation(&full_train, cfg.data.validation_fraction, cfg.seeds.data)?;
    let val = (!val.is_empty()).then_some(val);
    let norm = normalization(cfg, &train);

    create_dir(&opts.out_dir)?;
    write_text(&opts.out_dir.join("config.snapshot"), &cfg.snapshot())?;
    let digest = cfg.digest();
    let meta = CheckpointMeta {
        spec: spec.clone(),
        normalization: norm.clone(),
        dataset: cfg.data.dataset.as_str().into(),
        mode: cfg.train.mode,
        role: "base".into(),
    };
    let open = |name: &str, header: &str| -> Result<BufWriter<File>, ExperimentError> {
        let path = opts.out_dir.join(name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| ExperimentError::io(&path, e))?);
        writeln!(w, "{header}").map_err(|e| ExperimentError::io(&path, e))?;
        Ok(w)
    };
    let mut writer = ArtifactWriter {
        out_dir: opts.out_dir.clone(),
        metrics: open("metrics.csv", &metrics_header(cfg))?,
        timing: open("timing.csv", "epoch,wall_seconds")?,
        meta: meta.clone(),
        digest,
        best_acc: f64::NEG_INFINITY,
        networks: cfg.train_config().trainable_networks(),
    };

    let mut trainer = Trainer::new(spec.clone(), cfg.train_config(), teacher)?;
    let outcome = trainer.fit(&train, val.as_ref(), &norm, &mut writer).map_err(|e| {
        if matches!(e, TrainError::Diverged { .. } | TrainError::NonFiniteGradient { .. }) {
            log::error!("training aborted; last good checkpoint kept at {}", opts.out_dir.join("last.ckpt").display());
        }
        ExperimentError::Train(e)
    })?;

    let base = trainer.base();
    let last_epoch = outcome.history.last().map_or(0, |r| r.epoch as u64);
    Checkpoint::from_model(&meta, digest, last_epoch, &base.params, base.compression.as_ref(), None)
        .save(&opts.out_dir.join("final.ckpt"))?;
    let last = opts.out_dir.join("last.ckpt");
    std::fs::remove_file(&last).map_err(|e| ExperimentError::io(&last, e))?;
    if val.is_none() {
        // without validation every epoch ties; the final model is the best one
        std::fs::copy(opts.out_dir.join("final.ckpt"), opts.out_dir.join("best.ckpt"))
            .map_err(|e| ExperimentError::io(&opts.out_dir.join("best.ckpt"), e))?;
    }

    let report = evaluate(&spec, &base.deployed(), &test, &norm, cfg.train.eval_batch_size)?;
    let summary = TrainSummary {
        epochs_completed: outcome.history.len(),
        best_epoch: outcome.best_epoch,
        best_val_accuracy: outcome.best_epoch.and_then(|e| outcome.history[e].acc_val.first().copied()),
        final_val_accuracy: outcome.history.last().and_then(|r| r.acc_val.first().copied()),
        test_accuracy: report.accuracy,
        config_digest: hex(&digest),
        history: outcome.history,
    };
    write_text(
        &opts.out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(summary)
}

fn check_compatible(found: &NetworkSpec, expected: &NetworkSpec) -> Result<(), ExperimentError> {
    if found.input != expected.input {
        return Err(ExperimentError::ArchitectureMismatch(format!(
            "checkpoint expects input {:?}, dataset provides {:?}",
            found.input, expected.input
        )));
    }
    if found.classes() != expected.classes() {
        return Err(ExperimentError::ArchitectureMismatch(format!(
            "checkpoint has {} output classes, dataset has {}",
            found.classes(),
            expected.classes()
        )));
    }
    if found.layers != expected.layers {
        return Err(ExperimentError::ArchitectureMismatch(
            "checkpoint layer stack differs from the configured architecture".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalOutput {
    pub checkpoint: String,
    pub split: Split,
    pub parameter_sets: usize,
    /// `(entry name, dtype)` for every stored weight.
    pub dtypes: Vec<(String, String)>,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Evaluates a checkpoint on one split of the configured dataset and writes
/// `eval.json` into `opts.out_dir`. Only the dataset settings of `cfg` are
/// used; the network comes from the checkpoint.
pub fn run_eval(checkpoint: &Path, cfg: &ExperimentConfig, opts: &RunOptions, split: Split) -> Result<EvalOutput, ExperimentError> {
    let ck = Checkpoint::load(checkpoint)?;
    let meta = ck.meta()?;
    let ds = load_split(cfg, opts, split).map_err(|e| match e {
        ExperimentError::Format(msg) => ExperimentError::ArchitectureMismatch(msg),
        other => other,
    })?;
    let spec = meta.spec;
    if spec.input != ds.shape {
        return Err(ExperimentError::ArchitectureMismatch(format!(
            "checkpoint expects input {:?}, {} provides {:?}",
            spec.input, ds.name, ds.shape
        )));
    }
    if spec.classes() != ds.classes {
        return Err(ExperimentError::ArchitectureMismatch(format!(
            "checkpoint has {} output classes, {} has {}",
            spec.classes(),
            ds.name,
            ds.classes
        )));
    }
    if ds.timesteps.is_some_and(|t| t != spec.timesteps) {
        return Err(ExperimentError::ArchitectureMismatch(format!(
            "checkpoint runs {} timesteps, {} has {} frames per sample",
            spec.timesteps,
            ds.name,
            ds.timesteps.unwrap_or(0)
        )));
    }
    let params = ck.params()?;
    let report = evaluate(&spec, &params, &ds, &meta.normalization, cfg.train.eval_batch_size)?;
    let out = EvalOutput {
        checkpoint: checkpoint.display().to_string(),
        split,
        parameter_sets: 1,
        dtypes: ck
            .entries
            .iter()
            .filter(|e| e.name.ends_with(".weight"))
            .map(|e| (e.name.clone(), e.dtype.as_str().to_string()))
            .collect(),
        report,
    };
    create_dir(&opts.out_dir)?;
    write_text(
        &opts.out_dir.join("eval.json"),
        &serde_json::to_string_pretty(&out).expect("eval serializes"),
    )?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepChild {
    pub alpha: f64,
    pub out_dir: PathBuf,
    pub result: Result<TrainSummary, String>,
}

pub fn alpha_dir_name(alpha: f64) -> String {
    format!("alpha_{alpha:e}")
}

fn csv_safe(s: &str) -> String {
    s.replace([',', '\n', '\r'], " ")
}

/// One child run per `alpha` under `opts.out_dir/alpha_<value>`, all sharing
/// the seeds of `cfg`. A failing child is recorded and the sweep goes on.
/// Writes `sweep.csv` (per-epoch curves of every child) and
/// `sweep_summary.csv` (one row per child).
pub fn run_sweep(cfg: &ExperimentConfig, alphas: &[f64], opts: &RunOptions) -> Result<Vec<SweepChild>, ExperimentError> {
    if alphas.is_empty() {
        return Err(ExperimentError::Config {
            field: "alphas".into(),
            msg: "sweep needs at least one value".into(),
        });
    }
    if cfg.train.mode == TrainMode::Baseline {
        return Err(ExperimentError::Config {
            field: "train.mode".into(),
            msg: "an alpha sweep needs a mode with a matching term".into(),
        });
    }
    create_dir(&opts.out_dir)?;
    let mut children = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let out_dir = opts.out_dir.join(alpha_dir_name(alpha));
        let mut child_cfg = cfg.clone();
        child_cfg.train.alpha_match = alpha;
        let child_opts = RunOptions {
            data_root: opts.data_root.clone(),
            out_dir: out_dir.clone(),
        };
        let result = run_train(&child_cfg, &child_opts).map_err(|e| e.to_string());
        if let Err(msg) = &result {
            log::warn!("sweep child alpha={alpha:e} failed: {msg}");
        }
        children.push(SweepChild { alpha, out_dir, result });
    }

    let mut curves = String::from("alpha,epoch,loss_total,ce_base,match_loss,acc_train_base,acc_val_base\n");
    let mut summary = String::from("alpha,status,epochs,best_epoch,best_val_accuracy,test_accuracy,error\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for c in &children {
        match &c.result {
            Ok(s) => {
                for r in &s.history {
                    let _ = writeln!(
                        curves,
                        "{:e},{},{},{},{},{},{}",
                        c.alpha,
                        r.epoch,
                        r.loss_total,
                        r.ce[0],
                        r.match_loss,
                        r.acc_train_base,
                        r.acc_val.first().map_or("nan".to_string(), f64::to_string)
                    );
                }
                let _ = writeln!(
                    summary,
                    "{:e},ok,{},{},{},{},",
                    c.alpha,
                    s.epochs_completed,
                    s.best_epoch.map_or(String::new(), |e| e.to_string()),
                    opt(s.best_val_accuracy),
                    s.test_accuracy
                );
            }
            Err(msg) => {
                let _ = writeln!(summary, "{:e},failed,,,,,{}", c.alpha, csv_safe(msg));
            }
        }
    }
    write_text(&opts.out_dir.join("sweep.csv"), &curves)?;
    write_text(&opts.out_dir.join("sweep_summary.csv"), &summary)?;
    Ok(children)
}

/// Human-readable description of a checkpoint file.
pub fn inspect_checkpoint(path: &Path) -> Result<String, ExperimentError> {
    let ck = Checkpoint::load(path)?;
    let meta = ck.meta()?;
    let mut s = String::new();
    let _ = writeln!(s, "checkpoint     {}", path.display());
    let _ = writeln!(s, "version        {}", ck.version);
    let _ = writeln!(s, "config digest  {}", hex(&ck.digest));
    let _ = writeln!(s, "epoch          {}", ck.epoch);
    let _ = writeln!(s, "dataset        {}", meta.dataset);
    let _ = writeln!(s, "mode           {}", meta.mode.as_str());
    let _ = writeln!(s, "role           {}", meta.role);
    let _ = writeln!(s, "timesteps      {}", meta.spec.timesteps);
    let _ = writeln!(s, "input          {:?}", meta.spec.input.dims());
    let _ = writeln!(s, "classes        {}", meta.spec.classes());
    for e in &ck.entries {
        let bytes = e.payload()?.len();
        let _ = writeln!(s, "  {:<16} {:<12} {:<18} {bytes} bytes", e.name, e.dtype.as_str(), format!("{:?}", e.shape));
    }
    match &ck.optimizer {
        Some(o) => {
            let _ = writeln!(s, "optimizer      adam, step {}, lr {}", o.step_count, o.lr);
        }
        None => {
            let _ = writeln!(s, "optimizer      none");
        }
    }
    Ok(s)
}
