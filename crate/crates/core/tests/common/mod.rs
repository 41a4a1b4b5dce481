#![allow(dead_code)]

pub mod checks;
pub mod formats;
pub mod losses;
pub mod ternary;
pub mod oracle;
pub mod runs;

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tna_snn::data::{load_idx, Dataset, Normalization, Split};
use tna_snn::snn::{BuildOptions, InputShape, NetworkSpec, ParamSet};
use tna_snn::tensor::{Tape, Tensor};
use tna_snn::training::{evaluate, MetricsRecord, NoObserver, Seeds, TnaLossConfig, TrainConfig, TrainMode, Trainer};

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape.to_vec()).unwrap()
}

/// Normwise relative error `|g_tape - g_fd| / |g_fd|` of the gradient of the
/// scalar `f` at `x`, with central differences of step [`FD_STEP`].
pub fn fd_relative_error(x: &Tensor<f64>, f: &dyn Fn(&Tensor<f64>) -> Tensor<f64>) -> f64 {
    let tape = Tape::new();
    let leaf = tape.leaf(x);
    let analytic = f(&leaf).backward().unwrap().get_or_zeros(&leaf).to_vec();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let probe = |delta: f64| {
            let mut v = x.to_vec();
            v[i] += delta;
            f(&Tensor::from_vec(v, x.shape().to_vec()).unwrap()).item().unwrap()
        };
        numeric.push((probe(FD_STEP) - probe(-FD_STEP)) / (2.0 * FD_STEP));
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// `sum(y ∘ r)`: turns any tensor into a scalar with a dense, random upstream
/// gradient.
pub fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> Tensor<f64> {
    y.mul(r).unwrap().sum().unwrap()
}

// ---------------------------------------------------------------------------
// desk-scale Fashion-MNIST task: 784-256-10, five timesteps, 2000/1000 subset

/// Matching weight used for every desk-scale co-training run.
pub const DESK_ALPHA: f64 = 0.3;
/// Twin and teacher seeds are the base seed plus this offset.
pub const DESK_TWIN_OFFSET: u64 = 100;

pub fn fixture_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/fashion-mnist-subset")
}

pub struct Desk {
    pub train: Dataset,
    pub test: Dataset,
    pub norm: Normalization,
    pub spec: NetworkSpec,
}

pub fn desk() -> Desk {
    let root = fixture_root();
    let train = load_idx(
        &root.join("train-images-idx3-ubyte"),
        &root.join("train-labels-idx1-ubyte"),
        Split::Train,
    )
    .unwrap();
    let test = load_idx(
        &root.join("t10k-images-idx3-ubyte"),
        &root.join("t10k-labels-idx1-ubyte"),
        Split::Test,
    )
    .unwrap();
    let norm = Normalization::from_dataset(&train);
    let spec = NetworkSpec::from_architecture("256FC-Out", InputShape::new(1, 28, 28), 10, 5, &BuildOptions::default()).unwrap();
    Desk { train, test, norm, spec }
}

pub fn desk_config(mode: TrainMode, epochs: usize, seed: u64) -> TrainConfig {
    let n_networks = if mode == TrainMode::Baseline { 1 } else { 2 };
    TrainConfig {
        epochs,
        loss: TnaLossConfig {
            alpha_match: if mode == TrainMode::Baseline { 0.0 } else { DESK_ALPHA },
            mode,
            n_networks,
            ..Default::default()
        },
        seeds: Seeds {
            base: seed,
            twin: seed + DESK_TWIN_OFFSET,
            data: seed,
        },
        augment: None,
        ..Default::default()
    }
}

pub struct DeskRun {
    pub test_accuracy: f64,
    pub history: Vec<MetricsRecord>,
    pub base: ParamSet<f32>,
}

pub fn desk_run(desk: &Desk, cfg: TrainConfig, teacher: Option<ParamSet<f32>>) -> DeskRun {
    let mut t = Trainer::new(desk.spec.clone(), cfg, teacher).unwrap();
    let outcome = t.fit(&desk.train, None, &desk.norm, &mut NoObserver).unwrap();
    let base = t.base().deployed();
    let test_accuracy = evaluate(&desk.spec, &base, &desk.test, &desk.norm, 500).unwrap().accuracy;
    DeskRun {
        test_accuracy,
        history: outcome.history,
        base,
    }
}
