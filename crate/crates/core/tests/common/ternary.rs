//! Compression compliance: deployed weights stay ternary through activation,
//! optimizer steps and co-training, and exempt or twin weights never change
//! representation.

use rand::Rng;
use tna_snn::data::{synthetic_spikes, Dataset, Normalization, Split};
use tna_snn::quant::{activate_compression, ternarize, CompressionState, TernaryPolicy};
use tna_snn::snn::{kaiming_init, BuildOptions, InputShape, NetworkSpec, ParamSet, CIFARNET};
use tna_snn::training::{
    adam_step, MetricsRecord, OptimizerState, ParamGrads, Seeds, TnaLossConfig, TrainConfig, TrainError,
    TrainObserver, Trainer,
};

use super::rng;

fn is_ternary(w: &[f32]) -> bool {
    w.iter().all(|&v| v == 0.0 || v == 1.0 || v == -1.0)
}

/// Deployed weights equal the ternarized latent weights on compressed
/// layers and the latent weights bit for bit elsewhere.
pub fn check_deployed(latent: &ParamSet<f32>, state: &CompressionState<f32>, delta: f64) -> Result<(), String> {
    let deployed = state.deployed_params(latent);
    for (k, (d, l)) in deployed.layers.iter().zip(&latent.layers).enumerate() {
        if d.bias != l.bias {
            return Err(format!("layer {k}: bias changed by compression"));
        }
        if state.is_compressed(k) {
            if d.weight != ternarize(&l.weight, delta) || !is_ternary(&d.weight) {
                return Err(format!("layer {k}: deployed weights are not the ternarized latent weights"));
            }
        } else if d.weight != l.weight {
            return Err(format!("layer {k}: exempt weights changed"));
        }
    }
    Ok(())
}

/// Activation on the image architecture, then several optimizer steps with
/// random gradients, checking the deployed view after each refresh.
pub fn cifarnet_steps(seed: u64, steps: usize) -> Result<(), String> {
    let spec = NetworkSpec::from_architecture(CIFARNET, InputShape::new(3, 32, 32), 10, 5, &BuildOptions::default())
        .map_err(|e| e.to_string())?;
    let mut latent = kaiming_init::<f32>(&spec, seed);
    let policy = TernaryPolicy::default();
    let mut state = activate_compression(&latent, &policy, policy.start_epoch)
        .map_err(|e| e.to_string())?
        .ok_or("compression did not activate at the start epoch")?;
    let last = latent.layers.len() - 1;
    if state.is_compressed(0) || state.is_compressed(last) || (1..last).any(|k| !state.is_compressed(k)) {
        return Err("wrong layers selected for compression".into());
    }
    check_deployed(&latent, &state, policy.delta)?;
    let mut opt = OptimizerState::new(&latent, 0.01);
    let mut r = rng(seed);
    for step in 0..steps {
        let grads = ParamGrads {
            layers: latent
                .layers
                .iter()
                .map(|l| {
                    (
                        l.weight.iter().map(|_| r.gen_range(-1.0f32..1.0)).collect(),
                        l.bias.iter().map(|_| r.gen_range(-1.0f32..1.0)).collect(),
                    )
                })
                .collect(),
        };
        adam_step(&mut latent, &grads, &mut opt).map_err(|e| e.to_string())?;
        state.refresh(&latent);
        check_deployed(&latent, &state, policy.delta).map_err(|e| format!("after step {step}: {e}"))?;
    }
    Ok(())
}

/// `n` weights drawn around the threshold: idempotence and sign agreement.
pub fn random_weights(n: usize, seed: u64, delta: f64) -> Result<(), String> {
    let mut r = rng(seed);
    let w: Vec<f32> = (0..n).map(|_| r.gen_range(-3.0 * delta as f32..3.0 * delta as f32)).collect();
    let t = ternarize(&w, delta);
    if ternarize(&t, delta) != t {
        return Err("ternarize is not idempotent".into());
    }
    for (x, q) in w.iter().zip(&t) {
        let expected = if f64::from(x.abs()) > delta { x.signum() } else { 0.0 };
        if *q != expected {
            return Err(format!("weight {x} mapped to {q}"));
        }
    }
    Ok(())
}

struct HandoffObserver {
    start: usize,
    delta: f64,
    violations: Vec<String>,
}

impl TrainObserver for HandoffObserver {
    fn on_epoch(&mut self, t: &Trainer, record: &MetricsRecord) -> Result<(), TrainError> {
        let (base, twin) = (&t.members[0], &t.members[1]);
        let mut fail = |msg: String| self.violations.push(format!("epoch {}: {msg}", record.epoch));
        if twin.compression.is_some() || twin.deployed() != twin.params || is_ternary(&twin.params.layers[1].weight) {
            fail("twin left full precision".into());
        }
        match (&base.compression, record.epoch >= self.start) {
            (None, false) => {}
            (Some(state), true) => {
                if let Err(e) = check_deployed(&base.params, state, self.delta) {
                    fail(e);
                }
                if !record.ternary_active {
                    fail("metrics do not report compression".into());
                }
            }
            (state, _) => fail(format!("compression active = {} before or after the start epoch", state.is_some())),
        }
        Ok(())
    }
}

/// Co-training with the hand-off at `start` on `train`. The batch covers the
/// whole set, so the per-epoch check sees the state after every optimizer
/// step.
pub fn handoff_run(architecture: &str, train: &Dataset, timesteps: usize, start: usize, epochs: usize) -> Result<(), String> {
    let spec = NetworkSpec::from_architecture(architecture, train.shape, train.classes, timesteps, &BuildOptions::default())
        .map_err(|e| e.to_string())?;
    let policy = TernaryPolicy { start_epoch: start, ..Default::default() };
    let cfg = TrainConfig {
        epochs,
        batch_size: train.len(),
        eval_batch_size: train.len(),
        loss: TnaLossConfig { alpha_match: 0.3, ..Default::default() },
        seeds: Seeds { base: 1, twin: 2, data: 3 },
        ternary: Some(policy.clone()),
        augment: None,
        ..Default::default()
    };
    let mut trainer = Trainer::new(spec, cfg, None).map_err(|e| e.to_string())?;
    let mut obs = HandoffObserver { start, delta: policy.delta, violations: Vec::new() };
    trainer
        .fit(train, None, &Normalization::identity(train.shape.channels), &mut obs)
        .map_err(|e| e.to_string())?;
    match obs.violations.first() {
        Some(v) => Err(v.clone()),
        None => Ok(()),
    }
}

/// Small spike-train task for [`handoff_run`].
pub fn spike_task() -> Dataset {
    synthetic_spikes(2, 4, InputShape::new(1, 4, 4), 64, 3).unwrap()
}

/// A few random 3×32×32 images for running the image architecture.
pub fn image_task(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let shape = InputShape::new(3, 32, 32);
    let data = (0..n * shape.len()).map(|_| r.gen_range(0.0f32..1.0)).collect();
    Dataset::new("images", Split::Train, shape, None, data, (0..n).map(|i| i % 10).collect(), 10).unwrap()
}
