use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, lr_schedule, OptimizerState, ParamGrads};
use super::loss::{kd_loss, tna_loss, LossParts, TnaLossConfig, TrainMode};
use super::TrainError;
use crate::data::{make_batch, sequential_batches, shuffled_batches, AugmentConfig, Dataset, Normalization};
use crate::quant::{activate_compression, tna_ternary_handoff, CompressionState, TernaryPolicy};
use crate::snn::{forward_timesteps, kaiming_init, NetworkSpec, ParamSet, SnnInput};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Initialization of the base network.
    pub base: u64,
    /// Initialization of the twin; further auxiliary networks use
    /// `twin + 1`, `twin + 2`, ...
    pub twin: u64,
    /// Shuffling, augmentation and dropout.
    pub data: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { base: 0, twin: 1, data: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub gamma: f64,
    pub loss: TnaLossConfig,
    pub seeds: Seeds,
    pub ternary: Option<TernaryPolicy>,
    /// Random crop and flip for static training images.
    pub augment: Option<AugmentConfig>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batch_size: 256,
            initial_lr: 0.01,
            gamma: 0.928,
            loss: TnaLossConfig::default(),
            seeds: Seeds::default(),
            ternary: None,
            augment: Some(AugmentConfig::default()),
            eval_batch_size: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(TrainError::Config("epochs and batch sizes must be positive".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(TrainError::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(TrainError::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if let Some(policy) = &self.ternary {
            policy.validate()?;
        }
        Ok(())
    }

    /// Networks that receive optimizer updates.
    pub fn trainable_networks(&self) -> usize {
        if self.loss.mode.uses_teacher() {
            1
        } else {
            self.loss.n_networks
        }
    }

    pub fn member_seed(&self, k: usize) -> u64 {
        match k {
            0 => self.seeds.base,
            _ => self.seeds.twin.wrapping_add(k as u64 - 1),
        }
    }
}

/// One co-trained network: latent parameters, its own Adam state, and the
/// deployed ternary view once compression is active.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub params: ParamSet<f32>,
    pub optimizer: OptimizerState<f32>,
    pub compression: Option<CompressionState<f32>>,
}

impl Member {
    pub fn new(params: ParamSet<f32>, lr: f64) -> Self {
        Self {
            optimizer: OptimizerState::new(&params, lr),
            params,
            compression: None,
        }
    }

    /// What the forward pass uses.
    pub fn deployed(&self) -> ParamSet<f32> {
        match &self.compression {
            Some(c) => c.deployed_params(&self.params),
            None => self.params.clone(),
        }
    }
}

/// Results of one epoch. `ce` and `acc_val` list the base network first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub ce: Vec<f64>,
    /// Unweighted matching term.
    pub match_loss: f64,
    pub acc_train_base: f64,
    pub acc_val: Vec<f64>,
    pub ternary_active: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub class_counts: Vec<usize>,
    /// Mean spikes per sample for every LIF layer, summed over timesteps.
    pub spikes_per_sample: Vec<f64>,
}

/// Inference over a whole split: no dropout, no augmentation, no tape.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ParamSet<f32>,
    ds: &Dataset,
    norm: &Normalization,
    batch_size: usize,
) -> Result<EvalReport, TrainError> {
    params.check_against(spec)?;
    if ds.classes > spec.classes() {
        return Err(TrainError::Config(format!(
            "dataset has {} classes, network outputs {}",
            ds.classes,
            spec.classes()
        )));
    }
    let leaves = params.to_tensors(None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut correct = vec![0usize; spec.classes()];
    let mut counts = vec![0usize; spec.classes()];
    let mut spikes = vec![0.0; spec.lif_layers().len()];
    for idx in sequential_batches(ds.len(), batch_size) {
        let batch = make_batch::<ChaCha8Rng>(ds, &idx, norm, None);
        let out = forward_timesteps(spec, &leaves, &batch.input, false, &mut rng)?;
        for (s, c) in spikes.iter_mut().zip(&out.spike_counts) {
            *s += c;
        }
        for (pred, &label) in argmax_rows(&out.summed_logits()?).into_iter().zip(&batch.labels) {
            counts[label] += 1;
            correct[label] += usize::from(pred == label);
        }
    }
    let samples = ds.len();
    Ok(EvalReport {
        samples,
        accuracy: correct.iter().sum::<usize>() as f64 / samples.max(1) as f64,
        per_class: correct
            .iter()
            .zip(&counts)
            .map(|(&k, &n)| if n == 0 { f64::NAN } else { k as f64 / n as f64 })
            .collect(),
        class_counts: counts,
        spikes_per_sample: spikes.into_iter().map(|s| s / samples.max(1) as f64).collect(),
    })
}

fn argmax_rows(logits: &Tensor<f32>) -> Vec<usize> {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Per-epoch hook for persistence and logging.
pub trait TrainObserver {
    fn on_epoch(&mut self, _trainer: &Trainer, _record: &MetricsRecord) -> Result<(), TrainError> {
        Ok(())
    }
}

pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<MetricsRecord>,
    /// Epoch with the highest base validation accuracy, if validated.
    pub best_epoch: Option<usize>,
}

/// Co-trains the configured networks. Every step runs all networks on the
/// same batch, records them on one tape, differentiates the joint loss once
/// and applies an independent Adam update to each trainable network.
pub struct Trainer {
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub members: Vec<Member>,
    pub teacher: Option<ParamSet<f32>>,
    /// Index of the next epoch to run.
    pub epoch: usize,
    pub history: Vec<MetricsRecord>,
    dropout_rngs: Vec<ChaCha8Rng>,
    augment_rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(spec: NetworkSpec, config: TrainConfig, teacher: Option<ParamSet<f32>>) -> Result<Self, TrainError> {
        config.validate()?;
        spec.validate()?;
        match (config.loss.mode.uses_teacher(), &teacher) {
            (true, None) => {
                return Err(TrainError::Config(format!(
                    "mode={} needs a teacher checkpoint",
                    config.loss.mode.as_str()
                )))
            }
            (false, Some(_)) => {
                return Err(TrainError::Config(format!(
                    "mode={} does not use a teacher",
                    config.loss.mode.as_str()
                )))
            }
            (true, Some(t)) => t.check_against(&spec)?,
            (false, None) => {}
        }
        let members = (0..config.trainable_networks())
            .map(|k| Member::new(kaiming_init(&spec, config.member_seed(k)), config.initial_lr))
            .collect();
        let dropout_rngs = (0..config.trainable_networks())
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.member_seed(k) ^ config.seeds.data.rotate_left(32));
                rng.set_stream(1);
                rng
            })
            .collect();
        let mut augment_rng = ChaCha8Rng::seed_from_u64(config.seeds.data);
        augment_rng.set_stream(0);
        Ok(Self {
            spec,
            config,
            members,
            teacher,
            epoch: 0,
            history: Vec::new(),
            dropout_rngs,
            augment_rng,
        })
    }

    pub fn base(&self) -> &Member {
        &self.members[0]
    }

    pub fn compression_active(&self) -> bool {
        self.members[0].compression.is_some()
    }

    fn maybe_activate_compression(&mut self) -> Result<(), TrainError> {
        let Some(policy) = &self.config.ternary else { return Ok(()) };
        if self.members[0].compression.is_some() {
            return Ok(());
        }
        let state = if self.config.loss.mode == TrainMode::Tna {
            tna_ternary_handoff(&self.members[0].params, &self.members[1].params, policy, TrainMode::Tna, self.epoch)?
        } else {
            activate_compression(&self.members[0].params, policy, self.epoch)?
        };
        if state.is_some() {
            log::info!("epoch {}: base network switched to compressed weights", self.epoch);
        }
        self.members[0].compression = state;
        Ok(())
    }

    fn step(&mut self, input: &SnnInput<f32>, labels: &[usize]) -> Result<(LossParts, Vec<usize>), TrainError> {
        let tape = Tape::new();
        let mut leaves = Vec::with_capacity(self.members.len());
        let mut outputs = Vec::with_capacity(self.members.len() + 1);
        for (member, rng) in self.members.iter().zip(self.dropout_rngs.iter_mut()) {
            let l = member.deployed().to_tensors(Some(&tape));
            outputs.push(forward_timesteps(&self.spec, &l, input, true, rng)?.logits);
            leaves.push(l);
        }
        let predictions = argmax_rows(&crate::snn::sum_steps(&outputs[0])?);
        let (total, parts) = match &self.teacher {
            Some(teacher) => {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let t = forward_timesteps(&self.spec, &teacher.to_tensors(None), input, false, &mut rng)?;
                kd_loss(&outputs[0], &t.logits, labels, &self.config.loss)?
            }
            None => tna_loss(&outputs, labels, &self.config.loss)?,
        };
        if !parts.total.is_finite() {
            return Err(TrainError::Diverged { epoch: self.epoch, batch: 0 });
        }
        let grads = total.backward()?;
        for (member, l) in self.members.iter_mut().zip(&leaves) {
            // gradients w.r.t. the deployed weights update the latent ones
            let g = ParamGrads::collect(&grads, l);
            adam_step(&mut member.params, &g, &mut member.optimizer)?;
            if let Some(c) = member.compression.as_mut() {
                c.refresh(&member.params);
            }
        }
        Ok((parts, predictions))
    }

    /// Runs one epoch over `train` and validates every trainable network on
    /// `val`.
    pub fn run_epoch(&mut self, train: &Dataset, val: Option<&Dataset>, norm: &Normalization) -> Result<MetricsRecord, TrainError> {
        let started = Instant::now();
        let lr = lr_schedule(self.epoch, self.config.initial_lr, self.config.gamma);
        self.maybe_activate_compression()?;
        for m in &mut self.members {
            m.optimizer.lr = lr;
        }
        let n_ce = if self.teacher.is_some() { 2 } else { self.members.len() };
        let mut ce = vec![0.0; n_ce];
        let (mut total, mut matching, mut correct, mut seen) = (0.0, 0.0, 0usize, 0usize);
        let batches = shuffled_batches(train.len(), self.config.batch_size, self.config.seeds.data, self.epoch);
        for (b, idx) in batches.iter().enumerate() {
            let batch = match (&self.config.augment, train.timesteps) {
                (Some(cfg), None) => make_batch(train, idx, norm, Some((cfg, &mut self.augment_rng))),
                _ => make_batch::<ChaCha8Rng>(train, idx, norm, None),
            };
            let (parts, predictions) = self.step(&batch.input, &batch.labels).map_err(|e| match e {
                TrainError::Diverged { epoch, .. } => TrainError::Diverged { epoch, batch: b },
                other => other,
            })?;
            let w = idx.len() as f64;
            total += parts.total * w;
            matching += parts.matching * w;
            for (acc, v) in ce.iter_mut().zip(&parts.ce) {
                *acc += v * w;
            }
            correct += predictions.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            seen += idx.len();
        }
        let n = seen as f64;
        let acc_val = match val {
            Some(v) => self
                .members
                .iter()
                .map(|m| Ok(evaluate(&self.spec, &m.deployed(), v, norm, self.config.eval_batch_size)?.accuracy))
                .collect::<Result<Vec<_>, TrainError>>()?,
            None => Vec::new(),
        };
        let record = MetricsRecord {
            epoch: self.epoch,
            lr,
            loss_total: total / n,
            ce: ce.into_iter().map(|c| c / n).collect(),
            match_loss: matching / n,
            acc_train_base: correct as f64 / n,
            acc_val,
            ternary_active: self.compression_active(),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {} lr {:.3e} loss {:.4} match {:.4e} val {:?}",
            record.epoch,
            record.lr,
            record.loss_total,
            record.match_loss,
            record.acc_val
        );
        self.epoch += 1;
        self.history.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs, calling `observer` after each.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        norm: &Normalization,
        observer: &mut dyn TrainObserver,
    ) -> Result<TrainOutcome, TrainError> {
        if train.timesteps.is_some_and(|t| t != self.spec.timesteps) {
            return Err(TrainError::Config(format!(
                "dataset has {} frames per sample, network runs {} timesteps",
                train.timesteps.unwrap_or(0),
                self.spec.timesteps
            )));
        }
        while self.epoch < self.config.epochs {
            let record = self.run_epoch(train, val, norm)?;
            observer.on_epoch(self, &record)?;
        }
        let best_epoch = self
            .history
            .iter()
            .filter_map(|r| r.acc_val.first().map(|&a| (r.epoch, a)))
            .fold(None, |best: Option<(usize, f64)>, (e, a)| match best {
                Some((_, b)) if b >= a => best,
                _ => Some((e, a)),
            })
            .map(|(e, _)| e);
        Ok(TrainOutcome {
            history: self.history.clone(),
            best_epoch,
        })
    }
}
