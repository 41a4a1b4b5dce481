//! Cross-entropy on timestep-summed logits, logit matching, and the
//! co-training / distillation objectives built from them.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::snn::sum_steps;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// A single network trained on its own cross-entropy.
    Baseline,
    /// Co-trained networks with cross-entropy each plus logit matching.
    Tna,
    /// Student matched to a frozen teacher, no label term.
    Kd,
    /// Student cross-entropy plus matching to a frozen teacher.
    KdCe,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::Tna => "tna",
            TrainMode::Kd => "kd",
            TrainMode::KdCe => "kd_ce",
        }
    }

    pub fn uses_teacher(self) -> bool {
        matches!(self, TrainMode::Kd | TrainMode::KdCe)
    }
}

impl std::str::FromStr for TrainMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(TrainMode::Baseline),
            "tna" => Ok(TrainMode::Tna),
            "kd" => Ok(TrainMode::Kd),
            "kd_ce" => Ok(TrainMode::KdCe),
            other => Err(TrainError::Config(format!("unknown mode `{other}`"))),
        }
    }
}

/// What the matching term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchTarget {
    /// Σₜ mean((a[t] − b[t])²)
    #[default]
    PerTimestepSum,
    /// mean((Σₜ a[t] − Σₜ b[t])²)
    SummedLogits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TnaLossConfig {
    pub alpha_match: f64,
    pub mode: TrainMode,
    /// Networks taking part: co-trained networks for `tna`, student plus
    /// teacher for the distillation modes.
    pub n_networks: usize,
    #[serde(default)]
    pub match_target: MatchTarget,
}

impl Default for TnaLossConfig {
    fn default() -> Self {
        Self {
            alpha_match: 1e-3,
            mode: TrainMode::Tna,
            n_networks: 2,
            match_target: MatchTarget::PerTimestepSum,
        }
    }
}

impl TnaLossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha_match >= 0.0) || !self.alpha_match.is_finite() {
            return Err(TrainError::Config(format!(
                "alpha_match must be a non-negative number, got {}",
                self.alpha_match
            )));
        }
        match self.mode {
            TrainMode::Baseline if self.n_networks != 1 => Err(TrainError::Config(format!(
                "mode=baseline requires n_networks=1, got {}",
                self.n_networks
            ))),
            TrainMode::Tna if self.n_networks < 2 => Err(TrainError::Config(format!(
                "mode=tna requires at least 2 networks, got {}",
                self.n_networks
            ))),
            TrainMode::Kd | TrainMode::KdCe if self.n_networks != 2 => Err(TrainError::Config(format!(
                "mode={} trains one student against one teacher (n_networks=2), got {}",
                self.mode.as_str(),
                self.n_networks
            ))),
            _ => Ok(()),
        }
    }
}

/// Scalar breakdown of a combined loss.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossParts {
    /// Cross-entropy of every network, base first. For the distillation
    /// modes the second entry is the frozen teacher's.
    pub ce: Vec<f64>,
    /// Unweighted matching term.
    pub matching: f64,
    /// `alpha_match · matching`, as it enters the total.
    pub matching_weighted: f64,
    pub total: f64,
}

/// Mean cross-entropy of the timestep-summed logits against `labels`.
pub fn ce_loss<T: Element>(per_timestep_logits: &[Tensor<T>], labels: &[usize]) -> Result<Tensor<T>, TrainError> {
    let logits = sum_steps(per_timestep_logits)?;
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() {
        return Err(TrainError::Contract(format!(
            "logits of shape {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let classes = logits.shape()[1];
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(TrainError::Contract(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(logits.log_softmax()?.pick(labels)?.mean()?.neg()?)
}

/// Logit matching between two networks' per-timestep outputs.
pub fn match_mse<T: Element>(a: &[Tensor<T>], b: &[Tensor<T>], target: MatchTarget) -> Result<Tensor<T>, TrainError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TrainError::Contract(format!(
            "cannot match {} timesteps against {}",
            a.len(),
            b.len()
        )));
    }
    match target {
        MatchTarget::PerTimestepSum => {
            let mut total: Option<Tensor<T>> = None;
            for (x, y) in a.iter().zip(b) {
                let step = x.sub(y)?.square()?.mean()?;
                total = Some(match total {
                    None => step,
                    Some(acc) => acc.add(&step)?,
                });
            }
            Ok(total.expect("at least one timestep"))
        }
        MatchTarget::SummedLogits => Ok(sum_steps(a)?.sub(&sum_steps(b)?)?.square()?.mean()?),
    }
}

fn value<T: Element>(t: &Tensor<T>) -> Result<f64, TrainError> {
    Ok(t.item()?.to_f64_lossy())
}

/// Co-training objective: every network's cross-entropy plus
/// `alpha_match` times the matching term between the base (index 0) and each
/// other network.
pub fn tna_loss<T: Element>(
    outputs: &[Vec<Tensor<T>>],
    labels: &[usize],
    cfg: &TnaLossConfig,
) -> Result<(Tensor<T>, LossParts), TrainError> {
    cfg.validate()?;
    if cfg.mode != TrainMode::Tna && cfg.mode != TrainMode::Baseline {
        return Err(TrainError::Config(format!(
            "tna_loss does not handle mode={}",
            cfg.mode.as_str()
        )));
    }
    if outputs.len() != cfg.n_networks {
        return Err(TrainError::Config(format!(
            "expected outputs from {} networks, got {}",
            cfg.n_networks,
            outputs.len()
        )));
    }
    let shape = outputs[0].first().map(|t| t.shape().to_vec());
    if outputs.iter().any(|o| o.len() != outputs[0].len() || o.first().map(|t| t.shape().to_vec()) != shape) {
        return Err(TrainError::Contract("networks emit different logit shapes".into()));
    }

    let mut parts = LossParts::default();
    let mut total: Option<Tensor<T>> = None;
    for out in outputs {
        let ce = ce_loss(out, labels)?;
        parts.ce.push(value(&ce)?);
        total = Some(match total {
            None => ce,
            Some(acc) => acc.add(&ce)?,
        });
    }
    let mut total = total.expect("at least one network");
    if outputs.len() > 1 {
        let mut matching: Option<Tensor<T>> = None;
        for aux in &outputs[1..] {
            let m = match_mse(&outputs[0], aux, cfg.match_target)?;
            matching = Some(match matching {
                None => m,
                Some(acc) => acc.add(&m)?,
            });
        }
        let matching = matching.expect("auxiliary network present");
        parts.matching = value(&matching)?;
        let weighted = matching.scale(T::from_f64_lossy(cfg.alpha_match))?;
        parts.matching_weighted = value(&weighted)?;
        total = total.add(&weighted)?;
    }
    parts.total = value(&total)?;
    Ok((total, parts))
}

/// Distillation objective against a frozen teacher. The teacher's outputs are
/// detached, so no gradient reaches its parameters; in `kd` mode the labels do
/// not enter the differentiated graph at all.
pub fn kd_loss<T: Element>(
    student: &[Tensor<T>],
    teacher: &[Tensor<T>],
    labels: &[usize],
    cfg: &TnaLossConfig,
) -> Result<(Tensor<T>, LossParts), TrainError> {
    cfg.validate()?;
    if !cfg.mode.uses_teacher() {
        return Err(TrainError::Config(format!("kd_loss does not handle mode={}", cfg.mode.as_str())));
    }
    let teacher: Vec<Tensor<T>> = teacher.iter().map(Tensor::detach).collect();
    let matching = match_mse(student, &teacher, cfg.match_target)?;
    let weighted = matching.scale(T::from_f64_lossy(cfg.alpha_match))?;
    let detached: Vec<Tensor<T>> = student.iter().map(Tensor::detach).collect();
    let mut parts = LossParts {
        ce: Vec::with_capacity(2),
        matching: value(&matching)?,
        matching_weighted: value(&weighted)?,
        total: 0.0,
    };
    let total = match cfg.mode {
        TrainMode::KdCe => {
            let ce = ce_loss(student, labels)?;
            parts.ce.push(value(&ce)?);
            ce.add(&weighted)?
        }
        _ => {
            // reported only; computed off the graph
            parts.ce.push(value(&ce_loss(&detached, labels)?)?);
            weighted
        }
    };
    parts.ce.push(value(&ce_loss(&teacher, labels)?)?);
    parts.total = value(&total)?;
    Ok((total, parts))
}
