//! Structural checks on the training objectives, on a small f64 network so
//! gradients can be compared to machine precision.

use rand::Rng;
use tna_snn::quant::ternarize;
use tna_snn::snn::{
    boxcar_value, forward_timesteps, kaiming_init, lif_step, BuildOptions, InputShape, LifParams, LifState,
    NetworkSpec, ParamSet, SnnInput,
};
use tna_snn::tensor::{Gradients, Tape, Tensor};
use tna_snn::training::{ce_loss, kd_loss, match_mse, tna_loss, MatchTarget, TnaLossConfig, TrainMode};

use super::{rng, uniform};

const TOL: f64 = 1e-12;

pub struct Fixture {
    pub spec: NetworkSpec,
    pub nets: Vec<ParamSet<f64>>,
    pub input: SnnInput<f64>,
    pub labels: Vec<usize>,
}

/// Three independently initialised `4 -> 6 LIF -> 3` networks and a batch of
/// five static inputs large enough to make the hidden layer fire.
pub fn fixture(seed: u64) -> Fixture {
    let spec = NetworkSpec::from_architecture(
        "6FC-Out",
        InputShape::new(1, 1, 4),
        3,
        3,
        &BuildOptions { lif: LifParams::default(), dropout_p: 0.0 },
    )
    .unwrap();
    let nets = (0..3).map(|k| kaiming_init(&spec, seed * 10 + k)).collect();
    let mut r = rng(seed);
    let input = SnnInput::Static(uniform(&mut r, &[5, 1, 1, 4], 0.0, 4.0));
    let labels = (0..5).map(|_| r.gen_range(0..3)).collect();
    Fixture { spec, nets, input, labels }
}

/// Flattened gradient of every network's parameters for the scalar built by
/// `objective` from the per-network logits.
fn grads_of(
    f: &Fixture,
    nets: &[&ParamSet<f64>],
    objective: &dyn Fn(&[Vec<Tensor<f64>>]) -> Tensor<f64>,
) -> (f64, Vec<Vec<f64>>) {
    let tape = Tape::new();
    let leaves: Vec<_> = nets.iter().map(|p| p.to_tensors(Some(&tape))).collect();
    let outputs: Vec<_> = leaves
        .iter()
        .map(|l| forward_timesteps(&f.spec, l, &f.input, false, &mut rng(0)).unwrap().logits)
        .collect();
    let loss = objective(&outputs);
    let grads = loss.backward().unwrap();
    (loss.item().unwrap(), leaves.iter().map(|l| flatten(&grads, l)).collect())
}

fn flatten(grads: &Gradients<f64>, leaves: &[tna_snn::snn::LayerTensors<f64>]) -> Vec<f64> {
    leaves
        .iter()
        .flat_map(|l| {
            let mut v = grads.get_or_zeros(&l.weight).to_vec();
            v.extend(grads.get_or_zeros(&l.bias).to_vec());
            v
        })
        .collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn close(what: &str, a: &[f64], b: &[f64]) -> Result<(), String> {
    let d = max_diff(a, b);
    if d > TOL || a.len() != b.len() {
        return Err(format!("{what}: max difference {d:.3e}"));
    }
    Ok(())
}

fn tna(alpha: f64) -> TnaLossConfig {
    TnaLossConfig { alpha_match: alpha, mode: TrainMode::Tna, n_networks: 2, match_target: MatchTarget::PerTimestepSum }
}

fn kd(mode: TrainMode, alpha: f64) -> TnaLossConfig {
    TnaLossConfig { alpha_match: alpha, mode, n_networks: 2, match_target: MatchTarget::PerTimestepSum }
}

/// Each network's gradient is its own cross-entropy gradient plus `alpha`
/// times the matching gradient: no network receives another's CE.
pub fn graph_separation(seed: u64, alpha: f64) -> Result<(), String> {
    let f = fixture(seed);
    let pair = [&f.nets[0], &f.nets[1]];
    let labels = f.labels.clone();
    let (_, total) = grads_of(&f, &pair, &|o| tna_loss(o, &labels, &tna(alpha)).unwrap().0);
    let (_, ce0) = grads_of(&f, &pair, &|o| ce_loss(&o[0], &labels).unwrap());
    let (_, ce1) = grads_of(&f, &pair, &|o| ce_loss(&o[1], &labels).unwrap());
    let (_, m) = grads_of(&f, &pair, &|o| match_mse(&o[0], &o[1], MatchTarget::PerTimestepSum).unwrap());
    if ce0[1].iter().any(|&g| g != 0.0) || ce1[0].iter().any(|&g| g != 0.0) {
        return Err("cross-entropy of one network reached the other".into());
    }
    for k in 0..2 {
        let ce = if k == 0 { &ce0[k] } else { &ce1[k] };
        let expected: Vec<f64> = ce.iter().zip(&m[k]).map(|(c, g)| c + alpha * g).collect();
        close(&format!("network {k} gradient decomposition"), &total[k], &expected)?;
    }
    if m[0].iter().all(|&g| g == 0.0) {
        return Err("matching term produced no gradient".into());
    }
    Ok(())
}

/// Swapping base and twin swaps their gradients and leaves the loss unchanged.
pub fn swap_symmetry(seed: u64) -> Result<(), String> {
    let f = fixture(seed);
    let labels = f.labels.clone();
    let obj = |o: &[Vec<Tensor<f64>>]| tna_loss(o, &labels, &tna(0.3)).unwrap().0;
    let (l01, g01) = grads_of(&f, &[&f.nets[0], &f.nets[1]], &obj);
    let (l10, g10) = grads_of(&f, &[&f.nets[1], &f.nets[0]], &obj);
    if (l01 - l10).abs() > TOL {
        return Err(format!("loss changed under swap: {l01} vs {l10}"));
    }
    close("base gradient under swap", &g01[0], &g10[1])?;
    close("twin gradient under swap", &g01[1], &g10[0])
}

/// Changing `alpha` changes the gradient by exactly the scaled matching
/// gradient.
pub fn alpha_scales_matching_only(seed: u64) -> Result<(), String> {
    let f = fixture(seed);
    let pair = [&f.nets[0], &f.nets[1]];
    let labels = f.labels.clone();
    let (a1, a2) = (0.01, 0.7);
    let (_, g1) = grads_of(&f, &pair, &|o| tna_loss(o, &labels, &tna(a1)).unwrap().0);
    let (_, g2) = grads_of(&f, &pair, &|o| tna_loss(o, &labels, &tna(a2)).unwrap().0);
    let (_, m) = grads_of(&f, &pair, &|o| match_mse(&o[0], &o[1], MatchTarget::PerTimestepSum).unwrap());
    for k in 0..2 {
        let diff: Vec<f64> = g2[k].iter().zip(&g1[k]).map(|(a, b)| a - b).collect();
        let expected: Vec<f64> = m[k].iter().map(|g| (a2 - a1) * g).collect();
        close(&format!("network {k} alpha scaling"), &diff, &expected)?;
    }
    Ok(())
}

/// Distillation: the teacher gets no gradient, `kd` ignores the labels,
/// `kd_ce` does not, and a student identical to its teacher has zero loss.
pub fn distillation_structure(seed: u64) -> Result<(), String> {
    let f = fixture(seed);
    let pair = [&f.nets[0], &f.nets[2]];
    let labels = f.labels.clone();
    let other: Vec<usize> = labels.iter().map(|l| (l + 1) % 3).collect();
    let run = |mode, labels: &[usize], nets: &[&ParamSet<f64>]| {
        let labels = labels.to_vec();
        grads_of(&f, nets, &move |o| kd_loss(&o[0], &o[1], &labels, &kd(mode, 0.3)).unwrap().0)
    };

    for mode in [TrainMode::Kd, TrainMode::KdCe] {
        let (_, g) = run(mode, &labels, &pair);
        if g[1].iter().any(|&v| v != 0.0) {
            return Err(format!("mode {}: teacher received a gradient", mode.as_str()));
        }
        if g[0].iter().all(|&v| v == 0.0) {
            return Err(format!("mode {}: student received no gradient", mode.as_str()));
        }
    }
    let (_, a) = run(TrainMode::Kd, &labels, &pair);
    let (_, b) = run(TrainMode::Kd, &other, &pair);
    if a[0] != b[0] {
        return Err("kd student gradient depends on the labels".into());
    }
    let (_, a) = run(TrainMode::KdCe, &labels, &pair);
    let (_, b) = run(TrainMode::KdCe, &other, &pair);
    if max_diff(&a[0], &b[0]) == 0.0 {
        return Err("kd_ce student gradient ignores the labels".into());
    }
    let (loss, g) = run(TrainMode::Kd, &labels, &[&f.nets[0], &f.nets[0]]);
    if loss != 0.0 || g[0].iter().any(|&v| v != 0.0) {
        return Err(format!("student identical to teacher: loss {loss}"));
    }
    Ok(())
}

/// Closed-form cases for the neuron, surrogate, quantizer and losses.
pub fn equation_checks() -> Result<(), String> {
    // u = 0.6, 0.9, 1.05 (fires), then reset: 0 + 1.2 (fires)
    let lif = LifParams { alpha: 0.5, theta: 1.0, surrogate_width: 0.5 };
    let mut state = LifState::<f64>::zeros(&[1]);
    let expected = [(0.6, 0.0), (0.9, 0.0), (1.05, 1.0), (1.2, 1.0)];
    for (i, (current, (u, s))) in [0.6, 0.6, 0.6, 1.2].iter().zip(expected).enumerate() {
        let (next, spikes) = lif_step(&state, &Tensor::from_vec(vec![*current], vec![1]).unwrap(), &lif)
            .map_err(|e| e.to_string())?;
        if (next.u.data()[0] - u).abs() > 1e-12 || spikes.data()[0] != s {
            return Err(format!("LIF step {i}: u={} s={}, expected u={u} s={s}", next.u.data()[0], spikes.data()[0]));
        }
        state = next;
    }
    for (d, expected) in [(0.5, 0.5), (-0.5, 0.5), (0.0, 0.5), (0.500001, 0.0), (-0.500001, 0.0)] {
        if boxcar_value(d, 0.5) != expected {
            return Err(format!("surrogate at {d}: {}", boxcar_value(d, 0.5)));
        }
    }
    let t = ternarize(&[0.1f64, -0.1, 0.1000001, -0.1000001, 0.0], 0.1);
    if t != [0.0, 0.0, 1.0, -1.0, 0.0] {
        return Err(format!("ternarize at the threshold: {t:?}"));
    }
    let uniform_logits = vec![Tensor::<f64>::zeros(&[4, 10]); 3];
    let ce = ce_loss(&uniform_logits, &[0, 3, 7, 9]).unwrap().item().unwrap();
    if (ce - 10f64.ln()).abs() > 1e-9 {
        return Err(format!("uniform cross-entropy {ce}, expected ln 10"));
    }
    let f = fixture(1);
    let outputs: Vec<_> = f.nets[..2]
        .iter()
        .map(|p| forward_timesteps(&f.spec, &p.to_tensors(None), &f.input, false, &mut rng(0)).unwrap().logits)
        .collect();
    let (_, parts) = tna_loss(&outputs, &f.labels, &tna(0.0)).unwrap();
    if (parts.total - parts.ce.iter().sum::<f64>()).abs() > 1e-9 {
        return Err(format!("alpha = 0: total {} vs CE sum {}", parts.total, parts.ce.iter().sum::<f64>()));
    }
    Ok(())
}
