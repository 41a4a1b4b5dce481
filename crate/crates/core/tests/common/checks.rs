//! Checks shared by the focused integration tests and the acceptance harness.

use rand::Rng;
use tna_snn::snn::{forward_timesteps, BuildOptions, InputShape, LayerParams, LifParams, NetworkSpec, ParamSet, SnnInput};
use tna_snn::tensor::{Tape, Tensor};
use tna_snn::training::ce_loss;

use super::oracle::OracleNet;
use super::{fd_relative_error, project, rng, uniform};

pub struct OracleComparison {
    pub max_abs_error: f64,
    pub open_windows: usize,
    pub gradient_norm: f64,
}

/// Engine BPTT vs the hand-unrolled oracle on a 2-neuron, 3-step LIF network
/// with temporal input, nonzero biases and a batch of three.
pub fn lif_oracle_comparison(seed: u64) -> OracleComparison {
    let mut r = rng(seed);
    let (n_in, n_hidden, n_out, steps, batch) = (3, 2, 3, 3, 3);
    let lif = LifParams { alpha: 0.7, theta: 1.0, surrogate_width: 0.5 };
    let net = OracleNet {
        n_in,
        n_hidden,
        n_out,
        w1: (0..n_in * n_hidden).map(|_| r.gen_range(0.1..0.9)).collect(),
        b1: (0..n_hidden).map(|_| r.gen_range(0.05..0.3)).collect(),
        w2: (0..n_hidden * n_out).map(|_| r.gen_range(-1.0..1.0)).collect(),
        b2: (0..n_out).map(|_| r.gen_range(-0.2..0.2)).collect(),
        alpha: lif.alpha,
        theta: lif.theta,
        width: lif.surrogate_width,
    };
    let x: Vec<Vec<Vec<f64>>> = (0..steps)
        .map(|_| (0..batch).map(|_| (0..n_in).map(|_| r.gen_range(0.0..1.0)).collect()).collect())
        .collect();
    let labels: Vec<usize> = (0..batch).map(|_| r.gen_range(0..n_out)).collect();
    let oracle = net.gradients(&x, &labels);

    let spec = NetworkSpec::from_architecture(
        &format!("{n_hidden}FC-Out"),
        InputShape::new(1, 1, n_in),
        n_out,
        steps,
        &BuildOptions { lif, dropout_p: 0.0 },
    )
    .unwrap();
    let params = ParamSet {
        layers: vec![
            LayerParams { name: "layer0".into(), weight_shape: vec![n_in, n_hidden], weight: net.w1.clone(), bias: net.b1.clone() },
            LayerParams { name: "layer1".into(), weight_shape: vec![n_hidden, n_out], weight: net.w2.clone(), bias: net.b2.clone() },
        ],
    };
    let tape = Tape::new();
    let leaves = params.to_tensors(Some(&tape));
    let frames = x
        .iter()
        .map(|step| Tensor::from_vec(step.concat(), vec![batch, 1, 1, n_in]).unwrap())
        .collect();
    let out = forward_timesteps(&spec, &leaves, &SnnInput::Temporal(frames), true, &mut rng(0)).unwrap();
    let loss = ce_loss(&out.logits, &labels).unwrap();
    let engine_loss = loss.item().unwrap();
    let grads = loss.backward().unwrap();

    let pairs = [
        (grads.get_or_zeros(&leaves[0].weight).to_vec(), &oracle.w1),
        (grads.get_or_zeros(&leaves[0].bias).to_vec(), &oracle.b1),
        (grads.get_or_zeros(&leaves[1].weight).to_vec(), &oracle.w2),
        (grads.get_or_zeros(&leaves[1].bias).to_vec(), &oracle.b2),
    ];
    let mut max_abs_error = (engine_loss - oracle.loss).abs();
    let mut gradient_norm = 0.0;
    for (engine, expected) in &pairs {
        for (a, b) in engine.iter().zip(expected.iter()) {
            max_abs_error = max_abs_error.max((a - b).abs());
            gradient_norm += b * b;
        }
    }
    OracleComparison {
        max_abs_error,
        open_windows: oracle.open_windows,
        gradient_norm: gradient_norm.sqrt(),
    }
}

pub struct FdResult {
    pub op: &'static str,
    pub instances: usize,
    pub worst: f64,
}

/// Random-instance finite-difference sweep over the differentiable ops.
/// Inputs are drawn from `[-2, 2]`.
pub fn fd_suite(instances: usize, seed: u64) -> Vec<FdResult> {
    let mut r = rng(seed);
    let mut results = Vec::new();
    let mut run = |op: &'static str, check: &mut dyn FnMut(&mut rand_chacha::ChaCha8Rng) -> f64| {
        let worst = (0..instances).map(|_| check(&mut r)).fold(0.0, f64::max);
        results.push(FdResult { op, instances, worst });
    };

    run("matmul", &mut |r| {
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let a = uniform(r, &[m, k], -2.0, 2.0);
        let b = uniform(r, &[k, n], -2.0, 2.0);
        let p = uniform(r, &[m, n], -1.0, 1.0);
        let ea = fd_relative_error(&a, &|x| project(&x.matmul(&b).unwrap(), &p));
        let eb = fd_relative_error(&b, &|x| project(&a.matmul(x).unwrap(), &p));
        ea.max(eb)
    });
    run("conv2d", &mut |r| {
        let (n, c, f) = (r.gen_range(1..3), r.gen_range(1..3), r.gen_range(1..3));
        let (h, w) = (r.gen_range(2..5), r.gen_range(2..5));
        let x = uniform(r, &[n, c, h, w], -2.0, 2.0);
        let k = uniform(r, &[f, c, 3, 3], -2.0, 2.0);
        let p = uniform(r, &[n, f, h, w], -1.0, 1.0);
        let ex = fd_relative_error(&x, &|v| project(&v.conv2d(&k).unwrap(), &p));
        let ek = fd_relative_error(&k, &|v| project(&x.conv2d(v).unwrap(), &p));
        ex.max(ek)
    });
    run("avgpool2", &mut |r| {
        let (n, c) = (r.gen_range(1..3), r.gen_range(1..3));
        let (h, w) = (2 * r.gen_range(1..4), 2 * r.gen_range(1..4));
        let x = uniform(r, &[n, c, h, w], -2.0, 2.0);
        let p = uniform(r, &[n, c, h / 2, w / 2], -1.0, 1.0);
        fd_relative_error(&x, &|v| project(&v.avgpool2().unwrap(), &p))
    });
    run("log_softmax", &mut |r| {
        let (n, c) = (r.gen_range(1..4), r.gen_range(2..7));
        let x = uniform(r, &[n, c], -2.0, 2.0);
        let p = uniform(r, &[n, c], -1.0, 1.0);
        fd_relative_error(&x, &|v| project(&v.log_softmax().unwrap(), &p))
    });
    run("ce_loss", &mut |r| {
        let (n, c, steps) = (r.gen_range(1..5), r.gen_range(2..7), r.gen_range(1..4));
        let logits: Vec<Tensor<f64>> = (0..steps).map(|_| uniform(r, &[n, c], -2.0, 2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        let which = r.gen_range(0..steps);
        fd_relative_error(&logits[which], &|v| {
            let mut steps = logits.clone();
            steps[which] = v.clone();
            ce_loss(&steps, &labels).unwrap()
        })
    });
    results
}
