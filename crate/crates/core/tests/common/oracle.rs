//! Scalar, hand-unrolled forward and backward pass of a two-layer LIF network
//! (`in -> fc -> lif -> fc readout`) over `T` steps with softmax
//! cross-entropy on the step-summed readout. Written independently of the
//! tensor engine: plain loops over `f64`, adjoints derived by hand.

pub struct OracleNet {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    /// `n_in × n_hidden`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `n_hidden × n_out`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub alpha: f64,
    pub theta: f64,
    pub width: f64,
}

pub struct OracleGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub loss: f64,
    /// Steps at which the surrogate window was open, per sample and neuron.
    pub open_windows: usize,
}

fn surrogate(d: f64, width: f64) -> f64 {
    if d.abs() <= width {
        0.5
    } else {
        0.0
    }
}

impl OracleNet {
    /// `x[t][n]` is the input vector of sample `n` at step `t`.
    pub fn gradients(&self, x: &[Vec<Vec<f64>>], labels: &[usize]) -> OracleGrads {
        let steps = x.len();
        let batch = labels.len();
        let (ni, nh, no) = (self.n_in, self.n_hidden, self.n_out);
        let mut g = OracleGrads {
            w1: vec![0.0; ni * nh],
            b1: vec![0.0; nh],
            w2: vec![0.0; nh * no],
            b2: vec![0.0; no],
            loss: 0.0,
            open_windows: 0,
        };
        for n in 0..batch {
            // forward, keeping every step
            let mut u = vec![vec![0.0; nh]; steps];
            let mut s = vec![vec![0.0; nh]; steps];
            let mut logits = self.b2.iter().map(|b| b * steps as f64).collect::<Vec<_>>();
            for t in 0..steps {
                for j in 0..nh {
                    let mut current = self.b1[j];
                    for i in 0..ni {
                        current += x[t][n][i] * self.w1[i * nh + j];
                    }
                    let carried = if t == 0 { 0.0 } else { self.alpha * u[t - 1][j] * (1.0 - s[t - 1][j]) };
                    u[t][j] = carried + current;
                    s[t][j] = if u[t][j] >= self.theta { 1.0 } else { 0.0 };
                    for k in 0..no {
                        logits[k] += s[t][j] * self.w2[j * no + k];
                    }
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            g.loss += (z.ln() + max - logits[labels[n]]) / batch as f64;

            // dL/dlogits, identical for every step's readout
            let d_logits: Vec<f64> = (0..no)
                .map(|k| ((logits[k] - max).exp() / z - if k == labels[n] { 1.0 } else { 0.0 }) / batch as f64)
                .collect();
            for k in 0..no {
                g.b2[k] += d_logits[k] * steps as f64;
            }

            // reverse sweep; du_next is dL/du[t+1]
            let mut du_next = vec![0.0; nh];
            for t in (0..steps).rev() {
                for j in 0..nh {
                    let mut ds = 0.0;
                    for k in 0..no {
                        g.w2[j * no + k] += s[t][j] * d_logits[k];
                        ds += d_logits[k] * self.w2[j * no + k];
                    }
                    if t + 1 < steps {
                        // u[t+1] = alpha·u[t]·(1 - s[t]) + I[t+1]
                        ds += du_next[j] * (-self.alpha * u[t][j]);
                    }
                    let sg = surrogate(u[t][j] - self.theta, self.width);
                    if sg != 0.0 {
                        g.open_windows += 1;
                    }
                    let mut du = ds * sg;
                    if t + 1 < steps {
                        du += du_next[j] * self.alpha * (1.0 - s[t][j]);
                    }
                    du_next[j] = du;
                    g.b1[j] += du;
                    for i in 0..ni {
                        g.w1[i * nh + j] += x[t][n][i] * du;
                    }
                }
            }
        }
        g
    }
}
