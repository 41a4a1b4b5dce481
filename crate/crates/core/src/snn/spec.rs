//! Declarative network layout and the hyphen-separated architecture grammar
//! (`128C3-256C3-AP2-...-1024FC-512FC-Out`).

use serde::{Deserialize, Serialize};

use super::{LifParams, ModelError};

/// The CIFARNet stack, channel counts kept verbatim.
pub const CIFARNET: &str = "128C3-256C3-AP2-512C3-AP2-1023C3-512C3-1024FC-512FC-Out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv3x3 { in_channels: usize, out_channels: usize },
    AvgPool2,
    FullyConnected { in_features: usize, out_features: usize },
    Dropout { p: f64 },
    Lif(LifParams),
    /// Non-spiking linear readout whose per-timestep output is summed into
    /// the logits.
    OutputAccumulator { in_features: usize, classes: usize },
}

impl LayerSpec {
    pub fn has_weights(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv3x3 { .. } | LayerSpec::FullyConnected { .. } | LayerSpec::OutputAccumulator { .. }
        )
    }

    /// Weight tensor shape. Fully connected weights are stored `in×out`.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv3x3 { in_channels, out_channels } => Some(vec![out_channels, in_channels, 3, 3]),
            LayerSpec::FullyConnected { in_features, out_features } => Some(vec![in_features, out_features]),
            LayerSpec::OutputAccumulator { in_features, classes } => Some(vec![in_features, classes]),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv3x3 { in_channels, .. } => Some(in_channels * 9),
            LayerSpec::FullyConnected { in_features, .. } | LayerSpec::OutputAccumulator { in_features, .. } => {
                Some(in_features)
            }
            _ => None,
        }
    }

    pub fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv3x3 { out_channels, .. } => Some(out_channels),
            LayerSpec::FullyConnected { out_features, .. } => Some(out_features),
            LayerSpec::OutputAccumulator { classes, .. } => Some(classes),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv3x3 { .. } => "conv",
            LayerSpec::AvgPool2 => "pool",
            LayerSpec::FullyConnected { .. } => "fc",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Lif(_) => "lif",
            LayerSpec::OutputAccumulator { .. } => "out",
        }
    }
}

/// Shape of one input sample, channels first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
    pub timesteps: usize,
}

/// Knobs applied while expanding an architecture string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub lif: LifParams,
    /// Dropout probability after fully connected layers; 0 disables.
    pub dropout_p: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            lif: LifParams::default(),
            dropout_p: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Token {
    Conv(usize),
    Pool,
    Fc(usize),
    Out,
}

fn parse_token(raw: &str) -> Result<Token, ModelError> {
    let bad = || ModelError::Config(format!("unrecognised architecture token `{raw}`"));
    let count = |digits: &str| -> Result<usize, ModelError> {
        match digits.parse::<usize>() {
            Ok(0) | Err(_) => Err(bad()),
            Ok(n) => Ok(n),
        }
    };
    if raw.eq_ignore_ascii_case("out") {
        Ok(Token::Out)
    } else if raw.eq_ignore_ascii_case("ap2") {
        Ok(Token::Pool)
    } else if let Some(n) = raw.strip_suffix("C3") {
        Ok(Token::Conv(count(n)?))
    } else if let Some(n) = raw.strip_suffix("FC") {
        Ok(Token::Fc(count(n)?))
    } else {
        Err(bad())
    }
}

impl NetworkSpec {
    /// Expands an architecture string into layers.
    ///
    /// Each `nC3` becomes conv → (pools that follow it) → LIF, each `nFC`
    /// becomes fc → dropout → LIF, and `Out` becomes the output accumulator.
    /// Features are flattened implicitly at the first fully connected layer.
    pub fn from_architecture(
        arch: &str,
        input: InputShape,
        classes: usize,
        timesteps: usize,
        opts: &BuildOptions,
    ) -> Result<Self, ModelError> {
        opts.lif.validate()?;
        if !(0.0..1.0).contains(&opts.dropout_p) {
            return Err(ModelError::Config(format!("dropout probability must lie in [0, 1), got {}", opts.dropout_p)));
        }
        let tokens = arch
            .split('-')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(parse_token)
            .collect::<Result<Vec<_>, _>>()?;

        let (mut c, mut h, mut w) = (input.channels, input.height, input.width);
        let mut flat: Option<usize> = None;
        let mut layers = Vec::new();
        let mut pending_lif = false;
        let mut saw_out = false;
        for (i, token) in tokens.iter().enumerate() {
            if saw_out {
                return Err(ModelError::Config("`Out` must be the last architecture token".into()));
            }
            if pending_lif && token != &Token::Pool {
                layers.push(LayerSpec::Lif(opts.lif));
                pending_lif = false;
            }
            match *token {
                Token::Conv(filters) => {
                    if flat.is_some() {
                        return Err(ModelError::Config(format!("token {i}: convolution after a fully connected layer")));
                    }
                    layers.push(LayerSpec::Conv3x3 {
                        in_channels: c,
                        out_channels: filters,
                    });
                    c = filters;
                    pending_lif = true;
                }
                Token::Pool => {
                    if flat.is_some() || h % 2 != 0 || w % 2 != 0 {
                        return Err(ModelError::Config(format!(
                            "token {i}: cannot 2x2-pool a {h}x{w} feature map"
                        )));
                    }
                    layers.push(LayerSpec::AvgPool2);
                    h /= 2;
                    w /= 2;
                }
                Token::Fc(units) => {
                    let in_features = flat.unwrap_or(c * h * w);
                    layers.push(LayerSpec::FullyConnected {
                        in_features,
                        out_features: units,
                    });
                    if opts.dropout_p > 0.0 {
                        layers.push(LayerSpec::Dropout { p: opts.dropout_p });
                    }
                    layers.push(LayerSpec::Lif(opts.lif));
                    flat = Some(units);
                }
                Token::Out => {
                    layers.push(LayerSpec::OutputAccumulator {
                        in_features: flat.unwrap_or(c * h * w),
                        classes,
                    });
                    saw_out = true;
                }
            }
        }
        let spec = Self { input, layers, timesteps };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the layout invariants: a terminal output accumulator, a LIF
    /// layer after every hidden weight layer, and consistent shapes.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.timesteps == 0 {
            return Err(ModelError::Config("timesteps must be at least 1".into()));
        }
        match self.layers.last() {
            Some(LayerSpec::OutputAccumulator { classes, .. }) if *classes >= 1 => {}
            _ => return Err(ModelError::Config("network must end with an output accumulator".into())),
        }
        if self.layers.iter().filter(|l| matches!(l, LayerSpec::OutputAccumulator { .. })).count() != 1 {
            return Err(ModelError::Config("exactly one output accumulator is allowed".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let LayerSpec::Lif(p) = layer {
                p.validate()?;
            }
            if matches!(layer, LayerSpec::Conv3x3 { .. } | LayerSpec::FullyConnected { .. }) {
                let next = self.layers[i + 1..]
                    .iter()
                    .find(|l| !matches!(l, LayerSpec::AvgPool2 | LayerSpec::Dropout { .. }));
                if !matches!(next, Some(LayerSpec::Lif(_))) {
                    return Err(ModelError::Config(format!(
                        "layer {i} ({}) is not followed by a lif layer",
                        layer.kind()
                    )));
                }
            }
        }
        // shape walk
        let mut shape = vec![self.input.channels, self.input.height, self.input.width];
        for (i, layer) in self.layers.iter().enumerate() {
            let mismatch = |expected: usize| {
                ModelError::Config(format!(
                    "layer {i} ({}) expects {expected} inputs but receives shape {shape:?}",
                    layer.kind()
                ))
            };
            match *layer {
                LayerSpec::Conv3x3 { in_channels, out_channels } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(mismatch(in_channels));
                    }
                    shape[0] = out_channels;
                }
                LayerSpec::AvgPool2 => {
                    if shape.len() != 3 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
                        return Err(ModelError::Config(format!("layer {i} cannot pool shape {shape:?}")));
                    }
                    shape[1] /= 2;
                    shape[2] /= 2;
                }
                LayerSpec::FullyConnected { in_features, out_features } => {
                    if shape.iter().product::<usize>() != in_features {
                        return Err(mismatch(in_features));
                    }
                    shape = vec![out_features];
                }
                LayerSpec::OutputAccumulator { in_features, classes } => {
                    if shape.iter().product::<usize>() != in_features {
                        return Err(mismatch(in_features));
                    }
                    shape = vec![classes];
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(ModelError::Config(format!("layer {i}: dropout probability {p} outside [0, 1)")));
                    }
                }
                LayerSpec::Lif(_) => {}
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::OutputAccumulator { classes, .. }) => *classes,
            _ => 0,
        }
    }

    /// Indices (into `layers`) of layers carrying weights, in order.
    pub fn weight_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_weights())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn lif_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Lif(_)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Replaces the LIF parameters of every LIF layer.
    pub fn with_lif(mut self, params: LifParams) -> Self {
        for layer in &mut self.layers {
            if let LayerSpec::Lif(p) = layer {
                *p = params;
            }
        }
        self
    }
}
