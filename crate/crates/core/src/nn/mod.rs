//! A self-contained CNN stack: convolution, batch normalization, ReLU,
//! max pooling, fully-connected, dropout and softmax layers with
//! cross-entropy + L2 loss, plain SGD training, and feature-map
//! extraction at any layer.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod network;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, TrainMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::{
    batchnorm_forward_infer, batchnorm_forward_train, conv_forward, dropout_forward_train,
    fc_forward, maxpool_forward, relu, softmax_rows, softmax_vec,
};
pub use loss::{cross_entropy, l2_penalty, l2_regularized_loss, Prediction};
pub use network::{LayerGrads, LayerParams, Network};
pub use train::{sgd_step, train, MetricLog, MetricRow, Sample};

/// One layer of the architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { kernel: usize, filters: usize, pad: usize, stride: usize },
    BatchNorm { epsilon: f64 },
    Relu,
    MaxPool { size: usize, stride: usize },
    FullyConnected { outputs: usize },
    Dropout { rate: f64 },
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

/// Architecture description: input geometry plus an ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

/// Spatial size after a convolution: (W1 - F + 2P)/S + 1.
///
/// The quotient must be exact and non-negative; anything else is invalid
/// layer geometry.
pub fn output_size(w1: usize, f: usize, p: usize, s: usize) -> Result<usize> {
    let err = Error::InvalidGeometry { input: w1, kernel: f, pad: p, stride: s };
    if s == 0 || f == 0 {
        return Err(err);
    }
    let numerator = w1 as isize - f as isize + 2 * p as isize;
    if numerator < 0 || numerator as usize % s != 0 {
        return Err(err);
    }
    Ok(numerator as usize / s + 1)
}

/// Spatial size after pooling; odd leftovers are floored away
/// (windows must lie fully inside the input).
pub fn pool_output_size(dim: usize, size: usize, stride: usize) -> Result<usize> {
    if size == 0 || stride == 0 || dim < size {
        return Err(Error::InvalidGeometry { input: dim, kernel: size, pad: 0, stride });
    }
    Ok((dim - size) / stride + 1)
}

/// Output shape (channels, height, width) of each layer, plus the network
/// input shape at index 0.
pub fn layer_shapes(config: &NetworkConfig) -> Result<Vec<(usize, usize, usize)>> {
    let mut shapes = Vec::with_capacity(config.layers.len() + 1);
    let mut c = config.input.channels;
    let mut h = config.input.height;
    let mut w = config.input.width;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Config("input shape must be non-zero".into()));
    }
    shapes.push((c, h, w));
    for spec in &config.layers {
        match *spec {
            LayerSpec::Conv { kernel, filters, pad, stride } => {
                if kernel % 2 == 0 || kernel == 0 {
                    return Err(Error::Config(format!("conv kernel {kernel} must be odd and >= 1")));
                }
                if filters == 0 || stride == 0 {
                    return Err(Error::Config("conv filters and stride must be >= 1".into()));
                }
                h = output_size(h, kernel, pad, stride)?;
                w = output_size(w, kernel, pad, stride)?;
                c = filters;
            }
            LayerSpec::BatchNorm { epsilon } => {
                if epsilon <= 0.0 {
                    return Err(Error::Config(format!("batch-norm epsilon {epsilon} must be > 0")));
                }
            }
            LayerSpec::Relu => {}
            LayerSpec::MaxPool { size, stride } => {
                h = pool_output_size(h, size, stride)?;
                w = pool_output_size(w, size, stride)?;
            }
            LayerSpec::FullyConnected { outputs } => {
                if outputs == 0 {
                    return Err(Error::Config("fully-connected outputs must be >= 1".into()));
                }
                c = outputs;
                h = 1;
                w = 1;
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate} must be in [0, 1)")));
                }
            }
            LayerSpec::Softmax => {}
        }
        shapes.push((c, h, w));
    }
    Ok(shapes)
}

impl NetworkConfig {
    /// Geometry-only check; used when assembling ad-hoc stacks in tests.
    pub fn shape_check(&self) -> Result<Vec<(usize, usize, usize)>> {
        layer_shapes(self)
    }

    /// Full architectural contract: geometry composes, every convolution is
    /// followed by batch normalization then ReLU, and the network ends with
    /// an optional dropout, a fully-connected layer sized to the class
    /// count, and softmax.
    pub fn validate(&self) -> Result<Vec<(usize, usize, usize)>> {
        let shapes = layer_shapes(self)?;
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let n = self.layers.len();
        for (i, spec) in self.layers.iter().enumerate() {
            if let LayerSpec::Conv { .. } = spec {
                let bn = matches!(self.layers.get(i + 1), Some(LayerSpec::BatchNorm { .. }));
                let act = matches!(self.layers.get(i + 2), Some(LayerSpec::Relu));
                if !bn || !act {
                    return Err(Error::Config(format!(
                        "convolution at layer {i} must be followed by batch_norm then relu"
                    )));
                }
            }
        }
        if n < 2 || !matches!(self.layers[n - 1], LayerSpec::Softmax) {
            return Err(Error::Config("network must end with softmax".into()));
        }
        match self.layers[n - 2] {
            LayerSpec::FullyConnected { outputs } if outputs == self.classes => {}
            _ => {
                return Err(Error::Config(
                    "a fully-connected layer sized to the class count must precede softmax".into(),
                ))
            }
        }
        Ok(shapes)
    }

    /// Index of the `ordinal`-th ReLU layer (1-based), the extraction point
    /// for fingerprints.
    pub fn relu_index(&self, ordinal: usize) -> Result<usize> {
        let mut seen = 0;
        for (i, spec) in self.layers.iter().enumerate() {
            if matches!(spec, LayerSpec::Relu) {
                seen += 1;
                if seen == ordinal {
                    return Ok(i);
                }
            }
        }
        Err(Error::Config(format!(
            "network has {seen} relu layers, ordinal {ordinal} requested"
        )))
    }

    /// Indexes of convolutional layers.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}

fn conv_block(kernel: usize, filters: usize) -> [LayerSpec; 4] {
    [
        LayerSpec::Conv { kernel, filters, pad: 1, stride: 1 },
        LayerSpec::BatchNorm { epsilon: 1e-5 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2, stride: 2 },
    ]
}

/// Desk-scale default: 64x64 inputs, three conv blocks (kernels 3/5/7,
/// channels 32/32/16), dropout on the fully-connected input, four classes.
pub fn desk_scale_config(dropout_rate: f64) -> NetworkConfig {
    let mut layers = Vec::new();
    layers.extend(conv_block(3, 32));
    layers.extend(conv_block(5, 32));
    layers.extend(conv_block(7, 16));
    layers.push(LayerSpec::Dropout { rate: dropout_rate });
    layers.push(LayerSpec::FullyConnected { outputs: 4 });
    layers.push(LayerSpec::Softmax);
    NetworkConfig {
        input: InputShape { width: 64, height: 64, channels: 1 },
        layers,
        classes: 4,
    }
}

/// Full-scale architecture: five conv blocks (kernels 3/5/7/9/11, channels
/// 128/128/64/64/64) on 266x266 inputs. Constructible for geometry checks;
/// training it is outside the desk-scale budget.
pub fn full_scale_config(dropout_rate: f64) -> NetworkConfig {
    let mut layers = Vec::new();
    layers.extend(conv_block(3, 128));
    layers.extend(conv_block(5, 128));
    layers.extend(conv_block(7, 64));
    layers.extend(conv_block(9, 64));
    layers.extend(conv_block(11, 64));
    layers.push(LayerSpec::Dropout { rate: dropout_rate });
    layers.push(LayerSpec::FullyConnected { outputs: 4 });
    layers.push(LayerSpec::Softmax);
    NetworkConfig {
        input: InputShape { width: 266, height: 266, channels: 1 },
        layers,
        classes: 4,
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: u32,
    pub val_fraction: f64,
    /// Validate every this many iterations.
    pub val_frequency: u64,
    pub l2_lambda: f64,
    /// Rate applied to dropout layers when building the default
    /// architectures; `train` itself honors the rates in the layer list.
    pub dropout_rate: f64,
    pub seed: u64,
    /// Fixed reduction order everywhere; two runs with the same seed
    /// produce bit-identical checkpoints.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            learning_rate: 1e-2,
            epochs: 10,
            val_fraction: 0.3,
            val_frequency: 5,
            l2_lambda: 1e-4,
            dropout_rate: 0.5,
            seed: 42,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must be in (0, 1)".into()));
        }
        if self.val_frequency == 0 {
            return Err(Error::Config("val_frequency must be >= 1".into()));
        }
        if self.l2_lambda < 0.0 {
            return Err(Error::Config("l2_lambda must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_size_examples() {
        assert_eq!(output_size(133, 5, 1, 1).unwrap(), 131);
        assert_eq!(output_size(266, 3, 1, 1).unwrap(), 266);
        assert!(matches!(output_size(4, 5, 0, 1), Err(Error::InvalidGeometry { .. })));
    }

    #[test]
    fn output_size_rejects_ragged_stride() {
        assert!(output_size(10, 3, 0, 2).is_err());
        assert_eq!(output_size(11, 3, 0, 2).unwrap(), 5);
    }

    #[test]
    fn pool_floors_odd_dimensions() {
        assert_eq!(pool_output_size(266, 2, 2).unwrap(), 133);
        assert_eq!(pool_output_size(133, 2, 2).unwrap(), 66);
        assert_eq!(pool_output_size(131, 2, 2).unwrap(), 65);
        assert!(pool_output_size(1, 2, 2).is_err());
    }

    #[test]
    fn full_scale_geometry_chain() {
        // 266 -> 266 -> 133 -> 131 -> 65 -> 61 -> 30 -> 24 -> 12 -> 4 -> 2
        let config = full_scale_config(0.5);
        let shapes = config.validate().unwrap();
        let relu2 = config.relu_index(2).unwrap();
        assert_eq!(shapes[relu2 + 1], (128, 131, 131));
        let fc_index = config.layers.len() - 2;
        assert_eq!(shapes[fc_index], (64, 2, 2));
        assert_eq!(*shapes.last().unwrap(), (4, 1, 1));
    }

    #[test]
    fn desk_scale_geometry_chain() {
        let config = desk_scale_config(0.5);
        let shapes = config.validate().unwrap();
        let relu2 = config.relu_index(2).unwrap();
        assert_eq!(shapes[relu2 + 1], (32, 30, 30));
        assert_eq!(*shapes.last().unwrap(), (4, 1, 1));
    }

    #[test]
    fn validate_requires_bn_relu_after_conv() {
        let mut config = desk_scale_config(0.5);
        config.layers.remove(1); // drop the first batch_norm
        assert!(config.validate().is_err());
    }

    #[test]
    fn validate_requires_final_fc_softmax() {
        let mut config = desk_scale_config(0.5);
        config.layers.pop();
        assert!(config.validate().is_err());
        let mut config = desk_scale_config(0.5);
        if let LayerSpec::FullyConnected { outputs } = &mut config.layers[13] {
            *outputs = 7;
        } else {
            panic!("expected fully-connected at index 13");
        }
        assert!(config.validate().is_err());
    }

    #[test]
    fn layer_spec_serde_round_trip() {
        let config = desk_scale_config(0.5);
        let json = serde_json::to_string(&config).unwrap();
        let back: NetworkConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        assert!(json.contains("\"relu\""));
    }
}
