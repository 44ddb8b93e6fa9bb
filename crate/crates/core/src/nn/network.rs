//! Network assembly: parameter storage, the forward pass with caches, and
//! backpropagation of the regularized loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    batchnorm_backward, batchnorm_forward_infer, batchnorm_forward_train, conv_backward,
    conv_backward_params, conv_forward_padded, dropout_backward, dropout_forward_train,
    fc_backward, fc_forward,
    maxpool_backward, maxpool_forward, pad_batch, relu, relu_backward, softmax_backward,
    softmax_rows, BnBatchStats,
};
use crate::nn::loss::{cross_entropy, cross_entropy_backward, l2_regularized_loss};
use crate::nn::{LayerSpec, NetworkConfig};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Running-statistics momentum for batch normalization.
pub const BN_MOMENTUM: f64 = 0.9;

/// Learnable (and running) state of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv {
        /// `[filters, in_channels, k, k]`
        weights: Tensor,
        bias: Vec<f64>,
    },
    BatchNorm {
        scale: Vec<f64>,
        shift: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Fc {
        /// `[inputs, outputs]`
        weights: Tensor,
        bias: Vec<f64>,
    },
    None,
}

/// Parameter gradients, aligned with [`LayerParams`].
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv { dw: Vec<f64>, db: Vec<f64> },
    BatchNorm { dscale: Vec<f64>, dshift: Vec<f64> },
    Fc { dw: Vec<f64>, db: Vec<f64> },
    None,
}

enum Aux {
    None,
    ConvPadded(Tensor),
    Bn(BnBatchStats),
    Pool(Vec<usize>),
    Dropout(Vec<f64>),
}

/// Cached state of one forward evaluation, consumed by `backward` and by
/// activation extraction.
pub struct ForwardPass {
    input: Tensor,
    outputs: Vec<Tensor>,
    aux: Vec<Aux>,
    train_mode: bool,
}

impl ForwardPass {
    /// Post-layer activations; index into the layer list.
    pub fn layer_output(&self, index: usize) -> Result<&Tensor> {
        self.outputs.get(index).ok_or(Error::IndexOutOfRange {
            index,
            limit: self.outputs.len(),
        })
    }

    /// Final `[N, classes]` probability rows.
    pub fn probabilities(&self) -> &Tensor {
        self.outputs.last().expect("networks have at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: Vec<LayerParams>,
    shapes: Vec<(usize, usize, usize)>,
}

impl Network {
    /// Fresh network with uniform ±sqrt(6/fan_in) weights drawn from `rng`
    /// and zero biases.
    pub fn init(config: NetworkConfig, rng: &mut Stream) -> Result<Self> {
        let shapes = config.shape_check()?;
        let mut params = Vec::with_capacity(config.layers.len());
        for (i, spec) in config.layers.iter().enumerate() {
            let (in_c, in_h, in_w) = shapes[i];
            let p = match *spec {
                LayerSpec::Conv { kernel, filters, .. } => {
                    let fan_in = in_c * kernel * kernel;
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let numel = filters * in_c * kernel * kernel;
                    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
                    LayerParams::Conv {
                        weights: Tensor::from_vec(&[filters, in_c, kernel, kernel], data)?,
                        bias: vec![0.0; filters],
                    }
                }
                LayerSpec::BatchNorm { .. } => LayerParams::BatchNorm {
                    scale: vec![1.0; in_c],
                    shift: vec![0.0; in_c],
                    running_mean: vec![0.0; in_c],
                    running_var: vec![1.0; in_c],
                },
                LayerSpec::FullyConnected { outputs } => {
                    let fan_in = in_c * in_h * in_w;
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let data: Vec<f64> =
                        (0..fan_in * outputs).map(|_| rng.gen_range(-limit..limit)).collect();
                    LayerParams::Fc {
                        weights: Tensor::from_vec(&[fan_in, outputs], data)?,
                        bias: vec![0.0; outputs],
                    }
                }
                _ => LayerParams::None,
            };
            params.push(p);
        }
        Ok(Self { config, params, shapes })
    }

    /// Rebuild a network from stored parameters, checking shapes.
    pub fn from_params(config: NetworkConfig, params: Vec<LayerParams>) -> Result<Self> {
        let shapes = config.shape_check()?;
        if params.len() != config.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                config.layers.len()
            )));
        }
        for (i, (spec, p)) in config.layers.iter().zip(&params).enumerate() {
            let (in_c, in_h, in_w) = shapes[i];
            let ok = match (spec, p) {
                (LayerSpec::Conv { kernel, filters, .. }, LayerParams::Conv { weights, bias }) => {
                    weights.shape() == [*filters, in_c, *kernel, *kernel] && bias.len() == *filters
                }
                (
                    LayerSpec::BatchNorm { .. },
                    LayerParams::BatchNorm { scale, shift, running_mean, running_var },
                ) => [scale.len(), shift.len(), running_mean.len(), running_var.len()] == [in_c; 4],
                (LayerSpec::FullyConnected { outputs }, LayerParams::Fc { weights, bias }) => {
                    weights.shape() == [in_c * in_h * in_w, *outputs] && bias.len() == *outputs
                }
                (
                    LayerSpec::Relu | LayerSpec::MaxPool { .. } | LayerSpec::Dropout { .. }
                    | LayerSpec::Softmax,
                    LayerParams::None,
                ) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::ShapeMismatch(format!(
                    "parameter block {i} does not match layer {:?}",
                    spec
                )));
            }
        }
        Ok(Self { config, params, shapes })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<LayerParams> {
        self.params
    }

    /// Output shape (c, h, w) of each layer; index 0 is the input shape.
    pub fn shapes(&self) -> &[(usize, usize, usize)] {
        &self.shapes
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let (c, h, w) = self.shapes[0];
        match batch.shape() {
            [_, bc, bh, bw] if *bc == c && *bh == h && *bw == w => Ok(()),
            other => Err(Error::ShapeMismatch(format!(
                "batch {other:?} does not match network input {c}x{h}x{w}"
            ))),
        }
    }

    /// Training-mode forward pass. Does not mutate the network; batch-norm
    /// running statistics are updated separately via [`Self::commit_batchnorm`].
    pub fn forward_train(&self, batch: &Tensor, dropout_rng: &mut Stream) -> Result<ForwardPass> {
        self.forward(batch, Some(dropout_rng))
    }

    /// Inference-mode forward pass: dropout off, batch norm on running stats.
    pub fn forward_infer(&self, batch: &Tensor) -> Result<ForwardPass> {
        self.forward(batch, None)
    }

    fn forward(&self, batch: &Tensor, mut dropout_rng: Option<&mut Stream>) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let train_mode = dropout_rng.is_some();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.config.layers.len());
        let mut aux: Vec<Aux> = Vec::with_capacity(self.config.layers.len());
        for (i, spec) in self.config.layers.iter().enumerate() {
            let input = if i == 0 { batch } else { &outputs[i - 1] };
            match (spec, &self.params[i]) {
                (LayerSpec::Conv { pad, stride, .. }, LayerParams::Conv { weights, bias }) => {
                    let input4 = as_batch4(input)?;
                    let padded = pad_batch(&input4, *pad)?;
                    let out = conv_forward_padded(&padded, weights, bias, *pad, *stride)?;
                    aux.push(Aux::ConvPadded(padded));
                    outputs.push(out);
                }
                (
                    LayerSpec::BatchNorm { epsilon },
                    LayerParams::BatchNorm { scale, shift, running_mean, running_var },
                ) => {
                    if train_mode {
                        let (out, stats) = batchnorm_forward_train(input, scale, shift, *epsilon)?;
                        aux.push(Aux::Bn(stats));
                        outputs.push(out);
                    } else {
                        let out = batchnorm_forward_infer(
                            input,
                            scale,
                            shift,
                            running_mean,
                            running_var,
                            *epsilon,
                        )?;
                        aux.push(Aux::None);
                        outputs.push(out);
                    }
                }
                (LayerSpec::Relu, _) => {
                    aux.push(Aux::None);
                    outputs.push(relu(input));
                }
                (LayerSpec::MaxPool { size, stride }, _) => {
                    let input4 = as_batch4(input)?;
                    let (out, argmax) = maxpool_forward(&input4, *size, *stride)?;
                    aux.push(Aux::Pool(argmax));
                    outputs.push(out);
                }
                (LayerSpec::FullyConnected { .. }, LayerParams::Fc { weights, bias }) => {
                    aux.push(Aux::None);
                    outputs.push(fc_forward(input, weights, bias)?);
                }
                (LayerSpec::Dropout { rate }, _) => {
                    if train_mode {
                        let rng = dropout_rng.as_deref_mut().expect("train mode carries rng");
                        let (out, mask) = dropout_forward_train(input, *rate, rng);
                        aux.push(Aux::Dropout(mask));
                        outputs.push(out);
                    } else {
                        aux.push(Aux::None);
                        outputs.push(input.clone());
                    }
                }
                (LayerSpec::Softmax, _) => {
                    let flat = flatten2(input)?;
                    aux.push(Aux::None);
                    outputs.push(softmax_rows(&flat)?);
                }
                (spec, _) => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter block {i} does not match layer {spec:?}"
                    )))
                }
            }
        }
        Ok(ForwardPass { input: batch.clone(), outputs, aux, train_mode })
    }

    /// Fold the batch statistics recorded during a training forward pass
    /// into the running statistics.
    pub fn commit_batchnorm(&mut self, pass: &ForwardPass) {
        for (i, a) in pass.aux.iter().enumerate() {
            if let Aux::Bn(stats) = a {
                if let LayerParams::BatchNorm { running_mean, running_var, .. } = &mut self.params[i]
                {
                    for c in 0..running_mean.len() {
                        running_mean[c] = BN_MOMENTUM * running_mean[c]
                            + (1.0 - BN_MOMENTUM) * stats.mean[c];
                        running_var[c] =
                            BN_MOMENTUM * running_var[c] + (1.0 - BN_MOMENTUM) * stats.var[c];
                    }
                }
            }
        }
    }

    /// Batch-sum cross-entropy plus the L2 penalty.
    pub fn regularized_loss(&self, pass: &ForwardPass, labels: &Tensor, lambda: f64) -> Result<f64> {
        let j = cross_entropy(pass.probabilities(), labels)?;
        Ok(l2_regularized_loss(j, self.weight_blocks(), lambda))
    }

    /// One full evaluation of the training loss for a fresh dropout stream;
    /// the finite-difference harness drives this.
    pub fn training_loss(
        &self,
        batch: &Tensor,
        labels: &Tensor,
        lambda: f64,
        dropout_rng: &mut Stream,
    ) -> Result<f64> {
        let pass = self.forward_train(batch, dropout_rng)?;
        self.regularized_loss(&pass, labels, lambda)
    }

    fn weight_blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.params.iter().filter_map(|p| match p {
            LayerParams::Conv { weights, .. } | LayerParams::Fc { weights, .. } => {
                Some(weights.data())
            }
            _ => None,
        })
    }

    /// Gradients of the regularized batch-sum loss with respect to every
    /// learnable parameter. Requires a training-mode pass.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        labels: &Tensor,
        lambda: f64,
    ) -> Result<Vec<LayerGrads>> {
        if !pass.train_mode {
            return Err(Error::Config("backward requires a training-mode forward pass".into()));
        }
        let mut grads: Vec<LayerGrads> = (0..self.config.layers.len())
            .map(|_| LayerGrads::None)
            .collect();
        let mut d = cross_entropy_backward(pass.probabilities(), labels)?;
        for i in (0..self.config.layers.len()).rev() {
            let input = if i == 0 { &pass.input } else { &pass.outputs[i - 1] };
            match (&self.config.layers[i], &self.params[i], &pass.aux[i]) {
                (LayerSpec::Softmax, _, _) => {
                    d = softmax_backward(&pass.outputs[i], &d)?;
                }
                (LayerSpec::FullyConnected { .. }, LayerParams::Fc { weights, .. }, _) => {
                    let (dinput, dw, db) = fc_backward(input, weights, &d)?;
                    grads[i] = LayerGrads::Fc { dw, db };
                    d = dinput;
                }
                (LayerSpec::Dropout { .. }, _, Aux::Dropout(mask)) => {
                    d = dropout_backward(mask, &d);
                }
                (LayerSpec::MaxPool { .. }, _, Aux::Pool(argmax)) => {
                    let reshaped = d.reshape(pass.outputs[i].shape())?;
                    d = maxpool_backward(input.shape(), argmax, &reshaped);
                }
                (LayerSpec::Relu, _, _) => {
                    let reshaped = d.reshape(pass.outputs[i].shape())?;
                    d = relu_backward(&pass.outputs[i], &reshaped);
                }
                (
                    LayerSpec::BatchNorm { epsilon },
                    LayerParams::BatchNorm { scale, .. },
                    Aux::Bn(stats),
                ) => {
                    let (dinput, dscale, dshift) =
                        batchnorm_backward(input, &d, scale, stats, *epsilon)?;
                    grads[i] = LayerGrads::BatchNorm { dscale, dshift };
                    d = dinput;
                }
                (
                    LayerSpec::Conv { pad, stride, .. },
                    LayerParams::Conv { weights, .. },
                    Aux::ConvPadded(padded),
                ) => {
                    let reshaped = d.reshape(pass.outputs[i].shape())?;
                    if i == 0 {
                        // nothing upstream consumes the input gradient
                        let (dw, db) =
                            conv_backward_params(padded, weights, &reshaped, *pad, *stride)?;
                        grads[i] = LayerGrads::Conv { dw, db };
                    } else {
                        let (dinput, dw, db) =
                            conv_backward(padded, weights, &reshaped, *pad, *stride)?;
                        grads[i] = LayerGrads::Conv { dw, db };
                        d = dinput;
                    }
                }
                (spec, _, _) => {
                    return Err(Error::ShapeMismatch(format!(
                        "backward cache missing for layer {i} ({spec:?})"
                    )))
                }
            }
        }
        if lambda > 0.0 {
            for (g, p) in grads.iter_mut().zip(&self.params) {
                match (g, p) {
                    (LayerGrads::Conv { dw, .. }, LayerParams::Conv { weights, .. })
                    | (LayerGrads::Fc { dw, .. }, LayerParams::Fc { weights, .. }) => {
                        for (gv, &wv) in dw.iter_mut().zip(weights.data()) {
                            *gv += lambda * wv;
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(grads)
    }

    /// All learnable parameters flattened in declaration order
    /// (running statistics excluded).
    pub fn learnable_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for p in &self.params {
            match p {
                LayerParams::Conv { weights, bias } | LayerParams::Fc { weights, bias } => {
                    v.extend_from_slice(weights.data());
                    v.extend_from_slice(bias);
                }
                LayerParams::BatchNorm { scale, shift, .. } => {
                    v.extend_from_slice(scale);
                    v.extend_from_slice(shift);
                }
                LayerParams::None => {}
            }
        }
        v
    }

    pub fn set_learnable_vector(&mut self, values: &[f64]) -> Result<()> {
        let mut offset = 0;
        let mut take = |n: usize| -> Result<&[f64]> {
            let slice = values
                .get(offset..offset + n)
                .ok_or_else(|| Error::ShapeMismatch("learnable vector too short".into()))?;
            offset += n;
            Ok(slice)
        };
        for p in &mut self.params {
            match p {
                LayerParams::Conv { weights, bias } | LayerParams::Fc { weights, bias } => {
                    let n = weights.numel();
                    let w = take(n)?.to_vec();
                    weights.data_mut().copy_from_slice(&w);
                    let b = take(bias.len())?.to_vec();
                    bias.copy_from_slice(&b);
                }
                LayerParams::BatchNorm { scale, shift, .. } => {
                    let s = take(scale.len())?.to_vec();
                    scale.copy_from_slice(&s);
                    let sh = take(shift.len())?.to_vec();
                    shift.copy_from_slice(&sh);
                }
                LayerParams::None => {}
            }
        }
        if offset != values.len() {
            return Err(Error::ShapeMismatch("learnable vector too long".into()));
        }
        Ok(())
    }

    /// Gradients flattened in the same order as [`Self::learnable_vector`].
    pub fn grads_vector(&self, grads: &[LayerGrads]) -> Vec<f64> {
        let mut v = Vec::new();
        for g in grads {
            match g {
                LayerGrads::Conv { dw, db } | LayerGrads::Fc { dw, db } => {
                    v.extend_from_slice(dw);
                    v.extend_from_slice(db);
                }
                LayerGrads::BatchNorm { dscale, dshift } => {
                    v.extend_from_slice(dscale);
                    v.extend_from_slice(dshift);
                }
                LayerGrads::None => {}
            }
        }
        v
    }
}

fn as_batch4(t: &Tensor) -> Result<Tensor> {
    match t.shape() {
        [_, _, _, _] => Ok(t.clone()),
        other => Err(Error::ShapeMismatch(format!("expected [N,C,H,W] tensor, got {other:?}"))),
    }
}

fn flatten2(t: &Tensor) -> Result<Tensor> {
    let n = t.shape()[0];
    t.reshape(&[n, t.numel() / n])
}
