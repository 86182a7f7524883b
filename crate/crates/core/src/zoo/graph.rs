//! Executable models compiled from an [`ArchitectureSpec`].
//!
//! Parameter names are stable and documented:
//! `conv<i>.kernel`, `conv<i>.bias`, `conv<i>.bn.gamma`, `conv<i>.bn.beta`
//! for the i-th convolution (1-based, counted through residual blocks),
//! `fc<i>.weight`, `fc<i>.bias`, `fc<i>.bn.*` for FC layers and
//! `dense.weight`, `dense.bias` for the softmax head. Batch-norm running
//! statistics are `<prefix>.bn.running_mean` / `.running_var`.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::batchnorm::BatchNormState;
use crate::nn::conv::ConvParams;
use crate::nn::dense::{linear_forward, softmax};
use crate::nn::pool::{global_avg_pool, maxpool1d};
use crate::nn::residual::{residual_block_infer, ConvBn, ParamCursor, ResidualBlock};
use crate::nn::tape::{Tape, Var};
use crate::nn::Mode;
use crate::rng::RandomSource;
use crate::tensor::{num_like::Scalar, Tensor};
use crate::zoo::spec::{ArchitectureSpec, LayerKind, TraceEntry};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    /// Convolution, optional batch norm, ReLU.
    Conv { index: usize, unit: ConvBn<T> },
    MaxPool,
    ResidualGroup {
        first_index: usize,
        blocks: Vec<ResidualBlock<T>>,
    },
    GlobalAvgPool,
    Flatten,
    /// Linear, optional batch norm, ReLU, dropout.
    FullyConnected {
        index: usize,
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        bn: Option<BatchNormState<T>>,
        dropout: f64,
    },
    /// Linear layer feeding the softmax.
    Dense { weight: Tensor<T>, bias: Tensor<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    spec: ArchitectureSpec,
    layers: Vec<Layer<T>>,
    mode: Mode,
}

/// Exact trainable-parameter count with a per-layer breakdown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub per_layer: Vec<(String, usize)>,
}

impl ParamCount {
    /// Millions, rounded to one decimal below 10M and to an integer above.
    pub fn rounded_label(&self) -> String {
        let m = self.total as f64 / 1e6;
        if m >= 10.0 {
            format!("{}M", m.round())
        } else {
            format!("{:.1}M", m)
        }
    }
}

fn glorot<T: Scalar>(dims: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut RandomSource) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = dims.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.uniform(-limit, limit))).collect();
    Tensor::from_vec(dims, data)
}

fn conv_unit<T: Scalar>(
    rf: usize,
    cin: usize,
    cout: usize,
    stride: usize,
    with_bn: bool,
    rng: &mut RandomSource,
) -> Result<ConvBn<T>> {
    let kernel = glorot(vec![rf, cin, cout], rf * cin, rf * cout, rng)?;
    let bias = if with_bn { None } else { Some(Tensor::zeros(vec![cout])?) };
    let bn = if with_bn {
        let mut bn = BatchNormState::new(cout)?;
        bn.init_running_stats();
        Some(bn)
    } else {
        None
    };
    Ok(ConvBn {
        conv: ConvParams::new(kernel, bias, stride)?,
        bn,
    })
}

fn relu<T: Scalar>(x: Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Builds a named architecture with Glorot-uniform weights drawn from `rng`.
pub fn build<T: Scalar>(name: &str, num_classes: usize, rng: &mut RandomSource) -> Result<ModelGraph<T>> {
    ModelGraph::from_spec(ArchitectureSpec::from_name(name, num_classes)?, rng)
}

impl<T: Scalar> ModelGraph<T> {
    /// Compiles `spec`. Weights are Glorot-uniform, biases and BN beta zero,
    /// BN gamma one, and running statistics explicitly set to mean 0 and
    /// variance 1 so an untrained model can run inference.
    pub fn from_spec(spec: ArchitectureSpec, rng: &mut RandomSource) -> Result<Self> {
        let trace = spec.shape_trace(spec.input_samples.max(spec.first_receptive_field()))?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut channels = 1usize;
        let mut conv_i = 0usize;
        let mut fc_i = 0usize;
        for l in &spec.layers {
            match l.kind {
                LayerKind::Conv => {
                    for r in 0..l.repeat {
                        conv_i += 1;
                        let stride = if r == 0 { l.stride } else { 1 };
                        let unit = conv_unit(l.rf, channels, l.out_channels, stride, l.with_bn, rng)?;
                        channels = l.out_channels;
                        layers.push(Layer::Conv { index: conv_i, unit });
                    }
                }
                LayerKind::ResblockGroup => {
                    let first_index = conv_i + 1;
                    let mut blocks = Vec::with_capacity(l.repeat);
                    for _ in 0..l.repeat {
                        let a = conv_unit(l.rf, channels, l.out_channels, 1, l.with_bn, rng)?;
                        let b = conv_unit(l.rf, l.out_channels, l.out_channels, 1, l.with_bn, rng)?;
                        blocks.push(ResidualBlock::new(a, b)?);
                        channels = l.out_channels;
                        conv_i += 2;
                    }
                    layers.push(Layer::ResidualGroup { first_index, blocks });
                }
                LayerKind::MaxPool4 => layers.push(Layer::MaxPool),
                LayerKind::GlobalAvgPool => layers.push(Layer::GlobalAvgPool),
                LayerKind::Flatten => {
                    let dim = trace
                        .iter()
                        .find(|e| e.layer == "flatten")
                        .map(|e| e.channels)
                        .expect("trace has a flatten row");
                    channels = dim;
                    layers.push(Layer::Flatten);
                }
                LayerKind::FcBlock => {
                    fc_i += 1;
                    let weight = glorot(vec![channels, l.out_channels], channels, l.out_channels, rng)?;
                    let bias = if l.with_bn { None } else { Some(Tensor::zeros(vec![l.out_channels])?) };
                    let bn = if l.with_bn {
                        let mut bn = BatchNormState::new(l.out_channels)?;
                        bn.init_running_stats();
                        Some(bn)
                    } else {
                        None
                    };
                    channels = l.out_channels;
                    layers.push(Layer::FullyConnected {
                        index: fc_i,
                        weight,
                        bias,
                        bn,
                        dropout: l.dropout,
                    });
                }
                LayerKind::DenseSoftmax => {
                    let weight = glorot(vec![channels, l.out_channels], channels, l.out_channels, rng)?;
                    let bias = Tensor::zeros(vec![l.out_channels])?;
                    layers.push(Layer::Dense { weight, bias });
                }
            }
        }
        Ok(ModelGraph {
            spec,
            layers,
            mode: Mode::Infer,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Convolutions plus FC layers plus the softmax dense.
    pub fn weight_layer_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv { .. } | Layer::FullyConnected { .. } | Layer::Dense { .. } => 1,
                Layer::ResidualGroup { blocks, .. } => 2 * blocks.len(),
                _ => 0,
            })
            .sum()
    }

    pub fn shape_trace(&self, input_time: usize) -> Result<Vec<TraceEntry>> {
        self.spec.shape_trace(input_time)
    }

    /// Trainable tensors in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { index, unit } => {
                    out.extend(unit.params().into_iter().map(|(n, t)| (format!("conv{index}.{n}"), t)));
                }
                Layer::ResidualGroup { first_index, blocks } => {
                    for (j, block) in blocks.iter().enumerate() {
                        for (k, unit) in [&block.first, &block.second].into_iter().enumerate() {
                            let i = first_index + 2 * j + k;
                            out.extend(unit.params().into_iter().map(|(n, t)| (format!("conv{i}.{n}"), t)));
                        }
                    }
                }
                Layer::FullyConnected {
                    index,
                    weight,
                    bias,
                    bn,
                    ..
                } => {
                    out.push((format!("fc{index}.weight"), weight));
                    if let Some(b) = bias {
                        out.push((format!("fc{index}.bias"), b));
                    }
                    if let Some(bn) = bn {
                        out.push((format!("fc{index}.bn.gamma"), &bn.gamma));
                        out.push((format!("fc{index}.bn.beta"), &bn.beta));
                    }
                }
                Layer::Dense { weight, bias } => {
                    out.push(("dense.weight".into(), weight));
                    out.push(("dense.bias".into(), bias));
                }
                Layer::MaxPool | Layer::GlobalAvgPool | Layer::Flatten => {}
            }
        }
        out
    }

    /// Same order and names as [`Self::params`].
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { index, unit } => {
                    let index = *index;
                    out.extend(
                        unit.params_mut()
                            .into_iter()
                            .map(|(n, t)| (format!("conv{index}.{n}"), t)),
                    );
                }
                Layer::ResidualGroup { first_index, blocks } => {
                    let first_index = *first_index;
                    for (j, block) in blocks.iter_mut().enumerate() {
                        for (k, unit) in [&mut block.first, &mut block.second].into_iter().enumerate() {
                            let i = first_index + 2 * j + k;
                            out.extend(unit.params_mut().into_iter().map(|(n, t)| (format!("conv{i}.{n}"), t)));
                        }
                    }
                }
                Layer::FullyConnected {
                    index,
                    weight,
                    bias,
                    bn,
                    ..
                } => {
                    let index = *index;
                    out.push((format!("fc{index}.weight"), weight));
                    if let Some(b) = bias {
                        out.push((format!("fc{index}.bias"), b));
                    }
                    if let Some(bn) = bn {
                        out.push((format!("fc{index}.bn.gamma"), &mut bn.gamma));
                        out.push((format!("fc{index}.bn.beta"), &mut bn.beta));
                    }
                }
                Layer::Dense { weight, bias } => {
                    out.push(("dense.weight".into(), weight));
                    out.push(("dense.bias".into(), bias));
                }
                Layer::MaxPool | Layer::GlobalAvgPool | Layer::Flatten => {}
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    /// Batch-norm states keyed by their name prefix (`conv3`, `fc1`, ...).
    pub fn batchnorms(&self) -> Vec<(String, &BatchNormState<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { index, unit } => {
                    if let Some(bn) = &unit.bn {
                        out.push((format!("conv{index}"), bn));
                    }
                }
                Layer::ResidualGroup { first_index, blocks } => {
                    for (j, block) in blocks.iter().enumerate() {
                        for (k, unit) in [&block.first, &block.second].into_iter().enumerate() {
                            if let Some(bn) = &unit.bn {
                                out.push((format!("conv{}", first_index + 2 * j + k), bn));
                            }
                        }
                    }
                }
                Layer::FullyConnected { index, bn: Some(bn), .. } => out.push((format!("fc{index}"), bn)),
                _ => {}
            }
        }
        out
    }

    pub fn batchnorms_mut(&mut self) -> Vec<(String, &mut BatchNormState<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { index, unit } => {
                    if let Some(bn) = &mut unit.bn {
                        out.push((format!("conv{index}"), bn));
                    }
                }
                Layer::ResidualGroup { first_index, blocks } => {
                    let first_index = *first_index;
                    for (j, block) in blocks.iter_mut().enumerate() {
                        for (k, unit) in [&mut block.first, &mut block.second].into_iter().enumerate() {
                            if let Some(bn) = &mut unit.bn {
                                out.push((format!("conv{}", first_index + 2 * j + k), bn));
                            }
                        }
                    }
                }
                Layer::FullyConnected { index, bn: Some(bn), .. } => out.push((format!("fc{index}"), bn)),
                _ => {}
            }
        }
        out
    }

    /// Running statistics as named tensors (`<prefix>.bn.running_mean`, ...).
    pub fn running_stats(&self) -> Vec<(String, &Tensor<T>)> {
        self.batchnorms()
            .into_iter()
            .flat_map(|(p, bn)| {
                [
                    (format!("{p}.bn.running_mean"), &bn.running_mean),
                    (format!("{p}.bn.running_var"), &bn.running_var),
                ]
            })
            .collect()
    }

    pub fn count_parameters(&self) -> ParamCount {
        let mut per_layer: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.params() {
            let layer = name.split('.').next().unwrap_or(&name).to_string();
            match per_layer.last_mut() {
                Some((l, n)) if *l == layer => *n += t.len(),
                _ => per_layer.push((layer, t.len())),
            }
        }
        ParamCount {
            total: per_layer.iter().map(|(_, n)| n).sum(),
            per_layer,
        }
    }

    /// SHA-256 over every parameter and running statistic, in canonical
    /// order. Used to check that inference leaves the model untouched.
    pub fn state_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.params().into_iter().chain(self.running_stats()) {
            h.update(name.as_bytes());
            for v in t.data() {
                h.update(v.to_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, time, ch) = x.shape().btc().ok_or_else(|| Error::ShapeMismatch {
            op: "model input",
            left: x.shape().clone(),
            right: crate::tensor::Shape::new(vec![1, self.spec.input_samples, 1]).expect("static"),
        })?;
        if ch != 1 {
            return Err(Error::ChannelMismatch {
                op: "model input",
                expected: 1,
                actual: ch,
            });
        }
        let min = self.spec.first_receptive_field();
        if time < min {
            return Err(Error::TooShort {
                op: "model input",
                time,
                min,
            });
        }
        Ok(())
    }

    /// Inference: class probabilities `[B, K]`. Uses running statistics and
    /// never mutates the model. Accepts any clip length of at least the
    /// first receptive field (FC variants need their configured length).
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let batch = x.dims()[0];
        let mut h = x.clone();
        for layer in &self.layers {
            h = match layer {
                Layer::Conv { unit, .. } => relu(unit.forward_infer(&h)?),
                Layer::MaxPool => maxpool1d(&h)?.values,
                Layer::ResidualGroup { blocks, .. } => {
                    for block in blocks {
                        h = residual_block_infer(&h, block)?;
                    }
                    h
                }
                Layer::GlobalAvgPool => {
                    let c = h.dims()[2];
                    global_avg_pool(&h)?.reshape(vec![batch, c])?
                }
                Layer::Flatten => {
                    let n = h.len() / batch;
                    h.reshape(vec![batch, n])?
                }
                Layer::FullyConnected { weight, bias, bn, .. } => {
                    let mut y = linear_forward(&h, weight, bias.as_ref())?;
                    if let Some(bn) = bn {
                        y = bn.forward_infer(&y)?;
                    }
                    relu(y)
                }
                Layer::Dense { weight, bias } => {
                    let logits = linear_forward(&h, weight, Some(bias))?;
                    softmax(&logits)?
                }
            };
        }
        Ok(h)
    }

    /// Training-mode forward pass recorded on a tape. Batch-norm running
    /// statistics are updated; dropout draws from `rng`.
    pub fn forward_train(&mut self, x: &Tensor<T>, labels: &[usize], rng: &mut RandomSource) -> Result<TrainPass<T>> {
        self.check_input(x)?;
        let batch = x.dims()[0];
        if batch < 2 && self.spec.has_batchnorm() {
            return Err(Error::BatchTooSmall(batch));
        }
        if labels.len() != batch {
            return Err(Error::Config(format!("{} labels for a batch of {batch}", labels.len())));
        }
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect::<Vec<_>>()
            .into_iter()
            .map(|t| tape.param(t))
            .collect();
        let mut cursor = ParamCursor::new(&params);
        let mut h = tape.input(x.clone());
        let mut loss = None;
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { unit, .. } => {
                    let y = unit.record(&mut tape, h, &mut cursor)?;
                    h = tape.relu(y)?;
                }
                Layer::MaxPool => h = tape.maxpool(h)?,
                Layer::ResidualGroup { blocks, .. } => {
                    for block in blocks {
                        h = block.record(&mut tape, h, &mut cursor)?;
                    }
                }
                Layer::GlobalAvgPool => {
                    let c = tape.value(h).dims()[2];
                    let g = tape.global_avg_pool(h)?;
                    h = tape.reshape(g, vec![batch, c])?;
                }
                Layer::Flatten => {
                    let n = tape.value(h).len() / batch;
                    h = tape.reshape(h, vec![batch, n])?;
                }
                Layer::FullyConnected { bias, bn, dropout, .. } => {
                    let w = cursor.next_var();
                    let b = bias.is_some().then(|| cursor.next_var());
                    let mut y = tape.linear(h, w, b)?;
                    if let Some(bn) = bn {
                        let gamma = cursor.next_var();
                        let beta = cursor.next_var();
                        y = tape.batchnorm(y, gamma, beta, bn)?;
                    }
                    let y = tape.relu(y)?;
                    h = tape.dropout(y, *dropout, rng)?;
                }
                Layer::Dense { .. } => {
                    let w = cursor.next_var();
                    let b = cursor.next_var();
                    let logits = tape.linear(h, w, Some(b))?;
                    loss = Some(tape.softmax_xent(logits, labels)?);
                }
            }
        }
        debug_assert_eq!(cursor.remaining(), 0);
        let loss = loss.expect("every architecture ends in a dense softmax");
        Ok(TrainPass { tape, loss, params })
    }

    /// Dispatches on the current mode: inference returns probabilities
    /// only; training also records a tape and needs labels.
    pub fn forward(&mut self, x: &Tensor<T>, labels: Option<&[usize]>, rng: &mut RandomSource) -> Result<ForwardOutput<T>> {
        match self.mode {
            Mode::Infer => Ok(ForwardOutput::Infer(self.infer(x)?)),
            Mode::Train => {
                let labels = labels.ok_or_else(|| Error::Config("training forward needs labels".into()))?;
                Ok(ForwardOutput::Train(self.forward_train(x, labels, rng)?))
            }
        }
    }
}

pub enum ForwardOutput<T> {
    Infer(Tensor<T>),
    Train(TrainPass<T>),
}

impl<T: Scalar> ForwardOutput<T> {
    pub fn probabilities(&self) -> &Tensor<T> {
        match self {
            ForwardOutput::Infer(p) => p,
            ForwardOutput::Train(pass) => pass.probabilities(),
        }
    }
}

/// A recorded training-mode forward pass.
pub struct TrainPass<T> {
    tape: Tape<T>,
    loss: Var,
    params: Vec<Var>,
}

impl<T: Scalar> TrainPass<T> {
    /// Mean cross-entropy of the batch.
    pub fn loss(&self) -> f64 {
        self.tape.value(self.loss).data()[0].to_f64()
    }

    pub fn probabilities(&self) -> &Tensor<T> {
        self.tape.probabilities(self.loss).expect("loss node is a softmax_xent")
    }

    pub fn tape(&self) -> &Tape<T> {
        &self.tape
    }

    /// Gradients for every parameter, in [`ModelGraph::params`] order.
    pub fn backward(&self) -> Result<Vec<Tensor<T>>> {
        let mut grads = self.tape.backward(self.loss)?;
        Ok(self
            .params
            .iter()
            .map(|&v| grads.take_or_zeros(v, self.tape.value(v)))
            .collect())
    }
}
