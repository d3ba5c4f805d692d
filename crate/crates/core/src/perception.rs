//! Perception: observation to `{x, v}`.
//!
//! Backends are the ground-truth expert, the expert with Gaussian noise, a
//! fixed output, and a learned regressor over the onboard raster.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::camera::ImagePoint;
use crate::error::{invalid, Error, Result};
use crate::expert::Label;
use crate::render::Raster;
use crate::rng::{streams, RngStream};

/// Network output: goal direction in normalized image coordinates and a
/// normalized speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub x: ImagePoint,
    pub v: f64,
}

impl Prediction {
    /// Builds a prediction with components clamped into range.
    pub fn clamped(x: ImagePoint, v: f64) -> Self {
        Self {
            x: x.map(|c| c.clamp(-1.0, 1.0)),
            v: v.clamp(0.0, 1.0),
        }
    }

    pub fn from_label(label: &Label) -> Self {
        Self::clamped(label.x_g, label.v_g)
    }
}

/// Weighted squared error `‖x − x_g‖² + γ(v − v_g)²`.
pub fn loss(pred: &Prediction, label: &Label, gamma: f64) -> f64 {
    (pred.x - label.x_g).norm_squared() + gamma * (pred.v - label.v_g).powi(2)
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_gamma() -> f64 {
    0.1
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_epochs() -> usize {
    10
}

fn default_batch() -> usize {
    32
}

fn default_capacity() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    #[serde(default = "default_capacity")]
    pub capacity_factor: f64,
    pub input_width: u32,
    pub input_height: u32,
    #[serde(default = "default_channels")]
    pub input_channels: u32,
    #[serde(default = "default_hidden")]
    pub hidden_widths_base: Vec<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs_per_round: usize,
    /// Minibatch size used when training an epoch.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Optional strided convolution in front of the dense layers.
    #[serde(default)]
    pub conv: Option<ConvSpec>,
}

/// One strided convolution with zero padding `kernel / 2` and ReLU. The
/// filter count is scaled by the capacity factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Parameter update rule used by [`RegressorModel::train_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates. Not part of the checkpoint; a loaded
/// model starts with fresh moments.
#[derive(Clone, Debug, Default)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn default_channels() -> u32 {
    Raster::CHANNELS
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            capacity_factor: default_capacity(),
            input_width: 64,
            input_height: 48,
            input_channels: Raster::CHANNELS,
            hidden_widths_base: default_hidden(),
            gamma: default_gamma(),
            learning_rate: default_learning_rate(),
            epochs_per_round: default_epochs(),
            batch_size: default_batch(),
            optimizer: Optimizer::default(),
            conv: None,
        }
    }
}

impl RegressorConfig {
    pub fn with_input(width: u32, height: u32) -> Self {
        Self {
            input_width: width,
            input_height: height,
            ..Self::default()
        }
    }

    pub fn input_len(&self) -> usize {
        (self.input_width * self.input_height * self.input_channels) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_factor > 0.0 && self.capacity_factor.is_finite()) {
            return Err(invalid("capacity_factor must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be non-negative"));
        }
        if self.input_len() == 0 || self.input_channels != Raster::CHANNELS {
            return Err(invalid("input must be a non-empty RGB raster"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive"));
        }
        if let Some(c) = &self.conv {
            if c.filters == 0 || c.stride == 0 || c.kernel % 2 == 0 {
                return Err(invalid("conv needs filters > 0, stride > 0 and an odd kernel"));
            }
            if c.kernel > self.input_width.min(self.input_height) as usize {
                return Err(invalid("conv kernel larger than the input"));
            }
        }
        Ok(())
    }
}

fn scaled(base: usize, factor: f64) -> usize {
    ((base as f64 * factor).ceil() as usize).max(1)
}

/// Hidden layer widths: each base width times the capacity factor, rounded
/// up, at least one.
pub fn capacity_widths(cfg: &RegressorConfig) -> Vec<usize> {
    cfg.hidden_widths_base
        .iter()
        .map(|&w| scaled(w, cfg.capacity_factor))
        .collect()
}

const OUTPUTS: usize = 3;

/// Rows evaluated per forward pass when predicting over a dataset.
const EVAL_CHUNK: usize = 256;

/// Fully connected layer. `weights` is `inputs × outputs` column-major, so
/// its storage is the row-major `outputs × inputs` matrix.
#[derive(Clone, Debug, PartialEq)]
struct Dense {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl Dense {
    fn he(inputs: usize, outputs: usize, rng: &mut RngStream) -> Self {
        let scale = (2.0 / inputs as f64).sqrt();
        Self {
            weights: DMatrix::from_iterator(inputs, outputs, (0..inputs * outputs).map(|_| scale * rng.normal())),
            bias: DVector::zeros(outputs),
        }
    }

    fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    /// Pre-activations for a batch with one sample per row.
    fn forward(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = input * &self.weights;
        for (mut col, b) in z.column_iter_mut().zip(self.bias.iter()) {
            col.add_scalar_mut(*b);
        }
        z
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Strided convolution over RGB rasters, evaluated as an im2col product.
/// `weights` is `(kernel² · 3) × filters` with patch entries ordered
/// `(ky, kx, channel)`.
#[derive(Clone, Debug, PartialEq)]
struct Conv {
    width: usize,
    height: usize,
    kernel: usize,
    stride: usize,
    out_width: usize,
    out_height: usize,
    weights: DMatrix<f64>,
    bias: DVector<f64>,
}

impl Conv {
    fn new(cfg: &RegressorConfig, spec: &ConvSpec, rng: &mut RngStream) -> Self {
        let (width, height) = (cfg.input_width as usize, cfg.input_height as usize);
        let (kernel, stride) = (spec.kernel, spec.stride);
        let pad = kernel / 2;
        let filters = scaled(spec.filters, cfg.capacity_factor);
        let patch = kernel * kernel * Raster::CHANNELS as usize;
        let scale = (2.0 / patch as f64).sqrt();
        Self {
            width,
            height,
            kernel,
            stride,
            out_width: (width + 2 * pad - kernel) / stride + 1,
            out_height: (height + 2 * pad - kernel) / stride + 1,
            weights: DMatrix::from_iterator(patch, filters, (0..patch * filters).map(|_| scale * rng.normal())),
            bias: DVector::zeros(filters),
        }
    }

    fn positions(&self) -> usize {
        self.out_width * self.out_height
    }

    fn filters(&self) -> usize {
        self.weights.ncols()
    }

    fn outputs(&self) -> usize {
        self.positions() * self.filters()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Patch matrix with one row per (sample, output position).
    fn patches(&self, columns: &DMatrix<f64>) -> DMatrix<f64> {
        let (batch, np) = (columns.ncols(), self.positions());
        let rows = batch * np;
        let channels = Raster::CHANNELS as usize;
        let pad = (self.kernel / 2) as isize;
        let mut data = vec![0.0; rows * self.weights.nrows()];
        for ky in 0..self.kernel {
            for kx in 0..self.kernel {
                for ch in 0..channels {
                    let col = (ky * self.kernel + kx) * channels + ch;
                    let dst = &mut data[col * rows..(col + 1) * rows];
                    for (s, src) in columns.column_iter().enumerate() {
                        for oy in 0..self.out_height {
                            let y = (oy * self.stride + ky) as isize - pad;
                            if y < 0 || y >= self.height as isize {
                                continue;
                            }
                            for ox in 0..self.out_width {
                                let x = (ox * self.stride + kx) as isize - pad;
                                if x < 0 || x >= self.width as isize {
                                    continue;
                                }
                                let pixel = y as usize * self.width + x as usize;
                                dst[s * np + oy * self.out_width + ox] = src[pixel * channels + ch];
                            }
                        }
                    }
                }
            }
        }
        DMatrix::from_vec(rows, self.weights.nrows(), data)
    }

    /// Rectified feature maps, one sample per row, features ordered
    /// `(position, filter)`.
    fn forward(&self, patches: &DMatrix<f64>) -> DMatrix<f64> {
        let np = self.positions();
        let f = self.filters();
        let mut z = patches * &self.weights;
        for (mut col, b) in z.column_iter_mut().zip(self.bias.iter()) {
            col.apply(|v| *v = (*v + b).max(0.0));
        }
        DMatrix::from_fn(patches.nrows() / np, np * f, |s, j| z[(s * np + j / f, j % f)])
    }

    /// Weight and bias gradients from the gradient at the rectified output.
    fn backward(&self, patches: &DMatrix<f64>, d_out: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let np = self.positions();
        let f = self.filters();
        let dz = DMatrix::from_fn(patches.nrows(), f, |r, k| d_out[(r / np, (r % np) * f + k)]);
        let gb = dz.column_iter().map(|c| c.sum()).collect();
        (patches.tr_mul(&dz), gb)
    }
}

/// Multilayer perceptron over a flattened raster: ReLU hidden layers and a
/// three-unit head squashed by tanh, tanh and sigmoid.
#[derive(Clone, Debug)]
pub struct RegressorModel {
    config: RegressorConfig,
    conv: Option<Conv>,
    layers: Vec<Dense>,
    adam: AdamState,
}

impl PartialEq for RegressorModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.conv == other.conv && self.layers == other.layers
    }
}

/// Batch activations kept for backpropagation.
struct Activations {
    /// Convolution patches, when the model has a convolution.
    patches: Option<DMatrix<f64>>,
    /// `values[0]` is the dense input; `values[i]` the post-activation of
    /// dense layer `i-1`.
    values: Vec<DMatrix<f64>>,
    head: DMatrix<f64>,
}

impl RegressorModel {
    pub fn new(config: RegressorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStream::new(seed, streams::WEIGHT_INIT);
        let conv = config.conv.as_ref().map(|spec| Conv::new(&config, spec, &mut rng));
        let mut widths = vec![conv.as_ref().map_or(config.input_len(), Conv::outputs)];
        widths.extend(capacity_widths(&config));
        widths.push(OUTPUTS);
        let layers = widths.windows(2).map(|w| Dense::he(w[0], w[1], &mut rng)).collect();
        Ok(Self {
            config,
            conv,
            layers,
            adam: AdamState::default(),
        })
    }

    pub fn config(&self) -> &RegressorConfig {
        &self.config
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Dense::outputs)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.conv.as_ref().map_or(0, Conv::param_count) + self.layers.iter().map(Dense::param_count).sum::<usize>()
    }

    /// Parameter blocks in checkpoint order: convolution weights
    /// (`filters × patch`, row-major) and biases if present, then per dense
    /// layer row-major weights (`outputs × inputs`) and biases.
    fn blocks(&self) -> Vec<&[f64]> {
        let conv = self.conv.iter().flat_map(|c| [c.weights.as_slice(), c.bias.as_slice()]);
        conv.chain(
            self.layers
                .iter()
                .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]),
        )
        .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let conv = self
            .conv
            .iter_mut()
            .flat_map(|c| [c.weights.as_mut_slice(), c.bias.as_mut_slice()]);
        conv.chain(
            self.layers
                .iter_mut()
                .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()]),
        )
        .collect()
    }

    /// Parameters in checkpoint order.
    pub fn params(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(invalid(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for block in self.blocks_mut() {
            let (head, tail) = rest.split_at(block.len());
            block.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, raster: &Raster) -> Result<()> {
        if raster.width != self.config.input_width || raster.height != self.config.input_height {
            return Err(invalid(format!(
                "raster {}x{} does not match model input {}x{}",
                raster.width, raster.height, self.config.input_width, self.config.input_height
            )));
        }
        Ok(())
    }

    /// Stacks rasters as columns scaled to [-1, 1] (`input_len × batch`).
    fn input_columns<'r>(&self, rasters: impl ExactSizeIterator<Item = &'r Raster>) -> Result<DMatrix<f64>> {
        let cols = rasters.len();
        let len = self.config.input_len();
        let mut data = Vec::with_capacity(len * cols);
        for r in rasters {
            self.check_input(r)?;
            data.extend(r.pixels.iter().map(|&p| p as f64 / 127.5 - 1.0));
        }
        Ok(DMatrix::from_vec(len, cols, data))
    }

    fn forward(&self, columns: &DMatrix<f64>) -> Activations {
        let (patches, input) = match &self.conv {
            Some(conv) => {
                let patches = conv.patches(columns);
                let maps = conv.forward(&patches);
                (Some(patches), maps)
            }
            None => (None, columns.transpose()),
        };
        let mut values = vec![input];
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            let mut z = layer.forward(values.last().expect("input present"));
            z.apply(|v| *v = v.max(0.0));
            values.push(z);
        }
        let head = self.layers[last].forward(values.last().expect("input present"));
        Activations { patches, values, head }
    }

    fn squash(head: &DMatrix<f64>, row: usize) -> Prediction {
        Prediction {
            x: ImagePoint::new(head[(row, 0)].tanh(), head[(row, 1)].tanh()),
            v: 1.0 / (1.0 + (-head[(row, 2)]).exp()),
        }
    }

    pub fn predict(&self, raster: &Raster) -> Result<Prediction> {
        let x = self.input_columns(std::iter::once(raster))?;
        Ok(Self::squash(&self.forward(&x).head, 0))
    }

    pub fn predict_batch(&self, rasters: &[&Raster]) -> Result<Vec<Prediction>> {
        let mut out = Vec::with_capacity(rasters.len());
        for chunk in rasters.chunks(EVAL_CHUNK) {
            let head = self.forward(&self.input_columns(chunk.iter().copied())?).head;
            out.extend((0..chunk.len()).map(|i| Self::squash(&head, i)));
        }
        Ok(out)
    }

    /// Mean loss over a batch and its gradient with respect to `params()`.
    pub fn loss_and_gradient(&self, batch: &[(&Raster, Label)]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(invalid("empty batch"));
        }
        let gamma = self.config.gamma;
        let n = batch.len() as f64;
        let columns = self.input_columns(batch.iter().map(|(r, _)| *r))?;
        let act = self.forward(&columns);
        let mut total = 0.0;
        let mut delta = DMatrix::zeros(batch.len(), OUTPUTS);
        for (i, (_, label)) in batch.iter().enumerate() {
            let pred = Self::squash(&act.head, i);
            total += loss(&pred, label, gamma);
            delta[(i, 0)] = 2.0 * (pred.x[0] - label.x_g[0]) * (1.0 - pred.x[0] * pred.x[0]) / n;
            delta[(i, 1)] = 2.0 * (pred.x[1] - label.x_g[1]) * (1.0 - pred.x[1] * pred.x[1]) / n;
            delta[(i, 2)] = 2.0 * gamma * (pred.v - label.v_g) * pred.v * (1.0 - pred.v) / n;
        }
        let mean = total / n;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss {mean}")));
        }
        let mut grads = Vec::with_capacity(self.layers.len() + 1);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &act.values[i];
            let gw = if i == 0 && self.conv.is_none() {
                &columns * &delta
            } else {
                input.tr_mul(&delta)
            };
            let gb: Vec<f64> = delta.column_iter().map(|c| c.sum()).collect();
            grads.push((gw, gb));
            if i == 0 && self.conv.is_none() {
                break;
            }
            let mut prev = &delta * layer.weights.transpose();
            // ReLU derivative on the layer input.
            prev.zip_apply(input, |p, a| {
                if a <= 0.0 {
                    *p = 0.0
                }
            });
            delta = prev;
        }
        if let (Some(conv), Some(patches)) = (&self.conv, &act.patches) {
            grads.push(conv.backward(patches, &delta));
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads.into_iter().rev() {
            flat.extend_from_slice(gw.as_slice());
            flat.extend(gb);
        }
        Ok((mean, flat))
    }

    /// One optimizer step on the mean loss of `batch`; returns the loss
    /// before the update.
    pub fn train_step(&mut self, batch: &[(&Raster, Label)], lr: f64) -> Result<f64> {
        let (mean, grad) = self.loss_and_gradient(batch)?;
        if lr == 0.0 {
            return Ok(mean);
        }
        let step: Vec<f64> = match self.config.optimizer {
            Optimizer::Sgd => grad.iter().map(|g| lr * g).collect(),
            Optimizer::Adam => {
                let a = &mut self.adam;
                if a.m.len() != grad.len() {
                    *a = AdamState {
                        m: vec![0.0; grad.len()],
                        v: vec![0.0; grad.len()],
                        t: 0,
                    };
                }
                a.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(a.t);
                let c2 = 1.0 - ADAM_BETA2.powi(a.t);
                grad.iter()
                    .zip(a.m.iter_mut().zip(a.v.iter_mut()))
                    .map(|(&g, (m, v))| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS)
                    })
                    .collect()
            }
        };
        let mut s = step.iter();
        for block in self.blocks_mut() {
            for p in block {
                *p -= s.next().expect("step length matches parameters");
            }
        }
        Ok(mean)
    }

    /// One pass over `data` in minibatches, in an order shuffled by `rng`.
    /// Returns the mean of the minibatch losses.
    pub fn train_epoch(&mut self, data: &[(&Raster, Label)], rng: &mut RngStream) -> Result<f64> {
        if data.is_empty() {
            return Err(invalid("no training data"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let lr = self.config.learning_rate;
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| data[i]).collect();
            sum += self.train_step(&batch, lr)?;
            batches += 1;
        }
        Ok(sum / batches as f64)
    }

    /// Mean loss over `data` without updating.
    pub fn evaluate(&self, data: &[(&Raster, Label)]) -> Result<f64> {
        if data.is_empty() {
            return Err(invalid("no evaluation data"));
        }
        let rasters: Vec<&Raster> = data.iter().map(|(r, _)| *r).collect();
        let preds = self.predict_batch(&rasters)?;
        let total: f64 = preds
            .iter()
            .zip(data)
            .map(|(p, (_, l))| loss(p, l, self.config.gamma))
            .sum();
        Ok(total / data.len() as f64)
    }

    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(cfg.len() as u32).to_le_bytes())?;
        w.write_all(&cfg)?;
        let params = self.params();
        w.write_all(&(params.len() as u64).to_le_bytes())?;
        for p in params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("model checkpoint: {m}"));
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut cfg = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut cfg)?;
        let config: RegressorConfig = serde_json::from_slice(&cfg)?;
        let mut model = Self::new(config, 0)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        if u64::from_le_bytes(count) as usize != model.param_count() {
            return Err(bad("parameter count does not match configuration"));
        }
        let mut bytes = vec![0u8; model.param_count() * 8];
        r.read_exact(&mut bytes)?;
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        model.set_params(&params)?;
        Ok(model)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GRCM1";

/// Where predictions come from.
#[derive(Clone, Debug)]
pub enum Backend {
    /// Expert labels passed through.
    Oracle,
    /// Expert labels plus zero-mean Gaussian noise, then clamped.
    Noisy {
        sigma_x: f64,
        sigma_v: f64,
    },
    /// A fixed output regardless of the observation.
    Constant(Prediction),
    Learned(Box<RegressorModel>),
}

impl Backend {
    pub fn needs_label(&self) -> bool {
        matches!(self, Backend::Oracle | Backend::Noisy { .. })
    }

    pub fn needs_raster(&self) -> bool {
        matches!(self, Backend::Learned(_))
    }
}

/// What the backend gets to see on one perception tick.
#[derive(Clone, Copy, Debug, Default)]
pub struct Observation<'a> {
    pub label: Option<&'a Label>,
    pub raster: Option<&'a Raster>,
}

/// A backend plus the state it carries between ticks.
#[derive(Clone, Debug)]
pub struct Perception {
    backend: Backend,
    last: Option<Prediction>,
    rng: RngStream,
}

impl Perception {
    pub fn new(backend: Backend, seed: u64) -> Self {
        Self {
            backend,
            last: None,
            rng: RngStream::new(seed, streams::PERCEPTION_NOISE),
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn last(&self) -> Option<Prediction> {
        self.last
    }

    /// Produces a prediction. An invalid or missing expert label repeats the
    /// last prediction, which is `None` until one valid label was seen.
    pub fn predict(&mut self, obs: Observation<'_>) -> Result<Option<Prediction>> {
        let fresh = match &self.backend {
            Backend::Oracle => obs.label.filter(|l| l.valid).map(Prediction::from_label),
            Backend::Noisy { sigma_x, sigma_v } => match obs.label.filter(|l| l.valid) {
                Some(l) => {
                    let (sx, sv) = (*sigma_x, *sigma_v);
                    let nx = ImagePoint::new(sx * self.rng.normal(), sx * self.rng.normal());
                    let nv = sv * self.rng.normal();
                    Some(Prediction::clamped(l.x_g + nx, l.v_g + nv))
                }
                None => None,
            },
            Backend::Constant(p) => Some(*p),
            Backend::Learned(model) => {
                let raster = obs.raster.ok_or_else(|| invalid("learned backend needs a raster"))?;
                Some(model.predict(raster)?)
            }
        };
        if fresh.is_some() {
            self.last = fresh;
        }
        Ok(self.last)
    }
}
