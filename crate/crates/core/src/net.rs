//! Three-layer MLP classifier with hand-written forward and backward passes.
//!
//! Hidden layers are `linear -> batch-norm -> ReLU -> dropout`; the output
//! layer is `linear -> sigmoid` with a single unit. Dropout is inverted
//! (survivors are scaled by `1 / (1 - rate)`), so eval mode needs no
//! rescaling. Batch-norm normalizes with the biased batch variance in train
//! mode and folds the unbiased variance into the running estimate:
//! `running = (1 - momentum) * running + momentum * batch`.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use thiserror::Error;

use crate::params::{Affine, Linear, Params};
use crate::rng::Rng;

pub const CHECKPOINT_MAGIC: [u8; 6] = *b"MLPC\x00\x01";
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("train-mode batch needs at least 2 rows for batch statistics, got {0}")]
    BatchTooSmall(usize),
    #[error("trace does not match model: {0}")]
    TraceMismatch(String),
    #[error("invalid model configuration: {0}")]
    Invalid(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// Per-hidden-layer dropout multipliers (`0` or `1 / (1 - rate)`).
///
/// `None` for a layer means no dropout was applied there.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks {
    pub layers: Vec<Option<Array2<f64>>>,
}

impl DropoutMasks {
    pub fn identity(hidden_layers: usize) -> Self {
        Self {
            layers: vec![None; hidden_layers],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormSource {
    /// Statistics of the batch itself; gradients flow through them.
    Batch,
    /// Running estimates; batch-norm is a fixed affine map.
    Running,
}

#[derive(Clone, Debug)]
pub struct HiddenTrace {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    /// Biased variance used for normalization.
    pub var: Array1<f64>,
    /// Post-ReLU, pre-dropout activations.
    pub activated: Array2<f64>,
}

/// Everything backward needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub norm_source: NormSource,
    /// `inputs[i]` is the input of linear layer `i` (post-dropout for i > 0).
    pub inputs: Vec<Array2<f64>>,
    pub hidden: Vec<HiddenTrace>,
    pub masks: DropoutMasks,
    pub logits: Array1<f64>,
    pub probs: Array1<f64>,
}

impl ForwardTrace {
    pub fn batch_len(&self) -> usize {
        self.logits.len()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    params: Params,
    running: Vec<RunningStats>,
    momentum: f64,
    epsilon: f64,
    dropout_rate: f64,
    mode: Mode,
}

impl MlpModel {
    /// Randomly initialized classifier with two hidden layers of width `hidden`.
    ///
    /// Weights and biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// (the fan-in Kaiming-uniform scheme of common frameworks); batch-norm
    /// starts as the identity with running stats `(0, 1)`.
    pub fn init(input_dim: usize, hidden: usize, dropout_rate: f64, rng: &mut Rng) -> Result<Self, NetError> {
        let mut model = Self::zeros(&[input_dim, hidden, hidden, 1], dropout_rate)?;
        for l in model.params.linears.iter_mut() {
            let bound = 1.0 / (l.weight.ncols() as f64).sqrt();
            l.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
            l.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        Ok(model)
    }

    /// All-zero linear layers, identity batch-norm. Starts in train mode.
    pub fn zeros(widths: &[usize], dropout_rate: f64) -> Result<Self, NetError> {
        if widths.len() != 4 {
            return Err(NetError::Invalid(format!(
                "expected 4 widths (input, hidden, hidden, output), got {}",
                widths.len()
            )));
        }
        if widths.contains(&0) || widths[3] != 1 {
            return Err(NetError::Invalid(format!("bad widths {widths:?}")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(NetError::Invalid(format!("dropout rate {dropout_rate} not in [0, 1)")));
        }
        let mut params = Params::zeros(widths);
        for n in params.norms.iter_mut() {
            n.scale.fill(1.0);
        }
        let running = widths[1..3]
            .iter()
            .map(|&w| RunningStats {
                mean: Array1::zeros(w),
                var: Array1::ones(w),
            })
            .collect();
        Ok(Self {
            params,
            running,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            dropout_rate,
            mode: Mode::Train,
        })
    }

    /// Trainable parameter count for `input -> hidden -> hidden -> 1`.
    pub fn param_count_for(input_dim: usize, hidden: usize) -> usize {
        (input_dim * hidden + hidden) + (hidden * hidden + hidden) + (hidden + 1) + 2 * 2 * hidden
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Params) -> Result<(), NetError> {
        if !params.same_shape(&self.params) {
            return Err(NetError::Invalid("parameter shapes differ".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.running
    }

    pub fn input_dim(&self) -> usize {
        self.params.linears[0].weight.ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.params.widths()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    fn hidden_layers(&self) -> usize {
        self.params.norms.len()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NetError> {
        if x.ncols() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        if self.mode == Mode::Train && x.nrows() < 2 {
            return Err(NetError::BatchTooSmall(x.nrows()));
        }
        Ok(())
    }

    /// Draws dropout masks for a batch of `rows` (train mode only).
    ///
    /// Consumes no randomness when the rate is zero or the model is in eval mode.
    pub fn sample_masks(&self, rows: usize, rng: &mut Rng) -> DropoutMasks {
        if self.mode == Mode::Eval || self.dropout_rate == 0.0 {
            return DropoutMasks::identity(self.hidden_layers());
        }
        let keep = 1.0 / (1.0 - self.dropout_rate);
        let layers = self
            .params
            .norms
            .iter()
            .map(|n| {
                let mut m = Array2::zeros((rows, n.scale.len()));
                m.mapv_inplace(|_: f64| if rng.random::<f64>() < self.dropout_rate { 0.0 } else { keep });
                Some(m)
            })
            .collect();
        DropoutMasks { layers }
    }

    /// Forward pass that samples fresh dropout masks and, in train mode,
    /// folds the batch statistics into the running estimates.
    pub fn forward(&mut self, x: ArrayView2<f64>, rng: &mut Rng) -> Result<ForwardTrace, NetError> {
        self.check_input(&x)?;
        let masks = self.sample_masks(x.nrows(), rng);
        let trace = self.forward_with_masks(x, &masks)?;
        if self.mode == Mode::Train {
            self.update_running_stats(&trace)?;
        }
        Ok(trace)
    }

    /// Forward pass with caller-supplied masks; never touches running stats.
    ///
    /// Train mode normalizes with batch statistics, eval mode with running
    /// statistics and ignores `masks`.
    pub fn forward_with_masks(
        &self,
        x: ArrayView2<f64>,
        masks: &DropoutMasks,
    ) -> Result<ForwardTrace, NetError> {
        self.check_input(&x)?;
        let rows = x.nrows();
        let train = self.mode == Mode::Train;
        if masks.layers.len() != self.hidden_layers() {
            return Err(NetError::TraceMismatch("mask layer count".into()));
        }

        let mut inputs = Vec::with_capacity(3);
        let mut hidden = Vec::with_capacity(2);
        let mut a = x.to_owned();
        for (i, (lin, norm)) in self.params.linears.iter().zip(&self.params.norms).enumerate() {
            let z = affine(&a, lin);
            let (mean, var) = if train {
                let mean = z.mean_axis(Axis(0)).expect("rows >= 2");
                let centered = &z - &mean;
                let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).expect("rows >= 2");
                (mean, var)
            } else {
                (self.running[i].mean.clone(), self.running[i].var.clone())
            };
            let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let activated = activate(&xhat, norm);
            let out = match (train, &masks.layers[i]) {
                (true, Some(m)) => {
                    if m.dim() != activated.dim() {
                        return Err(NetError::TraceMismatch(format!("mask {i} shape")));
                    }
                    &activated * m
                }
                _ => activated.clone(),
            };
            inputs.push(a);
            hidden.push(HiddenTrace {
                xhat,
                inv_std,
                mean,
                var,
                activated,
            });
            a = out;
        }
        let head = self.params.linears.last().expect("three layers");
        let logits = affine(&a, head).index_axis_move(Axis(1), 0);
        inputs.push(a);
        let probs = logits.mapv(sigmoid);
        debug_assert_eq!(logits.len(), rows);

        Ok(ForwardTrace {
            norm_source: if train { NormSource::Batch } else { NormSource::Running },
            inputs,
            hidden,
            masks: if train {
                masks.clone()
            } else {
                DropoutMasks::identity(self.hidden_layers())
            },
            logits,
            probs,
        })
    }

    /// Folds a train-mode trace's batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, trace: &ForwardTrace) -> Result<(), NetError> {
        if trace.norm_source != NormSource::Batch {
            return Err(NetError::TraceMismatch("running stats need a batch-statistics trace".into()));
        }
        let n = trace.batch_len() as f64;
        let unbias = n / (n - 1.0);
        let m = self.momentum;
        for (rs, h) in self.running.iter_mut().zip(&trace.hidden) {
            Zip::from(&mut rs.mean).and(&h.mean).for_each(|r, &b| *r = (1.0 - m) * *r + m * b);
            Zip::from(&mut rs.var)
                .and(&h.var)
                .for_each(|r, &b| *r = (1.0 - m) * *r + m * b * unbias);
        }
        Ok(())
    }

    /// Gradients of a scalar loss given its derivative w.r.t. output probabilities.
    pub fn backward(&self, trace: &ForwardTrace, dloss_dprob: ArrayView1<f64>) -> Result<Params, NetError> {
        if dloss_dprob.len() != trace.batch_len() {
            return Err(NetError::TraceMismatch(format!(
                "{} upstream gradients for a batch of {}",
                dloss_dprob.len(),
                trace.batch_len()
            )));
        }
        let dlogits = Zip::from(&dloss_dprob)
            .and(&trace.probs)
            .map_collect(|&g, &p| g * p * (1.0 - p));
        self.backward_logits(trace, dlogits.view())
    }

    /// Gradients of a scalar loss given its derivative w.r.t. the logits.
    ///
    /// Train-mode traces backpropagate through the batch mean and variance;
    /// running statistics never receive gradient.
    pub fn backward_logits(&self, trace: &ForwardTrace, dlogits: ArrayView1<f64>) -> Result<Params, NetError> {
        self.check_trace(trace)?;
        if dlogits.len() != trace.batch_len() {
            return Err(NetError::TraceMismatch(format!(
                "{} upstream gradients for a batch of {}",
                dlogits.len(),
                trace.batch_len()
            )));
        }
        let m = trace.batch_len() as f64;
        let mut grads = Params::zeros(&self.widths());

        // Output layer.
        let dz = dlogits.insert_axis(Axis(1)).to_owned();
        let last = self.params.linears.len() - 1;
        grads.linears[last].weight = dz.t().dot(&trace.inputs[last]);
        grads.linears[last].bias = dz.sum_axis(Axis(0));
        let mut da = dz.dot(&self.params.linears[last].weight);

        for i in (0..self.hidden_layers()).rev() {
            let h = &trace.hidden[i];
            let norm = &self.params.norms[i];
            if let Some(mask) = &trace.masks.layers[i] {
                da *= mask;
            }
            // ReLU: pass gradient where the activation is strictly positive.
            Zip::from(&mut da).and(&h.activated).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            grads.norms[i].scale = (&da * &h.xhat).sum_axis(Axis(0));
            grads.norms[i].shift = da.sum_axis(Axis(0));
            let dxhat = &da * &norm.scale;
            let dz = match trace.norm_source {
                NormSource::Batch => {
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * &h.xhat).sum_axis(Axis(0));
                    let mut dz = dxhat;
                    Zip::from(dz.rows_mut()).and(h.xhat.rows()).for_each(|mut row, xrow| {
                        Zip::from(&mut row)
                            .and(&xrow)
                            .and(&sum_d)
                            .and(&sum_dx)
                            .and(&h.inv_std)
                            .for_each(|g, &x, &sd, &sdx, &is| {
                                *g = (m * *g - sd - x * sdx) * is / m;
                            });
                    });
                    dz
                }
                NormSource::Running => dxhat * &h.inv_std,
            };
            grads.linears[i].weight = dz.t().dot(&trace.inputs[i]);
            grads.linears[i].bias = dz.sum_axis(Axis(0));
            if i > 0 {
                da = dz.dot(&self.params.linears[i].weight);
            }
        }
        Ok(grads)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<(), NetError> {
        let widths = self.widths();
        if trace.inputs.len() != 3 || trace.hidden.len() != 2 {
            return Err(NetError::TraceMismatch("layer count".into()));
        }
        for (i, inp) in trace.inputs.iter().enumerate() {
            if inp.ncols() != widths[i] || inp.nrows() != trace.batch_len() {
                return Err(NetError::TraceMismatch(format!("layer {} input shape", i + 1)));
            }
        }
        Ok(())
    }

    /// Eval-mode logits for a batch, regardless of the model's current mode.
    pub fn logits_eval(&self, x: ArrayView2<f64>) -> Result<Array1<f64>, NetError> {
        if x.ncols() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        let mut a = x.to_owned();
        for ((lin, norm), rs) in self.params.linears.iter().zip(&self.params.norms).zip(&self.running) {
            let z = affine(&a, lin);
            let inv_std = rs.var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
            let xhat = (z - &rs.mean) * &inv_std;
            a = activate(&xhat, norm);
        }
        Ok(affine(&a, self.params.linears.last().expect("three layers")).index_axis_move(Axis(1), 0))
    }

    /// Eval-mode probabilities for a batch.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>, NetError> {
        Ok(self.logits_eval(x)?.mapv(sigmoid))
    }

    /// `s(theta; F)`: eval-mode probability that `feature` is generated.
    pub fn score(&self, feature: &[f64]) -> Result<f64, NetError> {
        let x = ArrayView2::from_shape((1, feature.len()), feature)
            .map_err(|e| NetError::Invalid(e.to_string()))?;
        Ok(self.scores(x)?[0])
    }
}

fn affine(a: &Array2<f64>, lin: &Linear) -> Array2<f64> {
    let mut z = a.dot(&lin.weight.t());
    z += &lin.bias;
    z
}

fn activate(xhat: &Array2<f64>, norm: &Affine) -> Array2<f64> {
    let mut y = xhat * &norm.scale;
    y += &norm.shift;
    y.mapv_inplace(|v| v.max(0.0));
    y
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes a checkpoint.
///
/// Layout (little-endian): magic `MLPC\0\x01`, layer count (u64, always 3),
/// the 4 layer widths (u64), dropout rate, batch-norm momentum and epsilon
/// (f64), then per layer: weight (row-major), bias, and for hidden layers
/// batch-norm scale, shift, running mean, running var.
pub fn encode_checkpoint<W: Write>(model: &MlpModel, w: &mut W) -> io::Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    let widths = model.widths();
    w.write_all(&((widths.len() - 1) as u64).to_le_bytes())?;
    for &width in &widths {
        w.write_all(&(width as u64).to_le_bytes())?;
    }
    write_f64s(w, &[model.dropout_rate, model.momentum, model.epsilon])?;
    for (i, lin) in model.params.linears.iter().enumerate() {
        write_f64s(w, lin.weight.as_slice().expect("standard layout"))?;
        write_f64s(w, lin.bias.as_slice().expect("standard layout"))?;
        if let (Some(n), Some(rs)) = (model.params.norms.get(i), model.running.get(i)) {
            for t in [&n.scale, &n.shift, &rs.mean, &rs.var] {
                write_f64s(w, t.as_slice().expect("standard layout"))?;
            }
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            NetError::Checkpoint(format!("truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fill(&mut self, out: &mut [f64]) -> Result<(), NetError> {
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(())
    }
}

/// Parses a checkpoint; the returned model is in eval mode.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<MlpModel, NetError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(6)? != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let layers = c.u64()?;
    if layers != 3 {
        return Err(NetError::Checkpoint(format!("expected 3 layers, found {layers}")));
    }
    let mut widths = Vec::with_capacity(4);
    for _ in 0..4 {
        let w = usize::try_from(c.u64()?).map_err(|_| NetError::Checkpoint("width overflow".into()))?;
        widths.push(w);
    }
    let dropout = c.f64()?;
    let mut model = MlpModel::zeros(&widths, dropout)?;
    model.momentum = c.f64()?;
    model.epsilon = c.f64()?;
    if !(model.momentum > 0.0 && model.momentum < 1.0 && model.epsilon > 0.0) {
        return Err(NetError::Checkpoint("bad batch-norm constants".into()));
    }
    for i in 0..3 {
        c.fill(model.params.linears[i].weight.as_slice_mut().expect("standard layout"))?;
        c.fill(model.params.linears[i].bias.as_slice_mut().expect("standard layout"))?;
        if i < 2 {
            let n = &mut model.params.norms[i];
            c.fill(n.scale.as_slice_mut().expect("standard layout"))?;
            c.fill(n.shift.as_slice_mut().expect("standard layout"))?;
            let rs = &mut model.running[i];
            c.fill(rs.mean.as_slice_mut().expect("standard layout"))?;
            c.fill(rs.var.as_slice_mut().expect("standard layout"))?;
        }
    }
    if c.pos != bytes.len() {
        return Err(NetError::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    if model.params.first_non_finite().is_some() {
        return Err(NetError::Checkpoint("non-finite parameter".into()));
    }
    if model.running.iter().any(|rs| rs.var.iter().any(|&v| !(v > 0.0 && v.is_finite()))) {
        return Err(NetError::Checkpoint("running variance must be positive".into()));
    }
    model.mode = Mode::Eval;
    Ok(model)
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<(), NetError> {
    let path = path.as_ref();
    let to_err = |source| NetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(to_err)?);
    encode_checkpoint(model, &mut w).and_then(|_| w.flush()).map_err(to_err)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel, NetError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
