//! Stacked stateful layers: dense weights, batch normalization, a neuron
//! recurrence per channel, and a time-averaged linear readout.
//!
//! ```text
//! input (B·T × c_in)
//!   └─ per hidden layer:  z = x W  →  batchnorm  →  neuron recurrence  →  dropout
//!   └─ readout:           logits[b] = mean_t  h[b, t] W_out
//! ```
//!
//! Activations are stored row-major with one row per `(sample, timestep)`,
//! sample-major, so a batch of `B` sequences of length `T` is a `B·T × width`
//! matrix.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neurons::{
    self, combined_gelu, heaviside, init_lif, init_ssm, lif_effective_alpha, lif_membrane, ramp, NeuronDynamics,
    NeuronFamily, NeuronKind, OutputRescale, SsmMatrices,
};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// A time-major frame sequence (`time × channels`) at a given resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    pub frames: Array2<f64>,
    pub resolution: u32,
    pub label: usize,
}

impl FrameSequence {
    pub fn new(frames: Array2<f64>, resolution: u32, label: usize) -> Self {
        Self {
            frames,
            resolution,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.ncols()
    }
}

/// How the forward pass turns membrane potential into a spike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeFn {
    /// Hard threshold; backward uses the boxcar surrogate.
    #[default]
    Heaviside,
    /// Piecewise-linear relaxation whose true derivative is the boxcar.
    Ramp,
}

/// How input frames reach the first dense layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputScaling {
    /// Counts divided by the sequence's resolution factor, i.e. events per
    /// base window. A held input then has the same level at every
    /// resolution, which is what the dynamics adaptation rules assume.
    #[default]
    Rate,
    /// Raw per-frame counts.
    Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: NeuronKind,
    pub inputs: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub outputs: usize,
    /// SSM state size N (ignored for LIF).
    pub state_dim: usize,
    #[serde(default)]
    pub output_rescale: OutputRescale,
    #[serde(default)]
    pub spike_fn: SpikeFn,
    #[serde(default = "default_half_width")]
    pub surrogate_half_width: f64,
    #[serde(default)]
    pub input_scaling: InputScaling,
}

fn default_half_width() -> f64 {
    neurons::SURROGATE_HALF_WIDTH
}

impl Architecture {
    pub fn new(kind: NeuronKind, inputs: usize, width: usize, hidden_layers: usize, outputs: usize) -> Self {
        Self {
            kind,
            inputs,
            width,
            hidden_layers,
            outputs,
            state_dim: 4,
            output_rescale: OutputRescale::Zoh,
            spike_fn: SpikeFn::Heaviside,
            surrogate_half_width: neurons::SURROGATE_HALF_WIDTH,
            input_scaling: InputScaling::Rate,
        }
    }

    pub fn with_state_dim(mut self, n: usize) -> Self {
        self.state_dim = n;
        self
    }

    pub fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.inputs
        } else {
            self.width
        }
    }
}

/// Batch-normalization parameters ψ for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Per-channel statistics of one Train-mode normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    /// Biased variance used for normalization.
    pub var: Array1<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// `fan_in × width`
    pub weights: Array2<f64>,
    pub neurons: Vec<NeuronDynamics>,
    pub norm: BatchNorm,
}

/// Full model θ = {φ, W, ψ} plus the readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub layers: Vec<LayerParams>,
    /// `width × outputs`
    pub readout: Array2<f64>,
}

/// Optimizer group a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Dense weights, readout and normalization affine parameters.
    Weights,
    /// Neuron dynamics φ.
    Dynamics,
    /// Normalization running statistics (aggregated, never optimized).
    Statistics,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamKey {
    /// Hidden layer index; `None` for the readout.
    pub layer: Option<usize>,
    /// Neuron index within the layer for dynamics tensors.
    pub neuron: Option<usize>,
    pub name: &'static str,
    pub group: ParamGroup,
}

impl std::fmt::Display for ParamKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.layer, self.neuron) {
            (None, _) => write!(f, "readout.{}", self.name),
            (Some(l), None) => write!(f, "layer{l}.{}", self.name),
            (Some(l), Some(n)) => write!(f, "layer{l}.neuron{n}.{}", self.name),
        }
    }
}

fn cslice(a: &[Complex64]) -> &[f64] {
    bytemuck::cast_slice(a)
}

fn cslice_mut(a: &mut [Complex64]) -> &mut [f64] {
    bytemuck::cast_slice_mut(a)
}

fn std_slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameter tensors use standard layout")
}

fn std_slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors use standard layout")
}

fn cstd_slice<D: ndarray::Dimension>(a: &ndarray::Array<Complex64, D>) -> &[f64] {
    cslice(a.as_slice().expect("parameter tensors use standard layout"))
}

fn cstd_slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<Complex64, D>) -> &mut [f64] {
    cslice_mut(a.as_slice_mut().expect("parameter tensors use standard layout"))
}

impl ModelParams {
    /// Random initialization. Dense weights are uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(arch.hidden_layers);
        for l in 0..arch.hidden_layers {
            let fan_in = arch.fan_in(l);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_in, arch.width), |_| rng.random_range(-bound..bound));
            let neurons = (0..arch.width)
                .map(|_| match arch.kind.family {
                    NeuronFamily::Lif => NeuronDynamics::Lif(init_lif(arch.kind.variant, rng)),
                    NeuronFamily::Ssm => NeuronDynamics::Ssm(init_ssm(arch.kind.variant, arch.state_dim, 1, 1, rng)),
                })
                .collect();
            layers.push(LayerParams {
                weights,
                neurons,
                norm: BatchNorm::new(arch.width),
            });
        }
        let bound = 1.0 / (arch.width as f64).sqrt();
        let readout = Array2::from_shape_fn((arch.width, arch.outputs), |_| rng.random_range(-bound..bound));
        Self { arch, layers, readout }
    }

    /// Check that every tensor has the shape the architecture implies and
    /// that all neurons share the architecture's kind.
    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if self.layers.len() != a.hidden_layers {
            return Err(Error::Shape(format!(
                "{} layers, architecture says {}",
                self.layers.len(),
                a.hidden_layers
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.dim() != (a.fan_in(l), a.width) {
                return Err(Error::Shape(format!("layer{l}.weights is {:?}", layer.weights.dim())));
            }
            if layer.neurons.len() != a.width || layer.norm.channels() != a.width {
                return Err(Error::Shape(format!("layer{l} width mismatch")));
            }
            if layer.norm.running_var.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "layer{l} has negative running variance"
                )));
            }
            if let Some(n) = layer.neurons.iter().position(|n| n.kind() != a.kind) {
                return Err(Error::Shape(format!(
                    "layer{l}.neuron{n} is {}, model is {}",
                    layer.neurons[n].kind(),
                    a.kind
                )));
            }
        }
        if self.readout.dim() != (a.width, a.outputs) {
            return Err(Error::Shape(format!("readout is {:?}", self.readout.dim())));
        }
        Ok(())
    }

    /// Visit every tensor in a fixed order. Complex tensors appear as
    /// interleaved real/imaginary parts.
    pub fn for_each_tensor(&self, f: &mut dyn FnMut(ParamKey, &[f64])) {
        for (l, layer) in self.layers.iter().enumerate() {
            let key = |name, group| ParamKey {
                layer: Some(l),
                neuron: None,
                name,
                group,
            };
            f(key("weights", ParamGroup::Weights), std_slice(&layer.weights));
            f(key("bn_gamma", ParamGroup::Weights), std_slice(&layer.norm.gamma));
            f(key("bn_beta", ParamGroup::Weights), std_slice(&layer.norm.beta));
            f(
                key("bn_running_mean", ParamGroup::Statistics),
                std_slice(&layer.norm.running_mean),
            );
            f(
                key("bn_running_var", ParamGroup::Statistics),
                std_slice(&layer.norm.running_var),
            );
            for (i, neuron) in layer.neurons.iter().enumerate() {
                let key = |name| ParamKey {
                    layer: Some(l),
                    neuron: Some(i),
                    name,
                    group: ParamGroup::Dynamics,
                };
                match neuron {
                    NeuronDynamics::Lif(p) => match &p.decay {
                        neurons::LifDecay::Standard { alpha } => f(key("alpha"), std::slice::from_ref(alpha)),
                        neurons::LifDecay::Delta { delta_log, gamma_log } => {
                            f(key("delta_log"), std::slice::from_ref(delta_log));
                            f(key("gamma_log"), std::slice::from_ref(gamma_log));
                        }
                    },
                    NeuronDynamics::Ssm(p) => {
                        match &p.transition {
                            neurons::SsmTransition::Standard { a } => f(key("a"), cstd_slice(a)),
                            neurons::SsmTransition::Delta {
                                a_re_log,
                                a_im,
                                delta_log,
                            } => {
                                f(key("a_re_log"), std_slice(a_re_log));
                                f(key("a_im"), std_slice(a_im));
                                f(key("delta_log"), std::slice::from_ref(delta_log));
                            }
                        }
                        f(key("b"), cstd_slice(&p.b));
                        f(key("c"), cstd_slice(&p.c));
                    }
                }
            }
        }
        let key = ParamKey {
            layer: None,
            neuron: None,
            name: "weights",
            group: ParamGroup::Weights,
        };
        f(key, std_slice(&self.readout));
    }

    /// Mutable counterpart of [`for_each_tensor`](Self::for_each_tensor),
    /// visiting tensors in the same order.
    pub fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(ParamKey, &mut [f64])) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let key = |name, group| ParamKey {
                layer: Some(l),
                neuron: None,
                name,
                group,
            };
            f(key("weights", ParamGroup::Weights), std_slice_mut(&mut layer.weights));
            f(
                key("bn_gamma", ParamGroup::Weights),
                std_slice_mut(&mut layer.norm.gamma),
            );
            f(key("bn_beta", ParamGroup::Weights), std_slice_mut(&mut layer.norm.beta));
            f(
                key("bn_running_mean", ParamGroup::Statistics),
                std_slice_mut(&mut layer.norm.running_mean),
            );
            f(
                key("bn_running_var", ParamGroup::Statistics),
                std_slice_mut(&mut layer.norm.running_var),
            );
            for (i, neuron) in layer.neurons.iter_mut().enumerate() {
                let key = |name| ParamKey {
                    layer: Some(l),
                    neuron: Some(i),
                    name,
                    group: ParamGroup::Dynamics,
                };
                match neuron {
                    NeuronDynamics::Lif(p) => match &mut p.decay {
                        neurons::LifDecay::Standard { alpha } => f(key("alpha"), std::slice::from_mut(alpha)),
                        neurons::LifDecay::Delta { delta_log, gamma_log } => {
                            f(key("delta_log"), std::slice::from_mut(delta_log));
                            f(key("gamma_log"), std::slice::from_mut(gamma_log));
                        }
                    },
                    NeuronDynamics::Ssm(p) => {
                        match &mut p.transition {
                            neurons::SsmTransition::Standard { a } => f(key("a"), cstd_slice_mut(a)),
                            neurons::SsmTransition::Delta {
                                a_re_log,
                                a_im,
                                delta_log,
                            } => {
                                f(key("a_re_log"), std_slice_mut(a_re_log));
                                f(key("a_im"), std_slice_mut(a_im));
                                f(key("delta_log"), std::slice::from_mut(delta_log));
                            }
                        }
                        f(key("b"), cstd_slice_mut(&mut p.b));
                        f(key("c"), cstd_slice_mut(&mut p.c));
                    }
                }
            }
        }
        let key = ParamKey {
            layer: None,
            neuron: None,
            name: "weights",
            group: ParamGroup::Weights,
        };
        f(key, std_slice_mut(&mut self.readout));
    }

    /// All scalars in visiting order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.for_each_tensor(&mut |_, t| out.extend_from_slice(t));
        out
    }

    /// Overwrite all scalars from a vector produced by [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let mut expected = 0;
        self.for_each_tensor(&mut |_, t| expected += t.len());
        if expected != flat.len() {
            return Err(Error::Shape(format!(
                "flat vector has {} scalars, model has {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        self.for_each_tensor_mut(&mut |_, t| {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        });
        Ok(())
    }

    /// A model of the same structure with every scalar set to zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(&mut |_, t| t.fill(0.0));
        z
    }

    /// SHA-256 over the little-endian bytes of every scalar, in visiting order.
    pub fn fingerprint(&self) -> String {
        fingerprint_tensors(self, |_| true)
    }

    /// Like [`fingerprint`](Self::fingerprint) but restricted to W, ψ and the readout.
    pub fn fingerprint_non_dynamics(&self) -> String {
        fingerprint_tensors(self, |k| k.group != ParamGroup::Dynamics)
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |k, t| {
            if k.group != ParamGroup::Statistics {
                n += t.len()
            }
        });
        n
    }

    /// Fold Train-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for (layer, st) in self.layers.iter_mut().zip(stats) {
            update_running(&mut layer.norm, st);
        }
    }
}

fn fingerprint_tensors(m: &ModelParams, keep: impl Fn(&ParamKey) -> bool) -> String {
    let mut h = Sha256::new();
    m.for_each_tensor(&mut |k, t| {
        if keep(&k) {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
    });
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub dropout: f64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            dropout: 0.0,
        }
    }

    pub fn train(dropout: f64) -> Self {
        Self {
            mode: Mode::Train,
            dropout,
        }
    }
}

/// Activity record of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub batch: usize,
    pub timesteps: usize,
    /// Total spikes per hidden layer (`None` for SSM layers).
    pub spike_counts: Vec<Option<f64>>,
    pub width: usize,
}

impl Trace {
    /// Fraction of neuron-steps that emitted a spike, per hidden layer.
    pub fn spike_rates(&self) -> Vec<Option<f64>> {
        let slots = (self.batch * self.timesteps * self.width) as f64;
        self.spike_counts
            .iter()
            .map(|c| c.map(|c| if slots > 0.0 { c / slots } else { 0.0 }))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub trace: Trace,
    /// Per-layer batch statistics (Train mode only).
    pub batch_stats: Vec<BatchStats>,
}

/// Stack sequences into a `B·T × channels` matrix.
pub fn stack_batch(batch: &[FrameSequence], channels: usize, scaling: InputScaling) -> Result<(Array2<f64>, usize)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let t = first.len();
    if t == 0 {
        return Err(Error::Shape("sequences must have at least one frame".into()));
    }
    let mut x = Array2::zeros((batch.len() * t, channels));
    for (b, seq) in batch.iter().enumerate() {
        if seq.len() != t || seq.channels() != channels {
            return Err(Error::Shape(format!(
                "sample {b} is {:?}, expected ({t}, {channels})",
                seq.frames.dim()
            )));
        }
        let mut dst = x.slice_mut(s![b * t..(b + 1) * t, ..]);
        dst.assign(&seq.frames);
        if scaling == InputScaling::Rate && seq.resolution > 1 {
            dst /= seq.resolution as f64;
        }
    }
    Ok((x, t))
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

pub(crate) struct NormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

fn batch_moments(z: ArrayView2<f64>) -> BatchStats {
    let count = z.nrows();
    let mean = z.mean_axis(Axis(0)).expect("non-empty");
    let mut var = Array1::<f64>::zeros(z.ncols());
    for row in z.rows() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = x - m;
            *v += d * d;
        }
    }
    var /= count as f64;
    BatchStats { mean, var, count }
}

fn update_running(norm: &mut BatchNorm, st: &BatchStats) {
    // Running variance tracks the unbiased estimate.
    let correction = if st.count > 1 {
        st.count as f64 / (st.count - 1) as f64
    } else {
        1.0
    };
    norm.running_mean
        .zip_mut_with(&st.mean, |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
    norm.running_var.zip_mut_with(&st.var, |r, &v| {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction
    });
}

fn normalize(z: &Array2<f64>, norm: &BatchNorm, mode: Mode) -> (Array2<f64>, NormCache, Option<BatchStats>) {
    let (mean, var, stats) = match mode {
        Mode::Train => {
            let st = batch_moments(z.view());
            (st.mean.clone(), st.var.clone(), Some(st))
        }
        Mode::Eval => (norm.running_mean.clone(), norm.running_var.clone(), None),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = z.clone();
    let mut out = Array2::zeros(z.dim());
    for (mut xrow, mut orow) in xhat.rows_mut().into_iter().zip(out.rows_mut()) {
        for j in 0..xrow.len() {
            let xh = (xrow[j] - mean[j]) * inv_std[j];
            xrow[j] = xh;
            orow[j] = norm.gamma[j] * xh + norm.beta[j];
        }
    }
    (out, NormCache { xhat, inv_std }, stats)
}

/// Batch normalization over the joint batch×time axis (rows of `z`).
///
/// Train mode normalizes with the batch statistics and folds them into the
/// running estimates with momentum 0.1; Eval mode uses the running estimates.
pub fn batchnorm(z: ArrayView2<f64>, psi: &mut BatchNorm, mode: Mode) -> Result<Array2<f64>> {
    if z.ncols() != psi.channels() {
        return Err(Error::Shape(format!(
            "batchnorm: {} channels, parameters for {}",
            z.ncols(),
            psi.channels()
        )));
    }
    if z.nrows() == 0 {
        return Err(Error::Shape("batchnorm: empty input".into()));
    }
    let (out, _, stats) = normalize(&z.to_owned(), psi, mode);
    if let Some(st) = stats {
        update_running(psi, &st);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Intermediate values kept for backpropagation.
pub(crate) enum NeuronCache {
    Lif {
        alphas: Vec<f64>,
        /// Membrane after each update, `B·T × width`.
        membrane: Array2<f64>,
        /// Spike emitted after each update (also the layer output).
        spikes: Array2<f64>,
    },
    Ssm {
        matrices: Vec<SsmMatrices>,
        /// Pre-update states x[t], laid out `[(b·T + t)·width + j]·N + n`.
        states: Vec<Complex64>,
        /// Activation input Re(Cx) + Im(Cx), `B·T × width`.
        pre_act: Array2<f64>,
    },
}

pub(crate) struct LayerCache {
    pub input: Array2<f64>,
    pub norm: NormCache,
    /// Normalized drive fed to the neurons.
    pub drive: Array2<f64>,
    pub neurons: NeuronCache,
    /// Dropout scale per element (`None` when dropout is off).
    pub dropout: Option<Array2<f64>>,
}

pub(crate) struct ForwardCache {
    pub layers: Vec<LayerCache>,
    /// Time-mean of the last hidden layer's output, `B × width`.
    pub pooled: Array2<f64>,
    pub timesteps: usize,
}

/// Forward pass of `batch` through `theta`.
///
/// The model is not mutated; in Train mode the batch statistics are returned
/// so the caller can update the running estimates.
pub fn forward<R: Rng + ?Sized>(
    batch: &[FrameSequence],
    theta: &ModelParams,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<ForwardOutput> {
    forward_cached(batch, theta, opts, rng, false).map(|(out, _)| out)
}

pub(crate) fn forward_cached<R: Rng + ?Sized>(
    batch: &[FrameSequence],
    theta: &ModelParams,
    opts: ForwardOptions,
    rng: &mut R,
    keep_cache: bool,
) -> Result<(ForwardOutput, Option<ForwardCache>)> {
    let arch = &theta.arch;
    let (mut x, t_len) = stack_batch(batch, arch.inputs, arch.input_scaling)?;
    let b_len = batch.len();
    if !(0.0..1.0).contains(&opts.dropout) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {} not in [0, 1)",
            opts.dropout
        )));
    }
    let mut caches = Vec::with_capacity(theta.layers.len());
    let mut stats = Vec::new();
    let mut spike_counts = Vec::with_capacity(theta.layers.len());

    for (l, layer) in theta.layers.iter().enumerate() {
        let z = x.dot(&layer.weights);
        let (drive, norm_cache, st) = normalize(&z, &layer.norm, opts.mode);
        stats.extend(st);
        let (mut out, neuron_cache, spikes) = run_neurons(&drive, &layer.neurons, arch, b_len, t_len)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("layer{l} produced non-finite activity")));
        }
        spike_counts.push(spikes);
        let mask = if opts.mode == Mode::Train && opts.dropout > 0.0 {
            let keep = 1.0 - opts.dropout;
            let m = Array2::from_shape_fn(out.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            out *= &m;
            Some(m)
        } else {
            None
        };
        let input = std::mem::replace(&mut x, out);
        if keep_cache {
            caches.push(LayerCache {
                input,
                norm: norm_cache,
                drive,
                neurons: neuron_cache,
                dropout: mask,
            });
        }
    }

    let pooled = time_mean(&x, b_len, t_len);
    let logits = pooled.dot(&theta.readout);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite logits".into()));
    }
    let out = ForwardOutput {
        logits,
        trace: Trace {
            batch: b_len,
            timesteps: t_len,
            spike_counts,
            width: arch.width,
        },
        batch_stats: stats,
    };
    let cache = keep_cache.then(|| ForwardCache {
        layers: caches,
        pooled,
        timesteps: t_len,
    });
    Ok((out, cache))
}

fn time_mean(x: &Array2<f64>, b_len: usize, t_len: usize) -> Array2<f64> {
    let mut pooled = Array2::zeros((b_len, x.ncols()));
    for b in 0..b_len {
        let block = x.slice(s![b * t_len..(b + 1) * t_len, ..]);
        pooled.row_mut(b).assign(&block.mean_axis(Axis(0)).expect("t_len >= 1"));
    }
    pooled
}

fn run_neurons(
    drive: &Array2<f64>,
    neurons: &[NeuronDynamics],
    arch: &Architecture,
    b_len: usize,
    t_len: usize,
) -> Result<(Array2<f64>, NeuronCache, Option<f64>)> {
    let width = drive.ncols();
    match arch.kind.family {
        NeuronFamily::Lif => {
            let mut alphas = Vec::with_capacity(width);
            let mut thresholds = Vec::with_capacity(width);
            for n in neurons {
                let NeuronDynamics::Lif(p) = n else {
                    return Err(Error::Shape("non-LIF neuron in LIF layer".into()));
                };
                alphas.push(lif_effective_alpha(p));
                thresholds.push(p.threshold);
            }
            let mut membrane = Array2::zeros(drive.dim());
            let mut spikes = Array2::zeros(drive.dim());
            let hw = arch.surrogate_half_width;
            let u = drive.as_slice().expect("standard layout");
            let mem = membrane.as_slice_mut().expect("standard layout");
            let spk = spikes.as_slice_mut().expect("standard layout");
            for b in 0..b_len {
                for j in 0..width {
                    let (alpha, theta) = (alphas[j], thresholds[j]);
                    let (mut v, mut s) = (0.0, 0.0);
                    for t in 0..t_len {
                        let idx = (b * t_len + t) * width + j;
                        v = lif_membrane(alpha, theta, v, s, u[idx]);
                        s = match arch.spike_fn {
                            SpikeFn::Heaviside => heaviside(v - theta),
                            SpikeFn::Ramp => ramp(v - theta, hw),
                        };
                        mem[idx] = v;
                        spk[idx] = s;
                    }
                }
            }
            let total = spikes.sum();
            let out = spikes.clone();
            Ok((
                out,
                NeuronCache::Lif {
                    alphas,
                    membrane,
                    spikes,
                },
                Some(total),
            ))
        }
        NeuronFamily::Ssm => {
            let mut matrices = Vec::with_capacity(width);
            for n in neurons {
                let NeuronDynamics::Ssm(p) = n else {
                    return Err(Error::Shape("non-SSM neuron in SSM layer".into()));
                };
                matrices.push(neurons::ssm_effective_matrices_with(p, arch.output_rescale)?);
            }
            let n_state = arch.state_dim;
            let mut states = vec![Complex64::new(0.0, 0.0); b_len * t_len * width * n_state];
            let mut pre_act = Array2::zeros(drive.dim());
            let mut out = Array2::zeros(drive.dim());
            let u = drive.as_slice().expect("standard layout");
            let pre = pre_act.as_slice_mut().expect("standard layout");
            let o = out.as_slice_mut().expect("standard layout");
            let mut x = vec![Complex64::new(0.0, 0.0); n_state];
            for b in 0..b_len {
                for (j, m) in matrices.iter().enumerate() {
                    let a = m.a.as_slice().expect("standard layout");
                    let bm = m.b.as_slice().expect("standard layout");
                    let c = m.c.as_slice().expect("standard layout");
                    x.fill(Complex64::new(0.0, 0.0));
                    for t in 0..t_len {
                        let idx = (b * t_len + t) * width + j;
                        let mut p = Complex64::new(0.0, 0.0);
                        for n in 0..n_state {
                            p += c[n] * x[n];
                        }
                        let r = p.re + p.im;
                        pre[idx] = r;
                        o[idx] = neurons::gelu(r);
                        states[idx * n_state..(idx + 1) * n_state].copy_from_slice(&x);
                        let un = u[idx];
                        for n in 0..n_state {
                            x[n] = a[n] * x[n] + bm[n] * un;
                        }
                    }
                }
            }
            debug_assert_eq!(combined_gelu(Complex64::new(0.0, 0.0)), 0.0);
            Ok((
                out,
                NeuronCache::Ssm {
                    matrices,
                    states,
                    pre_act,
                },
                None,
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// Loss and accuracy
// ---------------------------------------------------------------------------

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

fn check_labels(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if logits.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logits rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {} classes",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let hits = logits
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
