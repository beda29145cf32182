//! Backpropagation through time, AdamW and the local training loop.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    cross_entropy, forward_cached, softmax, ForwardCache, ForwardOptions, ForwardOutput, FrameSequence, Mode,
    ModelParams, NeuronCache, ParamGroup,
};
use crate::neurons::{self, boxcar, gelu_deriv, NeuronDynamics, ALPHA_MAX, ALPHA_MIN};

/// Local-training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub dropout: f64,
    pub lr: f64,
    pub lr_dynamics: f64,
    pub weight_decay: f64,
    pub weight_decay_dynamics: f64,
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_clip() -> f64 {
    10.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 32,
            dropout: 0.1,
            lr: 1e-2,
            lr_dynamics: 1e-3,
            weight_decay: 1e-3,
            weight_decay_dynamics: 1e-3,
            grad_clip: default_clip(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "training.dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lr_dynamics", self.lr_dynamics),
            ("weight_decay", self.weight_decay),
            ("weight_decay_dynamics", self.weight_decay_dynamics),
            ("grad_clip", self.grad_clip),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "training.{name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

pub struct Gradients {
    pub loss: f64,
    /// Same structure as the model; running-statistics entries are zero.
    pub grads: ModelParams,
    pub output: ForwardOutput,
}

/// Mean cross-entropy of `batch` and its exact gradient with respect to
/// every trainable parameter.
///
/// Spikes backpropagate through the boxcar surrogate and the reset term
/// `−αϑS[t]` is treated as a constant.
pub fn backward<R: Rng + ?Sized>(
    batch: &[FrameSequence],
    theta: &ModelParams,
    opts: ForwardOptions,
    rng: &mut R,
) -> Result<Gradients> {
    let (output, cache) = forward_cached(batch, theta, opts, rng, true)?;
    let cache = cache.expect("cache requested");
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let loss = cross_entropy(&output.logits, &labels)?;

    let b_len = batch.len();
    let mut d_logits = softmax(&output.logits);
    for (mut row, &y) in d_logits.rows_mut().into_iter().zip(&labels) {
        row[y] -= 1.0;
    }
    d_logits /= b_len as f64;

    let mut grads = theta.zeros_like();
    grads.readout = cache.pooled.t().dot(&d_logits);
    let d_pooled = d_logits.dot(&theta.readout.t());
    let t_len = cache.timesteps;
    let mut d_out = Array2::zeros((b_len * t_len, theta.arch.width));
    for b in 0..b_len {
        let row = d_pooled.row(b).mapv(|v| v / t_len as f64);
        for t in 0..t_len {
            d_out.row_mut(b * t_len + t).assign(&row);
        }
    }

    backprop_layers(theta, &cache, opts.mode, d_out, b_len, &mut grads);

    let mut bad = None;
    grads.for_each_tensor(&mut |k, t| {
        if bad.is_none() && t.iter().any(|v| !v.is_finite()) {
            bad = Some(k.to_string());
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok(Gradients { loss, grads, output })
}

fn backprop_layers(
    theta: &ModelParams,
    cache: &ForwardCache,
    mode: Mode,
    mut d_out: Array2<f64>,
    b_len: usize,
    grads: &mut ModelParams,
) {
    let t_len = cache.timesteps;
    for (l, (layer, lc)) in theta.layers.iter().zip(&cache.layers).enumerate().rev() {
        if let Some(mask) = &lc.dropout {
            d_out *= mask;
        }
        let d_drive = neuron_backward(theta, layer, lc, &d_out, b_len, t_len, &mut grads.layers[l].neurons);

        // Batch normalization.
        let gamma = &layer.norm.gamma;
        let xhat = &lc.norm.xhat;
        let d_beta = d_drive.sum_axis(Axis(0));
        let d_gamma = (&d_drive * xhat).sum_axis(Axis(0));
        let mut dz = d_drive;
        match mode {
            Mode::Train => {
                let m = xhat.nrows() as f64;
                for (mut row, xrow) in dz.rows_mut().into_iter().zip(xhat.rows()) {
                    for j in 0..row.len() {
                        let scale = gamma[j] * lc.norm.inv_std[j];
                        row[j] = scale * (row[j] - d_beta[j] / m - xrow[j] * d_gamma[j] / m);
                    }
                }
            }
            Mode::Eval => {
                for mut row in dz.rows_mut() {
                    for j in 0..row.len() {
                        row[j] *= gamma[j] * lc.norm.inv_std[j];
                    }
                }
            }
        }
        let g = &mut grads.layers[l];
        g.norm.gamma = d_gamma;
        g.norm.beta = d_beta;
        g.weights = lc.input.t().dot(&dz);
        if l > 0 {
            d_out = dz.dot(&layer.weights.t());
        }
    }
}

fn neuron_backward(
    theta: &ModelParams,
    layer: &crate::network::LayerParams,
    lc: &crate::network::LayerCache,
    d_out: &Array2<f64>,
    b_len: usize,
    t_len: usize,
    out: &mut [NeuronDynamics],
) -> Array2<f64> {
    let width = d_out.ncols();
    let mut d_drive = Array2::zeros(d_out.dim());
    let dd = d_drive.as_slice_mut().expect("standard layout");
    let g = d_out.as_slice().expect("standard layout");
    let u = lc.drive.as_slice().expect("standard layout");
    match &lc.neurons {
        NeuronCache::Lif {
            alphas,
            membrane,
            spikes,
        } => {
            let hw = theta.arch.surrogate_half_width;
            let mem = membrane.as_slice().expect("standard layout");
            let spk = spikes.as_slice().expect("standard layout");
            let mut d_alpha = vec![0.0; width];
            for j in 0..width {
                let NeuronDynamics::Lif(p) = &layer.neurons[j] else {
                    unreachable!("layer kinds are validated by forward")
                };
                let (alpha, th) = (alphas[j], p.threshold);
                for b in 0..b_len {
                    let mut g_next = 0.0;
                    for t in (0..t_len).rev() {
                        let idx = (b * t_len + t) * width + j;
                        let g_mem = g[idx] * boxcar(mem[idx] - th, hw) + alpha * g_next;
                        let (prev_v, prev_s) = if t > 0 {
                            (mem[idx - width], spk[idx - width])
                        } else {
                            (0.0, 0.0)
                        };
                        d_alpha[j] += g_mem * (prev_v - th * prev_s - u[idx]);
                        dd[idx] = g_mem * (1.0 - alpha);
                        g_next = g_mem;
                    }
                }
            }
            for (j, o) in out.iter_mut().enumerate() {
                let NeuronDynamics::Lif(p) = &layer.neurons[j] else {
                    unreachable!()
                };
                *o = NeuronDynamics::Lif(neurons::lif_param_grad(p, d_alpha[j]));
            }
        }
        NeuronCache::Ssm {
            matrices,
            states,
            pre_act,
        } => {
            let n_state = theta.arch.state_dim;
            let pre = pre_act.as_slice().expect("standard layout");
            let zero = Complex64::new(0.0, 0.0);
            let mut gx = vec![zero; n_state];
            for (j, m) in matrices.iter().enumerate() {
                let a = m.a.as_slice().expect("standard layout");
                let bm = m.b.as_slice().expect("standard layout");
                let c = m.c.as_slice().expect("standard layout");
                let mut ga = vec![zero; n_state];
                let mut gb = Array2::zeros((n_state, 1));
                let mut gc = Array2::zeros((1, n_state));
                for b in 0..b_len {
                    gx.fill(zero);
                    for t in (0..t_len).rev() {
                        let idx = (b * t_len + t) * width + j;
                        let gr = g[idx] * gelu_deriv(pre[idx]);
                        let gp = Complex64::new(gr, gr);
                        let x = &states[idx * n_state..(idx + 1) * n_state];
                        let un = u[idx];
                        let mut du = 0.0;
                        for n in 0..n_state {
                            gc[[0, n]] += x[n].conj() * gp;
                            ga[n] += x[n].conj() * gx[n];
                            gb[[n, 0]] += gx[n] * un;
                            du += (bm[n].conj() * gx[n]).re;
                            gx[n] = c[n].conj() * gp + a[n].conj() * gx[n];
                        }
                        dd[idx] = du;
                    }
                }
                let NeuronDynamics::Ssm(p) = &layer.neurons[j] else {
                    unreachable!()
                };
                out[j] = NeuronDynamics::Ssm(neurons::ssm_param_grad(p, theta.arch.output_rescale, &ga, gb, &gc));
            }
        }
    }
    d_drive
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub lr: f64,
    pub lr_dynamics: f64,
    pub weight_decay: f64,
    pub weight_decay_dynamics: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for OptimizerHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            lr_dynamics: c.lr_dynamics,
            weight_decay: c.weight_decay,
            weight_decay_dynamics: c.weight_decay_dynamics,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW moments, one entry per scalar in the model's visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub hyper: OptimizerHyper,
}

impl OptimizerState {
    pub fn new(theta: &ModelParams, hyper: OptimizerHyper) -> Self {
        let n = theta.to_flat().len();
        Self {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            hyper,
        }
    }
}

/// One AdamW step with bias correction and decoupled weight decay.
///
/// Dynamics parameters use `(lr_dynamics, weight_decay_dynamics)`; everything
/// else uses `(lr, weight_decay)`. Both rates are multiplied by `lr_scale`.
/// Running statistics are left alone. Directly-trained α is clamped into
/// `(0, 1)` afterwards.
pub fn adamw_step(theta: &mut ModelParams, grads: &ModelParams, opt: &mut OptimizerState, lr_scale: f64) -> Result<()> {
    let g = grads.to_flat();
    if g.len() != opt.first_moment.len() {
        return Err(Error::Shape(format!(
            "gradient has {} scalars, optimizer tracks {}",
            g.len(),
            opt.first_moment.len()
        )));
    }
    opt.step_count += 1;
    let h = opt.hyper.clone();
    let bc1 = 1.0 - h.beta1.powi(opt.step_count as i32);
    let bc2 = 1.0 - h.beta2.powi(opt.step_count as i32);
    let mut offset = 0;
    let (m, v) = (&mut opt.first_moment, &mut opt.second_moment);
    let mut shape_ok = true;
    theta.for_each_tensor_mut(&mut |key, t| {
        let range = offset..offset + t.len();
        offset += t.len();
        if range.end > g.len() {
            shape_ok = false;
            return;
        }
        let (lr, wd) = match key.group {
            ParamGroup::Statistics => return,
            ParamGroup::Weights => (h.lr * lr_scale, h.weight_decay),
            ParamGroup::Dynamics => (h.lr_dynamics * lr_scale, h.weight_decay_dynamics),
        };
        for (i, p) in range.zip(t.iter_mut()) {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            *p -= lr * wd * *p;
            *p -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + h.eps);
        }
        if key.name == "alpha" {
            for p in t.iter_mut() {
                *p = p.clamp(ALPHA_MIN, ALPHA_MAX);
            }
        }
    });
    if !shape_ok {
        return Err(Error::Shape("optimizer state does not match model".into()));
    }
    Ok(())
}

/// Scale trainable gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grads.for_each_tensor(&mut |k, t| {
        if k.group != ParamGroup::Statistics {
            sq += t.iter().map(|v| v * v).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        grads.for_each_tensor_mut(&mut |_, t| t.iter_mut().for_each(|v| *v *= scale));
    }
    norm
}

/// Cosine learning-rate schedule over `total_epochs`.
pub fn cosine_lr(global_epoch: usize, total_epochs: usize, base_lr: f64) -> f64 {
    if total_epochs == 0 {
        return base_lr;
    }
    let progress = global_epoch.min(total_epochs) as f64 / total_epochs as f64;
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

// ---------------------------------------------------------------------------
// Local training
// ---------------------------------------------------------------------------

/// Where a round's local epochs sit on the global cosine schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub epoch_offset: usize,
    pub total_epochs: usize,
}

impl Schedule {
    pub fn single(epochs: usize) -> Self {
        Self {
            epoch_offset: 0,
            total_epochs: epochs,
        }
    }
}

/// Work done by training forward passes, for operation counting.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardWork {
    pub forward_passes: u64,
    pub samples: u64,
    /// Σ over forward passes of batch size × sequence length.
    pub sample_steps: u64,
    /// Spikes emitted per hidden layer (empty entries for SSM layers are 0).
    pub spikes: Vec<f64>,
}

impl ForwardWork {
    pub fn record(&mut self, out: &ForwardOutput) {
        self.forward_passes += 1;
        self.samples += out.trace.batch as u64;
        self.sample_steps += (out.trace.batch * out.trace.timesteps) as u64;
        if self.spikes.len() < out.trace.spike_counts.len() {
            self.spikes.resize(out.trace.spike_counts.len(), 0.0);
        }
        for (acc, c) in self.spikes.iter_mut().zip(&out.trace.spike_counts) {
            *acc += c.unwrap_or(0.0);
        }
    }

    pub fn merge(&mut self, other: &ForwardWork) {
        self.forward_passes += other.forward_passes;
        self.samples += other.samples;
        self.sample_steps += other.sample_steps;
        if self.spikes.len() < other.spikes.len() {
            self.spikes.resize(other.spikes.len(), 0.0);
        }
        for (a, b) in self.spikes.iter_mut().zip(&other.spikes) {
            *a += b;
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub model: ModelParams,
    /// Mean training loss over the last epoch (`NaN` when no epoch ran).
    pub loss: f64,
    pub work: ForwardWork,
}

/// `config.epochs` epochs of shuffled mini-batch AdamW on `shard`, starting
/// from a fresh optimizer state.
pub fn train_local<R: Rng + ?Sized>(
    theta: &ModelParams,
    shard: &[FrameSequence],
    config: &TrainConfig,
    schedule: Schedule,
    rng: &mut R,
) -> Result<LocalOutcome> {
    if shard.is_empty() {
        return Err(Error::InvalidArgument("empty training shard".into()));
    }
    let mut model = theta.clone();
    let mut opt = OptimizerState::new(&model, OptimizerHyper::from(config));
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut work = ForwardWork::default();
    let mut last_loss = f64::NAN;
    let opts = ForwardOptions::train(config.dropout);
    for epoch in 0..config.epochs {
        let lr_scale = cosine_lr(schedule.epoch_offset + epoch, schedule.total_epochs, 1.0);
        order.shuffle(rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<FrameSequence> = chunk.iter().map(|&i| shard[i].clone()).collect();
            let mut g = backward(&batch, &model, opts, rng)?;
            clip_grad_norm(&mut g.grads, config.grad_clip);
            adamw_step(&mut model, &g.grads, &mut opt, lr_scale)?;
            model.update_running_stats(&g.output.batch_stats);
            work.record(&g.output);
            loss_sum += g.loss * batch.len() as f64;
            seen += batch.len();
        }
        last_loss = loss_sum / seen as f64;
    }
    Ok(LocalOutcome {
        model,
        loss: last_loss,
        work,
    })
}

/// Eval-mode loss and accuracy over a dataset, in fixed-size chunks.
pub fn evaluate_dataset(theta: &ModelParams, data: &[FrameSequence], chunk: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    // Eval mode draws no randomness.
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let (mut loss, mut hits) = (0.0, 0.0);
    for part in data.chunks(chunk.max(1)) {
        let out = crate::network::forward(part, theta, ForwardOptions::eval(), &mut rng)?;
        let labels: Vec<usize> = part.iter().map(|s| s.label).collect();
        loss += cross_entropy(&out.logits, &labels)? * part.len() as f64;
        hits += crate::network::accuracy(&out.logits, &labels)? * part.len() as f64;
    }
    let n = data.len() as f64;
    Ok((hits / n, loss / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use crate::neurons::NeuronKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(kind: NeuronKind) -> ModelParams {
        ModelParams::init(
            Architecture::new(kind, 3, 4, 1, 2).with_state_dim(2),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
    }

    fn hyper(lr: f64, wd: f64) -> OptimizerHyper {
        OptimizerHyper::from(&TrainConfig {
            lr,
            lr_dynamics: lr,
            weight_decay: wd,
            weight_decay_dynamics: wd,
            ..TrainConfig::default()
        })
    }

    fn filled(theta: &ModelParams, v: f64) -> ModelParams {
        let mut g = theta.zeros_like();
        g.for_each_tensor_mut(&mut |_, t| t.fill(v));
        g
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 0.3), 0.3);
        assert!(cosine_lr(10, 10, 0.3).abs() < 1e-17);
        assert!((cosine_lr(5, 10, 0.3) - 0.15).abs() < 1e-15);
        let lrs: Vec<f64> = (0..=40).map(|e| cosine_lr(e, 40, 1.0)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let theta = tiny(NeuronKind::STANDARD_SSM);
        let mut t = theta.clone();
        let mut opt = OptimizerState::new(&t, hyper(0.1, 0.0));
        adamw_step(&mut t, &theta.zeros_like(), &mut opt, 1.0).unwrap();
        assert_eq!(t, theta);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let theta = tiny(NeuronKind::STANDARD_SSM);
        let mut t = theta.clone();
        let mut opt = OptimizerState::new(&t, hyper(0.1, 0.0));
        adamw_step(&mut t, &filled(&theta, 1.0), &mut opt, 1.0).unwrap();
        let mut checked = 0;
        let (before, after) = (theta.to_flat(), t.to_flat());
        let mut i = 0;
        theta.for_each_tensor(&mut |k, s| {
            for _ in s {
                let step = before[i] - after[i];
                if k.group == ParamGroup::Statistics {
                    assert_eq!(step, 0.0, "{k}");
                } else {
                    assert!((step - 0.1).abs() < 1e-8, "{k}: {step}");
                    checked += 1;
                }
                i += 1;
            }
        });
        assert!(checked > 0);
    }

    #[test]
    fn decoupled_decay_shrinks_weights() {
        let theta = tiny(NeuronKind::DELTA_SSM);
        let mut t = theta.clone();
        let mut opt = OptimizerState::new(&t, hyper(0.1, 0.5));
        adamw_step(&mut t, &theta.zeros_like(), &mut opt, 1.0).unwrap();
        for (a, b) in t.readout.iter().zip(theta.readout.iter()) {
            assert!((a - b * 0.95).abs() < 1e-15);
        }
        assert_eq!(t.layers[0].norm.running_var, theta.layers[0].norm.running_var);
    }

    #[test]
    fn alpha_stays_inside_the_unit_interval() {
        let theta = tiny(NeuronKind::STANDARD_LIF);
        let mut t = theta.clone();
        let mut opt = OptimizerState::new(&t, hyper(5.0, 0.0));
        adamw_step(&mut t, &filled(&theta, -1.0), &mut opt, 1.0).unwrap();
        t.for_each_tensor(&mut |k, s| {
            if k.name == "alpha" {
                assert!(s.iter().all(|&a| a == ALPHA_MAX), "{s:?}");
            }
        });
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let theta = tiny(NeuronKind::STANDARD_SSM);
        let mut g = filled(&theta, 3.0);
        let before = clip_grad_norm(&mut g, 1.0);
        assert!(before > 1.0);
        let mut sq = 0.0;
        g.for_each_tensor(&mut |k, t| {
            if k.group != ParamGroup::Statistics {
                sq += t.iter().map(|v| v * v).sum::<f64>();
            }
        });
        assert!((sq.sqrt() - 1.0).abs() < 1e-12);
        let mut small = filled(&theta, 1e-3);
        let copy = small.clone();
        clip_grad_norm(&mut small, 10.0);
        assert_eq!(small, copy);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr: f64::NAN,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
