//! Hardware-independent operation counts and their energy cost.
//!
//! Counted: dense layer multiply-accumulates, neuron state updates, the LIF
//! reset on spiking steps, and the readout (once per sample, on the
//! time-averaged activity). Normalization, activations, pooling and the
//! optimizer are not counted.
//!
//! Complex arithmetic is decomposed into real operations:
//! a complex product is 4 multiplies and 2 adds, a complex-by-real product
//! is 2 multiplies, and a complex sum is 2 adds.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Architecture;
use crate::neurons::NeuronFamily;
use crate::training::ForwardWork;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCount {
    pub multiplies: u64,
    pub adds: u64,
}

impl OpCount {
    pub const ZERO: OpCount = OpCount { multiplies: 0, adds: 0 };

    pub fn new(multiplies: u64, adds: u64) -> Self {
        Self { multiplies, adds }
    }

    pub fn scale(self, k: u64) -> Self {
        Self::new(self.multiplies * k, self.adds * k)
    }
}

impl Add for OpCount {
    type Output = OpCount;

    fn add(self, o: OpCount) -> OpCount {
        OpCount::new(self.multiplies + o.multiplies, self.adds + o.adds)
    }
}

impl AddAssign for OpCount {
    fn add_assign(&mut self, o: OpCount) {
        *self = *self + o;
    }
}

impl std::iter::Sum for OpCount {
    fn sum<I: Iterator<Item = OpCount>>(iter: I) -> Self {
        iter.fold(OpCount::ZERO, Add::add)
    }
}

/// Per-operation energy in joules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub e_mult: f64,
    pub e_add: f64,
    pub training_multiplier: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            e_mult: 3.1e-12,
            e_add: 0.1e-12,
            training_multiplier: 3.0,
        }
    }
}

impl EnergyModel {
    pub fn forward_energy(&self, ops: OpCount) -> f64 {
        ops.multiplies as f64 * self.e_mult + ops.adds as f64 * self.e_add
    }
}

/// Energy of the training steps whose forward passes cost `forward`.
pub fn training_energy(forward: OpCount, model: &EnergyModel) -> f64 {
    model.training_multiplier * model.forward_energy(forward)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DenseInput {
    Graded,
    /// Binary input with the given fraction of ones.
    Spiking(f64),
}

/// Operations of a dense layer applied at every timestep of every sample.
/// Spiking input selects and sums weight rows, so it costs no multiplies.
pub fn count_dense(
    fan_in: usize,
    fan_out: usize,
    timesteps: usize,
    batch: usize,
    input: DenseInput,
) -> Result<OpCount> {
    let macs = (fan_in * fan_out * timesteps * batch) as u64;
    match input {
        DenseInput::Graded => Ok(OpCount::new(macs, macs)),
        DenseInput::Spiking(rate) => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("spike rate {rate} not in [0, 1]")));
            }
            Ok(OpCount::new(0, (rate * macs as f64).round() as u64))
        }
    }
}

/// Operations of one neuron step, per neuron.
///
/// LIF: `α·(·)` and `(1−α)·u` are 2 multiplies; the subtraction inside and
/// the final sum are 2 adds. SSM with `N` states, `n_in` inputs, `n_out`
/// outputs: `Ax`, `Bu`, their sum, `Cx` and `Re + Im`.
pub fn neuron_step_ops(family: NeuronFamily, state_dim: usize, n_in: usize, n_out: usize) -> OpCount {
    match family {
        NeuronFamily::Lif => OpCount::new(2, 2),
        NeuronFamily::Ssm => {
            let (n, i, o) = (state_dim as u64, n_in as u64, n_out as u64);
            if n == 0 {
                return OpCount::ZERO;
            }
            let mults = 4 * n + 2 * n * i + 4 * n * o;
            let adds = 2 * n + 2 * n * i.saturating_sub(1) + 2 * n + 2 * n * o + 2 * (n - 1) * o + o;
            OpCount::new(mults, adds)
        }
    }
}

/// Neuron-update operations of a layer of `width` single-input,
/// single-output neurons.
pub fn count_neuron_updates(
    family: NeuronFamily,
    width: usize,
    state_dim: usize,
    timesteps: usize,
    batch: usize,
) -> OpCount {
    neuron_step_ops(family, state_dim, 1, 1).scale((width * timesteps * batch) as u64)
}

/// The reset term `−αϑS[t]` costs one multiply and one add, only on steps
/// that carry a spike.
pub fn count_resets(spikes: u64) -> OpCount {
    OpCount::new(spikes, spikes)
}

/// Forward operations broken down by source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardOps {
    pub dense: OpCount,
    /// What the dense layers would cost with every input treated as graded.
    pub dense_graded: OpCount,
    pub neurons: OpCount,
    pub readout: OpCount,
}

impl ForwardOps {
    pub fn total(&self) -> OpCount {
        self.dense + self.neurons + self.readout
    }
}

impl Add for ForwardOps {
    type Output = ForwardOps;

    fn add(self, o: ForwardOps) -> ForwardOps {
        ForwardOps {
            dense: self.dense + o.dense,
            dense_graded: self.dense_graded + o.dense_graded,
            neurons: self.neurons + o.neurons,
            readout: self.readout + o.readout,
        }
    }
}

impl AddAssign for ForwardOps {
    fn add_assign(&mut self, o: ForwardOps) {
        *self = *self + o;
    }
}

/// Operation counts of the forward passes summarized by `work`.
///
/// The spiking dense count uses the measured spike total of the previous
/// layer, `spikes × fan_out`, which equals `rate·fan_in·fan_out·T·B`.
pub fn forward_ops(arch: &Architecture, work: &ForwardWork) -> ForwardOps {
    let steps = work.sample_steps as usize;
    let mut ops = ForwardOps::default();
    for l in 0..arch.hidden_layers {
        let fan_in = arch.fan_in(l);
        let graded = count_dense(fan_in, arch.width, steps, 1, DenseInput::Graded).expect("graded count");
        ops.dense_graded += graded;
        let spiking_input = l > 0 && arch.kind.family == NeuronFamily::Lif;
        ops.dense += if spiking_input {
            let spikes = work.spikes.get(l - 1).copied().unwrap_or(0.0).round() as u64;
            OpCount::new(0, spikes * arch.width as u64)
        } else {
            graded
        };
        ops.neurons += count_neuron_updates(arch.kind.family, arch.width, arch.state_dim, steps, 1);
        if arch.kind.family == NeuronFamily::Lif {
            ops.neurons += count_resets(work.spikes.get(l).copied().unwrap_or(0.0).round() as u64);
        }
    }
    ops.readout =
        count_dense(arch.width, arch.outputs, 1, work.samples as usize, DenseInput::Graded).expect("graded count");
    ops
}

/// Operation and energy totals of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunEnergy {
    pub per_client: Vec<ForwardOps>,
    pub total: ForwardOps,
    /// Training energy in joules, per client and overall.
    pub client_joules: Vec<f64>,
    pub joules: f64,
}

/// Sum the training work of every client over a run. `work[k]` covers all
/// rounds and epochs of client `k`, at that client's own sequence length.
pub fn accumulate_run(arch: &Architecture, work: &[ForwardWork], model: &EnergyModel) -> RunEnergy {
    let per_client: Vec<ForwardOps> = work.iter().map(|w| forward_ops(arch, w)).collect();
    let total = per_client.iter().fold(ForwardOps::default(), |a, &b| a + b);
    let client_joules = per_client.iter().map(|o| training_energy(o.total(), model)).collect();
    RunEnergy {
        joules: training_energy(total.total(), model),
        per_client,
        total,
        client_joules,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_counts() {
        assert_eq!(count_dense(2, 3, 1, 1, DenseInput::Graded).unwrap(), OpCount::new(6, 6));
        assert_eq!(
            count_dense(2, 3, 1, 1, DenseInput::Spiking(0.5)).unwrap(),
            OpCount::new(0, 3)
        );
        assert_eq!(
            count_dense(2, 3, 1, 1, DenseInput::Spiking(0.0)).unwrap(),
            OpCount::ZERO
        );
        assert!(count_dense(2, 3, 1, 1, DenseInput::Spiking(1.5)).is_err());
    }

    #[test]
    fn neuron_counts() {
        assert_eq!(count_neuron_updates(NeuronFamily::Lif, 1, 0, 1, 1), OpCount::new(2, 2));
        // a·x: 4 mul + 2 add; b·u: 2 mul; sum: 2 add; c·x: 4 mul + 2 add; re+im: 1 add.
        assert_eq!(count_neuron_updates(NeuronFamily::Ssm, 1, 1, 1, 1), OpCount::new(10, 7));
        assert_eq!(count_neuron_updates(NeuronFamily::Ssm, 3, 4, 0, 7), OpCount::ZERO);
        assert_eq!(
            count_neuron_updates(NeuronFamily::Ssm, 2, 4, 3, 5),
            neuron_step_ops(NeuronFamily::Ssm, 4, 1, 1).scale(30)
        );
    }

    #[test]
    fn energy_values() {
        let m = EnergyModel::default();
        assert!((training_energy(OpCount::new(6, 6), &m) - 57.6e-12).abs() < 1e-24);
        assert_eq!(training_energy(OpCount::ZERO, &m), 0.0);
        assert!((training_energy(OpCount::new(0, 3), &m) - 0.9e-12).abs() < 1e-24);
    }

    #[test]
    fn op_count_is_additive() {
        let parts = [OpCount::new(1, 2), OpCount::new(3, 4), OpCount::new(5, 6)];
        let a: OpCount = parts.iter().copied().sum();
        let b: OpCount = parts.iter().rev().copied().sum();
        assert_eq!(a, b);
        assert_eq!(a, OpCount::new(9, 12));
    }
}
