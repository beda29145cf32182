#![allow(dead_code)]

pub mod gradients;

use fedta_core::data::ProfileDesign;
use fedta_core::experiment::{DataConfig, ExperimentConfig, ModelConfig, Scenario, SyntheticConfig, SCHEMA_VERSION};
use fedta_core::federation::FederationMethod;
use fedta_core::network::{InputScaling, SpikeFn};
use fedta_core::neurons::OutputRescale;
use fedta_core::training::TrainConfig;
use fedta_core::NeuronKind;

/// A configuration small enough to run in well under a second per seed.
pub fn tiny_config(neuron: NeuronKind, method: FederationMethod) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        name: "tiny".into(),
        scenario: Scenario::A,
        resolutions: vec![1, 2],
        clients_per_resolution: 1,
        central_resolution: 1,
        neuron,
        method,
        seeds: vec![3, 4],
        rounds: 2,
        output_dir: None,
        client_diagnostics: false,
        model: ModelConfig {
            width: 6,
            hidden_layers: 2,
            state_dim: 2,
            output_rescale: OutputRescale::Zoh,
            spike_fn: SpikeFn::Heaviside,
            surrogate_half_width: 0.5,
            input_scaling: InputScaling::Rate,
        },
        training: TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        },
        data: DataConfig::Synthetic(SyntheticConfig {
            classes: 3,
            channels: 8,
            duration: 0.2,
            base_window: 0.01,
            train_per_class: 8,
            test_per_class: 4,
            channel_group: 1,
            profile: ProfileDesign {
                segments: 4,
                band_width: 2,
                ..ProfileDesign::default()
            },
        }),
    }
}
