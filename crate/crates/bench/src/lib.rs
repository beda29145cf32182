//! Fixtures shared by the benchmarks.

use fedta_core::{Architecture, FrameSequence, ModelParams, NeuronKind};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale model: 32 inputs, 2 hidden layers, 10 classes.
pub fn model(kind: NeuronKind, width: usize) -> ModelParams {
    let arch = Architecture::new(kind, 32, width, 2, 10);
    ModelParams::init(arch, &mut ChaCha8Rng::seed_from_u64(0))
}

/// `n` sequences of `steps` frames with small Poisson-like counts.
pub fn batch(n: usize, steps: usize) -> Vec<FrameSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| {
            let frames = Array2::from_shape_fn((steps, 32), |_| if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 });
            FrameSequence::new(frames, 1, i % 10)
        })
        .collect()
}
