//! Analytic BPTT gradients against central finite differences.

mod common;

use common::gradients::gradient_error;
use fedta_core::NeuronKind;

#[test]
fn ssm_gradients_match_finite_differences() {
    for kind in [NeuronKind::STANDARD_SSM, NeuronKind::DELTA_SSM] {
        let (err, n) = gradient_error(kind, 11);
        assert!(n <= 500, "{n} parameters");
        assert!(err < 1e-5, "{kind}: max relative error {err:e}");
    }
}

#[test]
fn lif_gradients_match_relaxed_network() {
    for kind in [NeuronKind::STANDARD_LIF, NeuronKind::DELTA_LIF] {
        let (err, _) = gradient_error(kind, 5);
        assert!(err < 1e-4, "{kind}: max relative error {err:e}");
    }
}
