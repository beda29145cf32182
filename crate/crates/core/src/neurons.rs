//! Stateful neuron models.
//!
//! Two families are supported, each in a standard and a Δ parameterization:
//!
//! ```text
//! LIF:  U[t+1] = α (U[t] − ϑ S[t]) + (1 − α) u[t]
//!       S[t+1] = H(U[t+1] − ϑ)
//!       Δ-LIF:  α = exp(−e^{Δ_log} e^{γ_log})
//!
//! SSM:  x[t+1] = A x[t] + B u[t]          (A diagonal, complex)
//!       y[t]   = GELU(Re(C x[t]) + Im(C x[t]))
//!       Δ-SSM:  A = exp(−e^{Δ_log} A_c),  A_c = e^{A_re_log} − j A_im
//!               C = C̃ (A − I) A_c⁻¹
//! ```
//!
//! All functions here are pure; parameters and states are plain values.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Firing threshold ϑ shared by every LIF neuron.
pub const THRESHOLD: f64 = 1.0;

/// Default half-width of the boxcar surrogate derivative.
pub const SURROGATE_HALF_WIDTH: f64 = 0.5;

/// Bounds applied to a directly-trained α after each optimizer step.
pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 1.0 - 1e-4;

/// Range of the S4D-Lin step size Δ at initialization.
pub const SSM_INIT_DELTA_MIN: f64 = 1e-3;
pub const SSM_INIT_DELTA_MAX: f64 = 1e-1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronFamily {
    Lif,
    Ssm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Standard,
    Delta,
}

/// A neuron family together with its parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NeuronKind {
    pub family: NeuronFamily,
    pub variant: Variant,
}

impl NeuronKind {
    pub const STANDARD_LIF: Self = Self::new(NeuronFamily::Lif, Variant::Standard);
    pub const DELTA_LIF: Self = Self::new(NeuronFamily::Lif, Variant::Delta);
    pub const STANDARD_SSM: Self = Self::new(NeuronFamily::Ssm, Variant::Standard);
    pub const DELTA_SSM: Self = Self::new(NeuronFamily::Ssm, Variant::Delta);

    pub const ALL: [Self; 4] = [Self::STANDARD_LIF, Self::DELTA_LIF, Self::STANDARD_SSM, Self::DELTA_SSM];

    pub const fn new(family: NeuronFamily, variant: Variant) -> Self {
        Self { family, variant }
    }
}

impl fmt::Display for NeuronKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variant {
            Variant::Standard => "standard",
            Variant::Delta => "delta",
        };
        let n = match self.family {
            NeuronFamily::Lif => "lif",
            NeuronFamily::Ssm => "ssm",
        };
        write!(f, "{v}-{n}")
    }
}

impl FromStr for NeuronKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard-lif" => Ok(Self::STANDARD_LIF),
            "delta-lif" => Ok(Self::DELTA_LIF),
            "standard-ssm" => Ok(Self::STANDARD_SSM),
            "delta-ssm" => Ok(Self::DELTA_SSM),
            other => Err(Error::InvalidArgument(format!(
                "unknown neuron kind `{other}` (expected standard-lif, delta-lif, standard-ssm or delta-ssm)"
            ))),
        }
    }
}

impl Serialize for NeuronKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NeuronKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// LIF
// ---------------------------------------------------------------------------

/// Decay parameterization of a LIF neuron.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LifDecay {
    Standard { alpha: f64 },
    Delta { delta_log: f64, gamma_log: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub decay: LifDecay,
    pub threshold: f64,
}

impl LifParams {
    pub fn standard(alpha: f64) -> Self {
        Self {
            decay: LifDecay::Standard { alpha },
            threshold: THRESHOLD,
        }
    }

    pub fn delta(delta_log: f64, gamma_log: f64) -> Self {
        Self {
            decay: LifDecay::Delta { delta_log, gamma_log },
            threshold: THRESHOLD,
        }
    }

    pub fn variant(&self) -> Variant {
        match self.decay {
            LifDecay::Standard { .. } => Variant::Standard,
            LifDecay::Delta { .. } => Variant::Delta,
        }
    }
}

/// Membrane potential and the spike emitted on the previous step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LifState {
    pub membrane: f64,
    pub spike: f64,
}

/// Decay factor α actually used by the recurrence.
pub fn lif_effective_alpha(params: &LifParams) -> f64 {
    match params.decay {
        LifDecay::Standard { alpha } => alpha,
        LifDecay::Delta { delta_log, gamma_log } => delta_alpha(delta_log, gamma_log),
    }
}

#[inline]
pub(crate) fn delta_alpha(delta_log: f64, gamma_log: f64) -> f64 {
    (-(delta_log.exp() * gamma_log.exp())).exp()
}

/// The membrane update of one step, before thresholding.
#[inline]
pub(crate) fn lif_membrane(alpha: f64, threshold: f64, membrane: f64, spike: f64, input: f64) -> f64 {
    alpha * (membrane - threshold * spike) + (1.0 - alpha) * input
}

/// Advance a LIF neuron by one step. Returns the new state and its spike.
pub fn lif_step(state: LifState, input: f64, params: &LifParams) -> Result<(LifState, f64)> {
    if !input.is_finite() || !state.membrane.is_finite() {
        return Err(Error::Divergence(format!(
            "LIF step with membrane {} and input {}",
            state.membrane, input
        )));
    }
    let alpha = lif_effective_alpha(params);
    let membrane = lif_membrane(alpha, params.threshold, state.membrane, state.spike, input);
    let spike = heaviside(membrane - params.threshold);
    Ok((LifState { membrane, spike }, spike))
}

#[inline]
pub(crate) fn heaviside(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Spike value and boxcar pseudo-derivative at membrane potential `v`.
///
/// The derivative is `1 / (2w)` inside `|v − ϑ| ≤ w` and zero elsewhere.
pub fn surrogate_spike(v: f64, threshold: f64, half_width: f64) -> (f64, f64) {
    (heaviside(v - threshold), boxcar(v - threshold, half_width))
}

#[inline]
pub(crate) fn boxcar(offset: f64, half_width: f64) -> f64 {
    if offset.abs() <= half_width {
        0.5 / half_width
    } else {
        0.0
    }
}

/// Integral of the boxcar: a linear ramp from 0 to 1 across the window.
#[inline]
pub(crate) fn ramp(offset: f64, half_width: f64) -> f64 {
    ((offset + half_width) / (2.0 * half_width)).clamp(0.0, 1.0)
}

pub fn init_lif<R: Rng + ?Sized>(variant: Variant, rng: &mut R) -> LifParams {
    let lo = (-1.0f64 / 5.0).exp();
    let hi = (-1.0f64 / 25.0).exp();
    match variant {
        Variant::Standard => LifParams::standard(rng.random_range(lo..=hi)),
        Variant::Delta => {
            let gamma_log = rng.random_range((1.0f64 / 25.0).ln()..=(1.0f64 / 5.0).ln());
            LifParams::delta(0.0, gamma_log)
        }
    }
}

// ---------------------------------------------------------------------------
// Diagonal SSM
// ---------------------------------------------------------------------------

/// How the Δ-SSM output matrix is rescaled from the trained C̃.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputRescale {
    /// `C = C̃ (A − I) A_c⁻¹`, consistent with zero-order-hold discretization.
    #[default]
    Zoh,
    /// `C = C̃ (e^A − I) A_c⁻¹` with the discrete A exponentiated again.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SsmTransition {
    Standard {
        a: Array1<Complex64>,
    },
    Delta {
        a_re_log: Array1<f64>,
        a_im: Array1<f64>,
        delta_log: f64,
    },
}

/// One diagonal SSM neuron. `b` is `N × n_in`, `c` is `n_out × N`; for the
/// Δ variant `c` holds the trained C̃.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsmParams {
    pub transition: SsmTransition,
    pub b: Array2<Complex64>,
    pub c: Array2<Complex64>,
}

impl SsmParams {
    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn variant(&self) -> Variant {
        match self.transition {
            SsmTransition::Standard { .. } => Variant::Standard,
            SsmTransition::Delta { .. } => Variant::Delta,
        }
    }
}

/// The discrete matrices `(A, B, C)` a neuron actually runs with.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmMatrices {
    pub a: Array1<Complex64>,
    pub b: Array2<Complex64>,
    pub c: Array2<Complex64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsmState {
    pub x: Array1<Complex64>,
}

impl SsmState {
    pub fn zeros(n: usize) -> Self {
        Self { x: Array1::zeros(n) }
    }
}

/// Continuous-time pole `A_c = e^{A_re_log} − j A_im`.
#[inline]
pub(crate) fn continuous_pole(a_re_log: f64, a_im: f64) -> Complex64 {
    Complex64::new(a_re_log.exp(), -a_im)
}

pub fn ssm_effective_matrices(params: &SsmParams) -> Result<SsmMatrices> {
    ssm_effective_matrices_with(params, OutputRescale::Zoh)
}

pub fn ssm_effective_matrices_with(params: &SsmParams, rescale: OutputRescale) -> Result<SsmMatrices> {
    match &params.transition {
        SsmTransition::Standard { a } => Ok(SsmMatrices {
            a: a.clone(),
            b: params.b.clone(),
            c: params.c.clone(),
        }),
        SsmTransition::Delta {
            a_re_log,
            a_im,
            delta_log,
        } => {
            let step = delta_log.exp();
            let n = a_re_log.len();
            let mut a = Array1::zeros(n);
            let mut gain = Array1::<Complex64>::zeros(n);
            for i in 0..n {
                let ac = continuous_pole(a_re_log[i], a_im[i]);
                if ac.norm() == 0.0 {
                    return Err(Error::DegenerateDynamics(format!(
                        "continuous pole {i} is zero; output rescaling undefined"
                    )));
                }
                a[i] = (-step * ac).exp();
                gain[i] = rescale_numerator(a[i], rescale) / ac;
            }
            let mut c = params.c.clone();
            for mut row in c.rows_mut() {
                row.zip_mut_with(&gain, |ci, g| *ci *= g);
            }
            Ok(SsmMatrices {
                a,
                b: params.b.clone(),
                c,
            })
        }
    }
}

#[inline]
pub(crate) fn rescale_numerator(a: Complex64, rescale: OutputRescale) -> Complex64 {
    match rescale {
        OutputRescale::Zoh => a - 1.0,
        OutputRescale::Literal => a.exp() - 1.0,
    }
}

/// Derivative of [`rescale_numerator`] with respect to `a`.
#[inline]
pub(crate) fn rescale_numerator_deriv(a: Complex64, rescale: OutputRescale) -> Complex64 {
    match rescale {
        OutputRescale::Zoh => Complex64::new(1.0, 0.0),
        OutputRescale::Literal => a.exp(),
    }
}

/// Standard normal CDF and density.
#[inline]
pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub(crate) fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * norm_cdf(x)
}

#[inline]
pub(crate) fn gelu_deriv(x: f64) -> f64 {
    norm_cdf(x) + x * norm_pdf(x)
}

/// Output activation of SSM neurons: GELU of the summed real and imaginary parts.
#[inline]
pub fn combined_gelu(z: Complex64) -> f64 {
    gelu(z.re + z.im)
}

/// Advance an SSM neuron by one step.
///
/// The output is read from the state *before* the update, so `y[t]` depends on
/// inputs up to `u[t − 1]`.
pub fn ssm_step(
    state: &SsmState,
    input: &[f64],
    m: &SsmMatrices,
    activation: impl Fn(Complex64) -> f64,
) -> Result<(SsmState, Vec<f64>)> {
    let n = m.a.len();
    if state.x.len() != n || m.b.nrows() != n || m.c.ncols() != n || m.b.ncols() != input.len() {
        return Err(Error::Shape(format!(
            "ssm_step: state {} / A {} / B {:?} / C {:?} / input {}",
            state.x.len(),
            n,
            m.b.dim(),
            m.c.dim(),
            input.len()
        )));
    }
    let output =
        m.c.rows()
            .into_iter()
            .map(|row| activation(row.iter().zip(state.x.iter()).map(|(c, x)| c * x).sum()))
            .collect();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        let drive: Complex64 = m.b.row(i).iter().zip(input).map(|(b, u)| b * *u).sum();
        x[i] = m.a[i] * state.x[i] + drive;
    }
    Ok((SsmState { x }, output))
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * (FRAC_1_SQRT_2 * scale)
}

/// S4D-Lin initialization: `A_c[n] = 1/2 − jπn`, Δ log-uniform in
/// `[1e−3, 1e−1]`, B and C̃ complex normal scaled by `1/√N`.
///
/// The standard variant stores the discretized `A = exp(−Δ A_c)` and the
/// matching rescaled `C`, so both variants start as the same function.
pub fn init_ssm<R: Rng + ?Sized>(variant: Variant, n: usize, n_in: usize, n_out: usize, rng: &mut R) -> SsmParams {
    assert!(n >= 1, "SSM state dimension must be at least 1");
    let delta_log = rng.random_range(SSM_INIT_DELTA_MIN.ln()..=SSM_INIT_DELTA_MAX.ln());
    let scale = 1.0 / (n as f64).sqrt();
    let b = Array2::from_shape_fn((n, n_in), |_| complex_normal(rng, scale));
    let c = Array2::from_shape_fn((n_out, n), |_| complex_normal(rng, scale));
    let a_re_log = Array1::from_elem(n, 0.5f64.ln());
    let a_im = Array1::from_shape_fn(n, |i| PI * i as f64);
    let delta = SsmParams {
        transition: SsmTransition::Delta {
            a_re_log,
            a_im,
            delta_log,
        },
        b,
        c,
    };
    match variant {
        Variant::Delta => delta,
        Variant::Standard => {
            let m = ssm_effective_matrices(&delta).expect("S4D-Lin poles are non-zero");
            SsmParams {
                transition: SsmTransition::Standard { a: m.a },
                b: m.b,
                c: m.c,
            }
        }
    }
}

/// Map gradients with respect to the effective `(A, B, C)` of a neuron back
/// onto its trained parameters.
///
/// Gradients of a real loss with respect to a complex quantity `z` are
/// carried as `∂L/∂Re z + j ∂L/∂Im z`; for holomorphic `w = f(z)` this gives
/// `G_z = conj(f'(z)) G_w`.
pub(crate) fn ssm_param_grad(
    params: &SsmParams,
    rescale: OutputRescale,
    grad_a: &[Complex64],
    grad_b: Array2<Complex64>,
    grad_c: &Array2<Complex64>,
) -> SsmParams {
    match &params.transition {
        SsmTransition::Standard { .. } => SsmParams {
            transition: SsmTransition::Standard {
                a: Array1::from(grad_a.to_vec()),
            },
            b: grad_b,
            c: grad_c.clone(),
        },
        SsmTransition::Delta {
            a_re_log,
            a_im,
            delta_log,
        } => {
            let n = a_re_log.len();
            let step = delta_log.exp();
            let mut g_ct = Array2::zeros(params.c.dim());
            let mut g_re_log = Array1::zeros(n);
            let mut g_im = Array1::zeros(n);
            let mut g_step = 0.0;
            for i in 0..n {
                let ac = continuous_pole(a_re_log[i], a_im[i]);
                let a = (-step * ac).exp();
                let q = rescale_numerator(a, rescale) / ac;
                let dq_da = rescale_numerator_deriv(a, rescale) / ac;
                let dq_dac = -q / ac;
                let mut g_q = Complex64::new(0.0, 0.0);
                for r in 0..params.c.nrows() {
                    g_ct[[r, i]] = q.conj() * grad_c[[r, i]];
                    g_q += params.c[[r, i]].conj() * grad_c[[r, i]];
                }
                let g_a = grad_a[i] + dq_da.conj() * g_q;
                let g_ac = dq_dac.conj() * g_q + (-step * a).conj() * g_a;
                g_step += ((-ac * a).conj() * g_a).re;
                g_re_log[i] = g_ac.re * a_re_log[i].exp();
                g_im[i] = -g_ac.im;
            }
            SsmParams {
                transition: SsmTransition::Delta {
                    a_re_log: g_re_log,
                    a_im: g_im,
                    delta_log: g_step * step,
                },
                b: grad_b,
                c: g_ct,
            }
        }
    }
}

/// Map the gradient with respect to the effective α onto the trained parameters.
pub(crate) fn lif_param_grad(params: &LifParams, grad_alpha: f64) -> LifParams {
    match params.decay {
        LifDecay::Standard { .. } => LifParams {
            decay: LifDecay::Standard { alpha: grad_alpha },
            threshold: 0.0,
        },
        LifDecay::Delta { delta_log, gamma_log } => {
            let rate = delta_log.exp() * gamma_log.exp();
            let g = grad_alpha * (-rate * (-rate).exp());
            LifParams {
                decay: LifDecay::Delta {
                    delta_log: g,
                    gamma_log: g,
                },
                threshold: 0.0,
            }
        }
    }
}

/// Per-neuron dynamics φ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NeuronDynamics {
    Lif(LifParams),
    Ssm(SsmParams),
}

impl NeuronDynamics {
    pub fn kind(&self) -> NeuronKind {
        match self {
            NeuronDynamics::Lif(p) => NeuronKind::new(NeuronFamily::Lif, p.variant()),
            NeuronDynamics::Ssm(p) => NeuronKind::new(NeuronFamily::Ssm, p.variant()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lif_two_step_recurrence() {
        let p = LifParams::standard(0.5);
        let (s1, k1) = lif_step(LifState::default(), 2.0, &p).unwrap();
        assert_eq!((s1.membrane, k1), (1.0, 1.0));
        let (s2, k2) = lif_step(s1, 2.0, &p).unwrap();
        assert_eq!((s2.membrane, k2), (1.0, 1.0));
    }

    #[test]
    fn lif_zero_input_stays_at_rest() {
        let p = LifParams::standard(0.9);
        let mut s = LifState::default();
        for _ in 0..50 {
            let (next, k) = lif_step(s, 0.0, &p).unwrap();
            assert_eq!((next.membrane, k), (0.0, 0.0));
            s = next;
        }
    }

    #[test]
    fn lif_reset_after_spike() {
        let p = LifParams::standard(0.9);
        let s = LifState {
            membrane: 0.5,
            spike: 1.0,
        };
        let (next, k) = lif_step(s, 0.0, &p).unwrap();
        assert!(close(next.membrane, -0.45, 1e-15));
        assert_eq!(k, 0.0);
    }

    #[test]
    fn lif_rejects_non_finite() {
        let p = LifParams::standard(0.9);
        assert!(lif_step(LifState::default(), f64::NAN, &p).is_err());
        let bad = LifState {
            membrane: f64::INFINITY,
            spike: 0.0,
        };
        assert!(lif_step(bad, 0.0, &p).is_err());
    }

    #[test]
    fn effective_alpha() {
        assert!(close(
            lif_effective_alpha(&LifParams::delta(0.0, 0.0)),
            (-1.0f64).exp(),
            1e-15
        ));
        let a = lif_effective_alpha(&LifParams::delta(-20.0, 0.0));
        let expected = 1.0 - (-20.0f64).exp();
        assert!(close(a, expected, 1e-15));
        assert!(a < 1.0);
        assert_eq!(lif_effective_alpha(&LifParams::standard(0.75)), 0.75);
    }

    #[test]
    fn surrogate_boxcar() {
        assert_eq!(surrogate_spike(1.0, 1.0, 0.5), (1.0, 1.0));
        assert_eq!(surrogate_spike(-5.0, 1.0, 0.5), (0.0, 0.0));
        assert_eq!(surrogate_spike(1.4, 1.0, 0.5), (1.0, 1.0));
        assert_eq!(surrogate_spike(1.6, 1.0, 0.5).1, 0.0);
        for w in [0.1, 0.5, 2.0] {
            assert_eq!(surrogate_spike(0.99, 1.0, w).0, 0.0);
            assert_eq!(surrogate_spike(1.0, 1.0, w).0, 1.0);
        }
    }

    fn delta_ssm(delta_log: f64, a_re_log: f64, a_im: f64) -> SsmParams {
        SsmParams {
            transition: SsmTransition::Delta {
                a_re_log: Array1::from_elem(1, a_re_log),
                a_im: Array1::from_elem(1, a_im),
                delta_log,
            },
            b: Array2::from_elem((1, 1), Complex64::new(1.0, 0.0)),
            c: Array2::from_elem((1, 1), Complex64::new(1.0, 0.0)),
        }
    }

    #[test]
    fn delta_ssm_scalar_matrices() {
        let m = ssm_effective_matrices(&delta_ssm(0.0, 0.0, 0.0)).unwrap();
        let e = (-1.0f64).exp();
        assert!((m.a[0] - e).norm() < 1e-15);
        assert!((m.c[[0, 0]] - (e - 1.0)).norm() < 1e-15);
        assert_eq!(m.b[[0, 0]], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn delta_ssm_literal_rescale() {
        let p = delta_ssm(0.0, 0.0, 0.0);
        let m = ssm_effective_matrices_with(&p, OutputRescale::Literal).unwrap();
        let e = (-1.0f64).exp();
        assert!((m.c[[0, 0]] - (e.exp() - 1.0)).norm() < 1e-14);
    }

    #[test]
    fn delta_ssm_power_law() {
        let p1 = delta_ssm(0.0, 0.3, 2.0);
        let p2 = delta_ssm(2.0f64.ln(), 0.3, 2.0);
        let a1 = ssm_effective_matrices(&p1).unwrap().a[0];
        let a2 = ssm_effective_matrices(&p2).unwrap().a[0];
        assert!((a2 - a1 * a1).norm() < 1e-12);
    }

    #[test]
    fn standard_ssm_is_passthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_ssm(Variant::Standard, 3, 2, 2, &mut rng);
        let m = ssm_effective_matrices(&p).unwrap();
        let SsmTransition::Standard { a } = &p.transition else {
            unreachable!()
        };
        assert_eq!(&m.a, a);
        assert_eq!(m.b, p.b);
        assert_eq!(m.c, p.c);
    }

    #[test]
    fn degenerate_pole_is_an_error() {
        let p = delta_ssm(0.0, f64::NEG_INFINITY, 0.0);
        assert!(matches!(ssm_effective_matrices(&p), Err(Error::DegenerateDynamics(_))));
    }

    fn scalar_matrices(a: f64, b: f64, c: f64) -> SsmMatrices {
        SsmMatrices {
            a: Array1::from_elem(1, Complex64::new(a, 0.0)),
            b: Array2::from_elem((1, 1), Complex64::new(b, 0.0)),
            c: Array2::from_elem((1, 1), Complex64::new(c, 0.0)),
        }
    }

    #[test]
    fn ssm_step_uses_pre_update_state() {
        let m = scalar_matrices(0.0, 1.0, 1.0);
        let (s, y) = ssm_step(&SsmState::zeros(1), &[3.0], &m, combined_gelu).unwrap();
        assert_eq!(s.x[0], Complex64::new(3.0, 0.0));
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn ssm_step_geometric_fixed_point() {
        let m = scalar_matrices(0.5, 1.0, 1.0);
        let mut s = SsmState::zeros(1);
        for _ in 0..80 {
            s = ssm_step(&s, &[1.0], &m, combined_gelu).unwrap().0;
        }
        assert!((s.x[0] - 2.0).norm() < 1e-12);
    }

    #[test]
    fn ssm_step_zero_is_fixed() {
        let m = scalar_matrices(0.7, 2.0, -1.0);
        let (s, y) = ssm_step(&SsmState::zeros(1), &[0.0], &m, combined_gelu).unwrap();
        assert_eq!(s.x[0], Complex64::new(0.0, 0.0));
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn ssm_step_shape_mismatch() {
        let m = scalar_matrices(0.5, 1.0, 1.0);
        assert!(matches!(
            ssm_step(&SsmState::zeros(2), &[1.0], &m, combined_gelu),
            Err(Error::Shape(_))
        ));
        assert!(ssm_step(&SsmState::zeros(1), &[1.0, 2.0], &m, combined_gelu).is_err());
    }

    #[test]
    fn lif_init_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = lif_effective_alpha(&init_lif(Variant::Standard, &mut rng));
            assert!((0.8187..=0.9608).contains(&a), "{a}");
            let d = init_lif(Variant::Delta, &mut rng);
            let a = lif_effective_alpha(&d);
            assert!(((-0.2f64).exp() - 1e-12..=(-0.04f64).exp() + 1e-12).contains(&a));
        }
        let p = LifParams::delta(0.0, (1.0f64 / 5.0).ln());
        assert!(close(lif_effective_alpha(&p), (-0.2f64).exp(), 1e-15));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_ssm(Variant::Delta, 4, 1, 1, &mut ChaCha8Rng::seed_from_u64(9));
        let b = init_ssm(Variant::Delta, 4, 1, 1, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let a = init_lif(Variant::Standard, &mut ChaCha8Rng::seed_from_u64(9));
        let b = init_lif(Variant::Standard, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn s4d_lin_imaginary_parts() {
        let p = init_ssm(Variant::Delta, 2, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        let SsmTransition::Delta { a_im, a_re_log, .. } = &p.transition else {
            unreachable!()
        };
        assert_eq!(a_im.to_vec(), vec![0.0, PI]);
        assert!(a_re_log.iter().all(|&v| v == 0.5f64.ln()));
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for k in NeuronKind::ALL {
            assert_eq!(k.to_string().parse::<NeuronKind>().unwrap(), k);
        }
        assert!("spiking".parse::<NeuronKind>().is_err());
    }
}
