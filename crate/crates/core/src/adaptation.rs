//! Rewriting neuron dynamics for a different sampling interval.
//!
//! With `ρ = T_to / T_from`:
//!
//! | rule     | transition               | input matrix                 |
//! |----------|--------------------------|------------------------------|
//! | Euler    | `A' = I + ρ(A − I)`      | `B' = ρB`                    |
//! | Integral | `A' = A^ρ`               | `B' = (A' − I)(A − I)⁻¹ B`   |
//! | Δ-shift  | `Δ_log' = Δ_log + ln ρ`  | unchanged                    |
//!
//! Only φ is touched; weights, normalization and readout pass through.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelParams;
use crate::neurons::{LifDecay, LifParams, NeuronDynamics, SsmParams, SsmTransition, Variant};

/// Distance from 1 below which Integral adaptation refuses to divide.
pub const SINGULARITY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResolutionPair {
    pub from: f64,
    pub to: f64,
}

impl ResolutionPair {
    pub fn new(from: f64, to: f64) -> Result<Self> {
        for v in [from, to] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "resolution {v} must be positive and finite"
                )));
            }
        }
        Ok(Self { from, to })
    }

    pub fn rho(&self) -> f64 {
        self.to / self.from
    }

    pub fn inverse(&self) -> Self {
        Self {
            from: self.to,
            to: self.from,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.from == self.to
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptationRule {
    None,
    Euler,
    Integral,
    DeltaShift,
}

impl AdaptationRule {
    pub fn supports(self, variant: Variant) -> bool {
        match self {
            AdaptationRule::None => true,
            AdaptationRule::Euler | AdaptationRule::Integral => variant == Variant::Standard,
            AdaptationRule::DeltaShift => variant == Variant::Delta,
        }
    }
}

impl fmt::Display for AdaptationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptationRule::None => "none",
            AdaptationRule::Euler => "euler",
            AdaptationRule::Integral => "integral",
            AdaptationRule::DeltaShift => "delta-shift",
        })
    }
}

impl FromStr for AdaptationRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AdaptationRule::None),
            "euler" => Ok(AdaptationRule::Euler),
            "integral" => Ok(AdaptationRule::Integral),
            "delta-shift" | "delta" | "δ" => Ok(AdaptationRule::DeltaShift),
            _ => Err(Error::InvalidArgument(format!("unknown adaptation rule `{s}`"))),
        }
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "resolution ratio {rho} must be positive and finite"
        )))
    }
}

/// Affine first-order rule. Row `i` of `B` is scaled together with `A_i`.
pub fn adapt_euler(
    a: &Array1<Complex64>,
    b: &Array2<Complex64>,
    rho: f64,
) -> Result<(Array1<Complex64>, Array2<Complex64>)> {
    check_rho(rho)?;
    if b.nrows() != a.len() {
        return Err(Error::Shape(format!(
            "A has {} entries, B has {} rows",
            a.len(),
            b.nrows()
        )));
    }
    if rho == 1.0 {
        return Ok((a.clone(), b.clone()));
    }
    let one = Complex64::new(1.0, 0.0);
    let a2 = a.mapv(|v| one + (v - one) * rho);
    warn_unstable(a2.iter().map(|v| v.norm()), rho);
    Ok((a2, b.mapv(|v| v * rho)))
}

/// Exact rule for piecewise-constant inputs. Uses the principal branch for
/// non-integer `ρ`.
pub fn adapt_integral(
    a: &Array1<Complex64>,
    b: &Array2<Complex64>,
    rho: f64,
) -> Result<(Array1<Complex64>, Array2<Complex64>)> {
    check_rho(rho)?;
    if b.nrows() != a.len() {
        return Err(Error::Shape(format!(
            "A has {} entries, B has {} rows",
            a.len(),
            b.nrows()
        )));
    }
    let one = Complex64::new(1.0, 0.0);
    for (index, v) in a.iter().enumerate() {
        let distance = (v - one).norm();
        if distance < SINGULARITY_TOLERANCE {
            return Err(Error::Singular { index, distance });
        }
    }
    if rho == 1.0 {
        return Ok((a.clone(), b.clone()));
    }
    let a2 = a.mapv(|v| complex_power(v, rho));
    let mut b2 = b.clone();
    for (i, mut row) in b2.rows_mut().into_iter().enumerate() {
        let gain = (a2[i] - one) / (a[i] - one);
        row.mapv_inplace(|v| v * gain);
    }
    Ok((a2, b2))
}

/// `z^ρ`, by repeated multiplication when `ρ` is a small integer.
fn complex_power(z: Complex64, rho: f64) -> Complex64 {
    if rho.fract() == 0.0 && rho <= 64.0 {
        z.powi(rho as i32)
    } else {
        z.powf(rho)
    }
}

pub fn adapt_delta(delta_log: f64, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    if rho == 1.0 {
        return Ok(delta_log);
    }
    Ok(delta_log + rho.ln())
}

fn warn_unstable(magnitudes: impl Iterator<Item = f64>, rho: f64) {
    let worst = magnitudes.fold(0.0f64, f64::max);
    if worst >= 1.0 {
        log::warn!("euler adaptation with rho={rho} produced a pole of magnitude {worst:.4}");
    }
}

fn lif_scalar(alpha: f64, rule: AdaptationRule, rho: f64) -> f64 {
    match rule {
        AdaptationRule::Euler => {
            let a2 = 1.0 + rho * (alpha - 1.0);
            warn_unstable(std::iter::once(a2.abs()), rho);
            a2
        }
        AdaptationRule::Integral => alpha.powf(rho),
        _ => alpha,
    }
}

/// Adapt one neuron's dynamics. LIF α is treated as a 1×1 real transition;
/// its input gain `1 − α` follows from α. SSM `C` is never changed.
pub fn adapt_dynamics(phi: &NeuronDynamics, rule: AdaptationRule, pair: ResolutionPair) -> Result<NeuronDynamics> {
    let variant = phi.kind().variant;
    if !rule.supports(variant) {
        return Err(Error::IncompatibleRule {
            rule: rule.to_string(),
            variant: phi.kind().to_string(),
        });
    }
    let rho = pair.rho();
    check_rho(rho)?;
    if rule == AdaptationRule::None || rho == 1.0 {
        return Ok(phi.clone());
    }
    Ok(match phi {
        NeuronDynamics::Lif(p) => NeuronDynamics::Lif(LifParams {
            decay: match p.decay {
                LifDecay::Standard { alpha } => LifDecay::Standard {
                    alpha: lif_scalar(alpha, rule, rho),
                },
                LifDecay::Delta { delta_log, gamma_log } => LifDecay::Delta {
                    delta_log: adapt_delta(delta_log, rho)?,
                    gamma_log,
                },
            },
            threshold: p.threshold,
        }),
        NeuronDynamics::Ssm(p) => NeuronDynamics::Ssm(match &p.transition {
            SsmTransition::Standard { a } => {
                let (a2, b2) = match rule {
                    AdaptationRule::Euler => adapt_euler(a, &p.b, rho)?,
                    _ => adapt_integral(a, &p.b, rho)?,
                };
                SsmParams {
                    transition: SsmTransition::Standard { a: a2 },
                    b: b2,
                    c: p.c.clone(),
                }
            }
            SsmTransition::Delta {
                a_re_log,
                a_im,
                delta_log,
            } => SsmParams {
                transition: SsmTransition::Delta {
                    a_re_log: a_re_log.clone(),
                    a_im: a_im.clone(),
                    delta_log: adapt_delta(*delta_log, rho)?,
                },
                b: p.b.clone(),
                c: p.c.clone(),
            },
        }),
    })
}

/// Apply [`adapt_dynamics`] to every neuron of every layer.
pub fn adapt_model(theta: &ModelParams, rule: AdaptationRule, pair: ResolutionPair) -> Result<ModelParams> {
    let mut out = theta.clone();
    for layer in &mut out.layers {
        for neuron in &mut layer.neurons {
            *neuron = adapt_dynamics(neuron, rule, pair)?;
        }
    }
    Ok(out)
}
