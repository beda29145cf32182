//! Poisson event streams with class-specific, piecewise-constant rates.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::EventStream;
use crate::error::{Error, Result};

/// Firing rates (Hz) of one class: `segments × channels`, each segment
/// lasting `duration / segments`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    pub rates: Array2<f64>,
}

/// Parameters of the default class-profile construction.
///
/// Channels are split into bands of `band_width`. Each class visits
/// `segments` bands in a class-specific order; the visited band fires at
/// `active_rate` on top of `baseline_rate`. Every class visits band
/// `i mod n_bands` for `i < segments` exactly once, so all classes share the
/// same mean rate per channel and differ only in temporal order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDesign {
    pub segments: usize,
    pub band_width: usize,
    pub active_rate: f64,
    pub baseline_rate: f64,
}

impl Default for ProfileDesign {
    fn default() -> Self {
        Self {
            segments: 16,
            band_width: 4,
            active_rate: 30.0,
            baseline_rate: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_channels: usize,
    pub duration: f64,
    /// Seconds per frame at resolution 1.
    pub base_window: f64,
    pub profiles: Vec<RateProfile>,
    pub samples_per_class: usize,
}

impl SyntheticSpec {
    /// Build class profiles from `design`, drawing band orders from `rng`.
    /// Every class gets a distinct band sequence.
    #[allow(clippy::too_many_arguments)]
    pub fn banded<R: Rng + ?Sized>(
        design: &ProfileDesign,
        n_classes: usize,
        n_channels: usize,
        duration: f64,
        base_window: f64,
        samples_per_class: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if design.band_width == 0 || design.band_width > n_channels || design.segments == 0 {
            return Err(Error::Config(
                "profile design needs 1 ≤ band_width ≤ channels and segments ≥ 1".into(),
            ));
        }
        let n_bands = n_channels / design.band_width;
        let visits: Vec<usize> = (0..design.segments).map(|i| i % n_bands).collect();
        let distinct = distinct_orders(&visits, n_bands);
        if distinct < n_classes as f64 {
            return Err(Error::Config(format!(
                "{n_bands} bands over {} segments give only {distinct} distinct orders for {n_classes} classes",
                design.segments
            )));
        }
        let mut orders: Vec<Vec<usize>> = Vec::with_capacity(n_classes);
        while orders.len() < n_classes {
            let mut order = visits.clone();
            order.shuffle(rng);
            if !orders.contains(&order) {
                orders.push(order);
            }
        }
        let profiles = orders
            .into_iter()
            .map(|order| {
                let mut rates = Array2::from_elem((design.segments, n_channels), design.baseline_rate);
                for (seg, band) in order.into_iter().enumerate() {
                    for c in band * design.band_width..(band + 1) * design.band_width {
                        rates[[seg, c]] += design.active_rate;
                    }
                }
                RateProfile { rates }
            })
            .collect();
        let spec = Self {
            n_classes,
            n_channels,
            duration,
            base_window,
            profiles,
            samples_per_class,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} rate profiles for {} classes",
                self.profiles.len(),
                self.n_classes
            )));
        }
        if !(self.duration > 0.0 && self.base_window > 0.0) {
            return Err(Error::Config("duration and base_window must be positive".into()));
        }
        let frames = self.duration / self.base_window;
        if (frames - frames.round()).abs() > 1e-9 * frames.max(1.0) {
            return Err(Error::Config(format!(
                "duration {} is not a multiple of base_window {}",
                self.duration, self.base_window
            )));
        }
        for (k, p) in self.profiles.iter().enumerate() {
            if p.rates.ncols() != self.n_channels || p.rates.nrows() == 0 {
                return Err(Error::Config(format!(
                    "class {k} profile has shape {:?}",
                    p.rates.dim()
                )));
            }
            if p.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(Error::Config(format!("class {k} has a negative or non-finite rate")));
            }
        }
        Ok(())
    }
}

/// Number of distinct arrangements of a multiset of band visits.
fn distinct_orders(visits: &[usize], n_bands: usize) -> f64 {
    let ln_fact = |k: usize| (1..=k).map(|i| (i as f64).ln()).sum::<f64>();
    let mut ln = ln_fact(visits.len());
    for b in 0..n_bands {
        ln -= ln_fact(visits.iter().filter(|&&v| v == b).count());
    }
    ln.exp().round()
}

/// `samples_per_class` streams per class, class-major. Each
/// `(segment, channel)` cell draws a Poisson count and places the events
/// uniformly inside the segment.
pub fn generate_synthetic<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<EventStream>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_classes * spec.samples_per_class);
    for (label, profile) in spec.profiles.iter().enumerate() {
        let n_seg = profile.rates.nrows();
        let seg_len = spec.duration / n_seg as f64;
        for _ in 0..spec.samples_per_class {
            let mut events = Vec::new();
            for seg in 0..n_seg {
                let start = seg as f64 * seg_len;
                for ch in 0..spec.n_channels {
                    let lambda = profile.rates[[seg, ch]] * seg_len;
                    if lambda <= 0.0 {
                        continue;
                    }
                    let n = Poisson::new(lambda)
                        .map_err(|e| Error::InvalidArgument(format!("poisson rate {lambda}: {e}")))?
                        .sample(rng) as usize;
                    for _ in 0..n {
                        let t = (start + rng.random::<f64>() * seg_len).min(spec.duration.next_down());
                        events.push((t, ch));
                    }
                }
            }
            events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            out.push(EventStream {
                events,
                duration: spec.duration,
                n_channels: spec.n_channels,
                label,
            });
        }
    }
    Ok(out)
}
