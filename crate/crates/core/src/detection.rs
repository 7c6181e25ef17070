//! Photon-count statistics for bright/dark state discrimination.

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("invalid input: {0}")]
    Validation(String),
}

/// How the configured signal rate relates to the background.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateConvention {
    /// Signal is ion fluorescence only; a bright ion also sees background.
    #[default]
    SignalPlusBackground,
    /// Signal is already the total bright-state rate, background included.
    SignalIsTotal,
}

/// Photon-counting conditions for one detection window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CountModel {
    /// counts/s
    pub signal_rate: f64,
    /// counts/s
    pub background_rate: f64,
    /// s
    pub duration: f64,
    pub convention: RateConvention,
}

impl CountModel {
    pub fn new(signal_rate: f64, background_rate: f64, duration: f64) -> Result<Self, DetectionError> {
        if !(signal_rate >= 0.0 && background_rate >= 0.0) {
            return Err(DetectionError::Validation("count rates must be nonnegative".into()));
        }
        if !(duration > 0.0) {
            return Err(DetectionError::Validation("detection duration must be positive".into()));
        }
        Ok(Self { signal_rate, background_rate, duration, convention: RateConvention::default() })
    }

    pub fn with_convention(self, convention: RateConvention) -> Self {
        Self { convention, ..self }
    }

    pub fn bright_mean(&self) -> f64 {
        match self.convention {
            RateConvention::SignalPlusBackground => (self.signal_rate + self.background_rate) * self.duration,
            RateConvention::SignalIsTotal => self.signal_rate * self.duration,
        }
    }

    pub fn dark_mean(&self) -> f64 {
        self.background_rate * self.duration
    }

    pub fn mean(&self, state: IonState) -> f64 {
        match state {
            IonState::Bright => self.bright_mean(),
            IonState::Dark => self.dark_mean(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IonState {
    Bright,
    Dark,
}

/// Photon counts of `shots` independent detection windows. Shot `i` is
/// drawn from stream `i` of `seed`.
pub fn simulate_counts(model: &CountModel, state: IonState, shots: usize, seed: u64) -> Vec<u64> {
    let mean = model.mean(state);
    if mean <= 0.0 {
        return vec![0; shots];
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    (0..shots).into_par_iter().map(|i| dist.sample(&mut rng::stream(seed, i as u64)) as u64).collect()
}

/// Threshold discrimination: counts `>= threshold` are called bright.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiscriminationResult {
    pub threshold: u64,
    /// P(bright ion gives fewer than `threshold` counts).
    pub bright_error: f64,
    /// P(dark ion gives at least `threshold` counts).
    pub dark_error: f64,
    /// `1 − ½(bright_error + dark_error)` (equal priors).
    pub fidelity: f64,
}

/// Poisson probabilities `P(k)` for `k = 0..=k_max`, evaluated in log space.
fn poisson_pmf(mean: f64, k_max: usize) -> Vec<f64> {
    if mean == 0.0 {
        let mut p = vec![0.0; k_max + 1];
        p[0] = 1.0;
        return p;
    }
    let ln_mean = mean.ln();
    let mut ln_p = -mean;
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(ln_p.exp());
    for k in 1..=k_max {
        ln_p += ln_mean - (k as f64).ln();
        out.push(ln_p.exp());
    }
    out
}

/// Errors at a fixed threshold, from exact Poisson sums.
pub fn errors_at_threshold(bright_mean: f64, dark_mean: f64, threshold: u64) -> DiscriminationResult {
    let k = threshold as usize;
    let k_max = scan_limit(bright_mean).max(scan_limit(dark_mean)).max(k + 1);
    let pb = poisson_pmf(bright_mean, k_max);
    let pd = poisson_pmf(dark_mean, k_max);
    let bright_error: f64 = pb[..k].iter().sum();
    let dark_error: f64 = pd[k..].iter().rev().sum();
    result(threshold, bright_error, dark_error)
}

fn result(threshold: u64, bright_error: f64, dark_error: f64) -> DiscriminationResult {
    let bright_error = bright_error.clamp(0.0, 1.0);
    let dark_error = dark_error.clamp(0.0, 1.0);
    DiscriminationResult { threshold, bright_error, dark_error, fidelity: 1.0 - 0.5 * (bright_error + dark_error) }
}

/// Count beyond which the Poisson tail is far below double precision.
fn scan_limit(mean: f64) -> usize {
    (mean + 40.0 * mean.sqrt() + 60.0).ceil() as usize
}

/// Threshold minimising the mean of bright and dark errors, found by an
/// exhaustive scan over integer thresholds; ties go to the smallest one.
pub fn discrimination_threshold(bright_mean: f64, dark_mean: f64) -> Result<DiscriminationResult, DetectionError> {
    if !(dark_mean >= 0.0 && dark_mean.is_finite() && bright_mean.is_finite()) {
        return Err(DetectionError::Validation("count means must be finite and nonnegative".into()));
    }
    if !(bright_mean > dark_mean) {
        return Err(DetectionError::Validation(format!("bright mean {bright_mean} must exceed dark mean {dark_mean}")));
    }
    let k_max = scan_limit(bright_mean);
    let pb = poisson_pmf(bright_mean, k_max);
    let pd = poisson_pmf(dark_mean, k_max);
    // dark_tail[k] = P(dark >= k), summed from the small end of the tail.
    let mut dark_tail = vec![0.0; k_max + 2];
    for k in (0..=k_max).rev() {
        dark_tail[k] = dark_tail[k + 1] + pd[k];
    }
    let mut best = result(0, 0.0, dark_tail[0]);
    let mut bright_below = 0.0;
    for k in 0..=k_max + 1 {
        if k > 0 {
            bright_below += pb[k - 1];
        }
        let cand = result(k as u64, bright_below, dark_tail[k]);
        if cand.bright_error + cand.dark_error < best.bright_error + best.dark_error {
            best = cand;
        }
    }
    Ok(best)
}

/// Error rates and fidelity of a threshold applied to measured counts.
pub fn empirical_discrimination(bright: &[u64], dark: &[u64], threshold: u64) -> DiscriminationResult {
    let frac =
        |xs: &[u64], f: &dyn Fn(u64) -> bool| xs.iter().filter(|&&c| f(c)).count() as f64 / xs.len().max(1) as f64;
    result(threshold, frac(bright, &|c| c < threshold), frac(dark, &|c| c >= threshold))
}

/// Convention used by [`snr`].
pub const SNR_CONVENTION: &str = "rate ratio: signal / background";

/// Signal-to-noise ratio as a rate ratio; unbounded without background.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snr {
    Finite(f64),
    Infinite,
}

impl Snr {
    pub fn value(&self) -> f64 {
        match self {
            Snr::Finite(v) => *v,
            Snr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Snr::Infinite)
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Snr::Finite(v) => s.serialize_f64(*v),
            Snr::Infinite => s.serialize_str("infinite"),
        }
    }
}

pub fn snr(signal_rate: f64, background_rate: f64) -> Snr {
    if background_rate > 0.0 {
        Snr::Finite(signal_rate / background_rate)
    } else {
        Snr::Infinite
    }
}

/// Analytic and Monte Carlo discrimination for one set of conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DetectionReport {
    pub model: CountModel,
    pub bright_mean: f64,
    pub dark_mean: f64,
    pub snr: Snr,
    pub snr_convention: &'static str,
    pub threshold: u64,
    pub fidelity: f64,
    pub errors: ErrorPair,
    pub monte_carlo: MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErrorPair {
    pub bright: f64,
    pub dark: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MonteCarlo {
    pub shots: usize,
    pub seed: u64,
    pub fidelity: f64,
    pub errors: ErrorPair,
    pub bright_sample_mean: f64,
    pub dark_sample_mean: f64,
}

/// Threshold from exact statistics, then checked against `shots` simulated
/// windows per state. Bright and dark draws use child seeds of `seed`.
pub fn detection_report(model: &CountModel, shots: usize, seed: u64) -> Result<DetectionReport, DetectionError> {
    if shots == 0 {
        return Err(DetectionError::Validation("shots must be at least 1".into()));
    }
    let analytic = discrimination_threshold(model.bright_mean(), model.dark_mean())?;
    let bright = simulate_counts(model, IonState::Bright, shots, rng::child_seed(seed, "bright"));
    let dark = simulate_counts(model, IonState::Dark, shots, rng::child_seed(seed, "dark"));
    let mc = empirical_discrimination(&bright, &dark, analytic.threshold);
    let mean = |xs: &[u64]| xs.iter().sum::<u64>() as f64 / xs.len() as f64;
    Ok(DetectionReport {
        model: *model,
        bright_mean: model.bright_mean(),
        dark_mean: model.dark_mean(),
        snr: snr(model.signal_rate, model.background_rate),
        snr_convention: SNR_CONVENTION,
        threshold: analytic.threshold,
        fidelity: analytic.fidelity,
        errors: ErrorPair { bright: analytic.bright_error, dark: analytic.dark_error },
        monte_carlo: MonteCarlo {
            shots,
            seed,
            fidelity: mc.fidelity,
            errors: ErrorPair { bright: mc.bright_error, dark: mc.dark_error },
            bright_sample_mean: mean(&bright),
            dark_sample_mean: mean(&dark),
        },
    })
}
