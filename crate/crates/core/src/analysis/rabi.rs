//! Fitting the thermal carrier model to Rabi-flopping traces.

use std::f64::consts::PI;

use serde::Serialize;

use super::lm::{self, LmOptions};
use super::{finish_fit, AnalysisError, FitResult};
use crate::dynamics::{rabi_carrier_population, DriveSpec, MotionalMode, TracePoint};

/// Measured (or simulated) excited-state populations versus pulse time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RabiTrace {
    /// s, strictly increasing
    pub times: Vec<f64>,
    pub populations: Vec<f64>,
    /// Standard error per point, when known.
    pub stderr: Option<Vec<f64>>,
    /// Measurements averaged per point, when known.
    pub shots: Option<Vec<u64>>,
}

impl RabiTrace {
    pub fn new(
        times: Vec<f64>,
        populations: Vec<f64>,
        stderr: Option<Vec<f64>>,
        shots: Option<Vec<u64>>,
    ) -> Result<Self, AnalysisError> {
        let n = times.len();
        if populations.len() != n
            || stderr.as_ref().is_some_and(|s| s.len() != n)
            || shots.as_ref().is_some_and(|s| s.len() != n)
        {
            return Err(AnalysisError::Validation("trace columns must have equal lengths".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AnalysisError::Validation("times must be strictly increasing".into()));
        }
        if populations.iter().any(|p| !p.is_finite()) {
            return Err(AnalysisError::Validation("populations must be finite".into()));
        }
        if let Some(s) = &stderr {
            if s.iter().any(|s| !(*s >= 0.0)) {
                return Err(AnalysisError::Validation("standard errors must be nonnegative".into()));
            }
            if shots.is_none() && s.contains(&0.0) {
                return Err(AnalysisError::Validation("zero standard error without a shot count".into()));
            }
        }
        if shots.as_ref().is_some_and(|s| s.contains(&0)) {
            return Err(AnalysisError::Validation("shot counts must be positive".into()));
        }
        Ok(Self { times, populations, stderr, shots })
    }

    pub fn from_points(points: &[TracePoint]) -> Result<Self, AnalysisError> {
        let stderr: Option<Vec<f64>> = points.iter().map(|p| p.stderr).collect();
        let shots: Option<Vec<u64>> = points.iter().map(|p| p.shots).collect();
        Self::new(points.iter().map(|p| p.t).collect(), points.iter().map(|p| p.population).collect(), stderr, shots)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Per-point uncertainties used as fit weights; points whose binomial
    /// standard error vanishes (p̂ = 0 or 1) get the floor `1/(shots+2)`.
    pub fn sigmas(&self) -> Option<Vec<f64>> {
        let se = self.stderr.as_ref()?;
        Some(
            se.iter()
                .enumerate()
                .map(|(i, &s)| match &self.shots {
                    Some(shots) if s == 0.0 || self.populations[i] <= 0.0 || self.populations[i] >= 1.0 => {
                        s.max(1.0 / (shots[i] as f64 + 2.0))
                    }
                    _ => s,
                })
                .collect(),
        )
    }
}

/// Starting point for [`fit_rabi`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RabiGuess {
    /// rad/s
    pub omega0: f64,
    pub nbar: f64,
    pub a: f64,
}

#[derive(Clone, Debug)]
pub struct RabiFitOptions {
    /// Modes coupling to the beam; their `eta` and `omega` are held fixed
    /// (their `nbar` is ignored, a single fitted n̄ applies to all).
    pub modes: Vec<MotionalMode<f64>>,
    /// Fit η as well (single mode only).
    pub float_eta: bool,
    pub guess: Option<RabiGuess>,
    pub max_iterations: usize,
}

impl RabiFitOptions {
    pub fn new(modes: Vec<MotionalMode<f64>>) -> Self {
        Self { modes, float_eta: false, guess: None, max_iterations: 200 }
    }
}

fn model(t: f64, omega0: f64, nbar: f64, a: f64, modes: &[MotionalMode<f64>], eta: Option<f64>) -> f64 {
    let drive = DriveSpec { omega0, a, wavelength: 1.0, angle: 0.0 };
    let ms: Vec<MotionalMode<f64>> =
        modes.iter().map(|m| MotionalMode { nbar, eta: eta.unwrap_or(m.eta), ..*m }).collect();
    rabi_carrier_population(t, &drive, &ms)
}

/// Frequency (rad/s) of the strongest Fourier component of the mean-removed
/// trace, refined by golden-section search around the best grid point.
fn dominant_frequency(trace: &RabiTrace) -> f64 {
    let n = trace.len() as f64;
    let mean = trace.populations.iter().sum::<f64>() / n;
    let power = |w: f64| {
        let (mut c, mut s) = (0.0, 0.0);
        for (t, p) in trace.times.iter().zip(&trace.populations) {
            c += (p - mean) * (w * t).cos();
            s += (p - mean) * (w * t).sin();
        }
        c * c + s * s
    };
    let span = trace.times[trace.len() - 1] - trace.times[0];
    let mut dts: Vec<f64> = trace.times.windows(2).map(|w| w[1] - w[0]).collect();
    dts.sort_by(f64::total_cmp);
    let w_max = PI / dts[dts.len() / 2];
    let w_min = PI / span;
    let steps = 4000;
    let dw = (w_max - w_min) / steps as f64;
    let best = (0..=steps)
        .map(|i| w_min + i as f64 * dw)
        .map(|w| (w, power(w)))
        .fold((w_min, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let (mut lo, mut hi) = ((best.0 - dw).max(w_min * 0.5), best.0 + dw);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if power(x1) > power(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    0.5 * (lo + hi)
}

/// Weighted best contrast `a` for fixed (Ω₀, n̄) (the model is linear in
/// `a`), and the resulting χ².
fn best_contrast(trace: &RabiTrace, w: &[f64], omega0: f64, nbar: f64, modes: &[MotionalMode<f64>]) -> (f64, f64) {
    let m: Vec<f64> = trace.times.iter().map(|&t| model(t, omega0, nbar, 1.0, modes, None)).collect();
    let smm: f64 = m.iter().zip(w).map(|(m, w)| w * m * m).sum();
    let spm: f64 = m.iter().zip(w).zip(&trace.populations).map(|((m, w), p)| w * m * p).sum();
    let a = if smm > 0.0 { (spm / smm).clamp(0.0, 1.0) } else { 0.0 };
    let chi2 = m.iter().zip(w).zip(&trace.populations).map(|((m, w), p)| w * (p - a * m).powi(2)).sum();
    (a, chi2)
}

/// Initial (Ω₀, n̄, a): Ω₀ from the spectral peak, then a coarse scan of
/// n̄ (contrast loss at late times) and of Ω₀ around the peak, with the
/// contrast solved linearly at every grid point.
fn initial_guess(trace: &RabiTrace, w: &[f64], modes: &[MotionalMode<f64>]) -> RabiGuess {
    let peak = dominant_frequency(trace);
    let nbars = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0, 50.0, 70.0, 100.0, 150.0];
    let mut best = (f64::INFINITY, RabiGuess { omega0: peak, nbar: 0.0, a: 1.0 });
    for k in -6..=6 {
        let omega0 = peak * (1.0 + 0.005 * k as f64);
        for &nbar in &nbars {
            let (a, chi2) = best_contrast(trace, w, omega0, nbar, modes);
            if chi2 < best.0 {
                best = (chi2, RabiGuess { omega0, nbar, a: a.max(0.05) });
            }
        }
    }
    best.1
}

/// Weighted least-squares fit of the thermal carrier model for
/// (Ω₀, n̄, a) — and η when `float_eta` — to `trace`.
///
/// Parameter names in the result: `omega0` (rad/s), `nbar`, `a`, `eta`.
/// When n̄ is pushed below zero it is held at 0 and the result carries the
/// `nbar_clamped` flag.
pub fn fit_rabi(trace: &RabiTrace, options: &RabiFitOptions) -> Result<FitResult, AnalysisError> {
    if trace.len() < 10 {
        return Err(AnalysisError::Validation(format!("Rabi fit needs at least 10 points, got {}", trace.len())));
    }
    if options.modes.is_empty() {
        return Err(AnalysisError::Validation("at least one motional mode is required".into()));
    }
    if options.float_eta && options.modes.len() != 1 {
        return Err(AnalysisError::Validation("floating eta is supported for a single mode only".into()));
    }
    let sigmas = trace.sigmas();
    let weights: Vec<f64> = match &sigmas {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; trace.len()],
    };
    let guess = match options.guess {
        Some(g) => g,
        None => initial_guess(trace, &weights, &options.modes),
    };
    let span = trace.times[trace.len() - 1] - trace.times[0];
    if span * guess.omega0 < 2.0 * PI {
        return Err(AnalysisError::Validation("trace must span at least one Rabi period".into()));
    }
    let modes = &options.modes;
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let float_eta = options.float_eta;
    let residuals = |p: &[f64]| -> Vec<f64> {
        let eta = if float_eta { Some(p[3]) } else { None };
        trace
            .times
            .iter()
            .zip(&trace.populations)
            .zip(&sqrt_w)
            .map(|((&t, &y), sw)| (model(t, p[0], p[1], p[2], modes, eta) - y) * sw)
            .collect()
    };
    let mut p0 = vec![guess.omega0, guess.nbar, guess.a];
    let mut lower = vec![Some(0.0), Some(0.0), Some(0.0)];
    let mut scale = vec![guess.omega0, 1.0, 1.0];
    let mut names = vec!["omega0", "nbar", "a"];
    if float_eta {
        p0.push(modes[0].eta);
        lower.push(Some(0.0));
        scale.push(modes[0].eta.max(1e-3));
        names.push("eta");
    }
    let opts = LmOptions { lower, scale, max_iterations: options.max_iterations };
    let out = lm::minimize(residuals, &p0, &opts);
    let mut flags = Vec::new();
    if out.at_bound[1] {
        flags.push("nbar_clamped".to_string());
    }
    finish_fit(&names, &out, sigmas.is_some(), flags)
}
