//! Lamb-Dicke parameters and carrier Rabi flopping of a thermal ion.
//!
//! Two independent evaluations are provided: the closed form obtained by
//! summing the thermal distribution analytically
//! ([`rabi_carrier_population`]) and an explicit truncated Fock-state sum
//! ([`rabi_population_oracle`]) used to verify it.

use num_complex::Complex;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::num::{consts, lit, to_f64, Real};
use crate::rng;
use crate::trap::IonSpecies;

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("value {value} outside the domain {domain}")]
    OutOfDomain { value: f64, domain: &'static str },
    #[error("Fock truncation at n_max={n_max} leaves thermal weight {deficit:e} (limit {limit:e})")]
    Truncation { n_max: usize, deficit: f64, limit: f64 },
}

/// Thermal weight allowed outside the Fock-sum truncation.
pub const TRUNCATION_WEIGHT: f64 = 1e-12;

/// One normal mode of motion as seen by the addressing beam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MotionalMode<T> {
    /// Secular angular frequency, rad/s.
    pub omega: T,
    /// Lamb-Dicke parameter.
    pub eta: T,
    /// Mean thermal occupation.
    pub nbar: T,
}

impl<T: Real> MotionalMode<T> {
    pub fn new(omega: T, eta: T, nbar: T) -> Result<Self, DynamicsError> {
        if !(omega > T::zero()) {
            return Err(DynamicsError::Validation("mode frequency must be positive".into()));
        }
        if !(eta >= T::zero()) {
            return Err(DynamicsError::Validation("Lamb-Dicke parameter must be nonnegative".into()));
        }
        if !(nbar >= T::zero()) {
            return Err(DynamicsError::Validation("mean occupation must be nonnegative".into()));
        }
        Ok(Self { omega, eta, nbar })
    }

    /// Mode whose Lamb-Dicke parameter follows from the drive geometry.
    pub fn from_drive(drive: &DriveSpec<T>, species: &IonSpecies<T>, omega: T, nbar: T) -> Result<Self, DynamicsError> {
        if !(omega > T::zero()) {
            return Err(DynamicsError::Validation("mode frequency must be positive".into()));
        }
        Self::new(omega, lamb_dicke(drive.wavelength, drive.angle, species, omega), nbar)
    }

    /// `√n̄ · η`, the Lamb-Dicke smallness parameter.
    pub fn lamb_dicke_product(&self) -> T {
        self.nbar.sqrt() * self.eta
    }

    /// Whether the Lamb-Dicke expansion behind the carrier model applies.
    pub fn is_valid(&self) -> bool {
        self.lamb_dicke_product() < T::one()
    }
}

/// Carrier drive on one ion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriveSpec<T> {
    /// Rabi frequency of the ion at rest, rad/s.
    pub omega0: T,
    /// Initial ground-state population (contrast).
    pub a: T,
    /// m
    pub wavelength: T,
    /// Angle between beam k-vector and the mode axis, rad.
    pub angle: T,
}

impl<T: Real> DriveSpec<T> {
    pub fn new(omega0: T, a: T, wavelength: T, angle: T) -> Result<Self, DynamicsError> {
        if !(omega0 >= T::zero()) {
            return Err(DynamicsError::Validation("Rabi frequency must be nonnegative".into()));
        }
        if !(a >= T::zero() && a <= T::one()) {
            return Err(DynamicsError::Validation("initial population must lie in [0, 1]".into()));
        }
        if !(wavelength > T::zero()) {
            return Err(DynamicsError::Validation("wavelength must be positive".into()));
        }
        Ok(Self { omega0, a, wavelength, angle })
    }

    /// Same beam driving a transition with a different coupling strength.
    pub fn for_transition(&self, transition: &TransitionSpec<T>) -> Self {
        Self { omega0: self.omega0 * transition.scale, ..*self }
    }

    /// π-time of the bare carrier, s.
    pub fn pi_time(&self) -> T {
        T::pi() / self.omega0
    }
}

/// Transition addressed by a drive; `scale` multiplies the rest Rabi
/// frequency to account for its coupling coefficient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionSpec<T> {
    pub label: String,
    pub scale: T,
}

impl<T: Real> TransitionSpec<T> {
    pub fn new(label: impl Into<String>, scale: T) -> Result<Self, DynamicsError> {
        if !(scale >= T::zero()) {
            return Err(DynamicsError::Validation("transition scale must be nonnegative".into()));
        }
        Ok(Self { label: label.into(), scale })
    }
}

/// `η = (2π/λ) cos θ √(ħ / 2mω)`.
pub fn lamb_dicke<T: Real>(wavelength: T, angle: T, species: &IonSpecies<T>, omega: T) -> T {
    let hbar: T = lit(consts::HBAR);
    T::two_pi() / wavelength * angle.cos() * (hbar / (lit::<T>(2.0) * species.mass * omega)).sqrt()
}

fn cis<T: Real>(phase: T) -> Complex<T> {
    Complex::new(phase.cos(), phase.sin())
}

/// Numerator and denominator of the carrier closed form at time `t`:
///
/// `f₁ = Re[e^{iΩ₀t} ∏ₖ e^{−iφₖ/2}(1 − n̄ₖ e^{iφₖ}/(n̄ₖ+1))]` and
/// `f₂ = ∏ₖ ((n̄ₖ+1) − 2n̄ₖ cos φₖ + n̄ₖ²/(n̄ₖ+1))`, with `φₖ = Ω₀ηₖ²t`.
/// The real part is taken of the whole product.
// `Complex<T>: MulAssign` would need extra bounds on `T`.
#[allow(clippy::assign_op_pattern)]
pub fn carrier_terms<T: Real>(t: T, drive: &DriveSpec<T>, modes: &[MotionalMode<T>]) -> (T, T) {
    let w = drive.omega0;
    let mut num = cis(w * t);
    let mut den = T::one();
    let two: T = lit(2.0);
    for m in modes {
        let phi = w * m.eta * m.eta * t;
        let n1 = m.nbar + T::one();
        num = num * cis(-phi / two) * (Complex::new(T::one(), T::zero()) - cis(phi) * (m.nbar / n1));
        den = den * (n1 - two * m.nbar * phi.cos() + m.nbar * m.nbar / n1);
    }
    (num.re, den)
}

/// Excited-state population after a carrier pulse of duration `t`.
///
/// `P(t) = (a/2)(1 − f₁/f₂)` (see [`carrier_terms`]). Callers are expected
/// to check [`MotionalMode::is_valid`]; outside the Lamb-Dicke regime the
/// expression is still evaluated but no longer describes the carrier.
pub fn rabi_carrier_population<T: Real>(t: T, drive: &DriveSpec<T>, modes: &[MotionalMode<T>]) -> T {
    let (f1, f2) = carrier_terms(t, drive, modes);
    let p = drive.a / lit(2.0) * (T::one() - f1 / f2);
    p.max(T::zero()).min(drive.a)
}

/// Smallest Fock cutoff whose thermal weight deficit, `(n̄/(n̄+1))^{n_max+1}`,
/// is at most [`TRUNCATION_WEIGHT`].
pub fn fock_cutoff(nbar: f64) -> usize {
    if nbar <= 0.0 {
        return 0;
    }
    let q = nbar / (nbar + 1.0);
    let n = (TRUNCATION_WEIGHT.ln() / q.ln()).ceil() - 1.0;
    let mut n = n.max(0.0) as usize;
    while q.powi(n as i32 + 1) > TRUNCATION_WEIGHT {
        n += 1;
    }
    n
}

/// Thermal occupation probability `n̄ⁿ/(n̄+1)ⁿ⁺¹`.
pub fn thermal_probability(nbar: f64, n: usize) -> f64 {
    if nbar == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let q = nbar / (nbar + 1.0);
    q.powi(n as i32) / (nbar + 1.0)
}

/// Excited-state population from an explicit thermal average over Fock
/// states, each flopping at `Ω_n = Ω₀(1 − Σₖ ηₖ²(nₖ + ½))`.
///
/// `n_max[k]` is the largest occupation kept for mode `k`; a cutoff leaving
/// more than [`TRUNCATION_WEIGHT`] of a mode's thermal weight is rejected.
pub fn rabi_population_oracle(
    t: f64,
    drive: &DriveSpec<f64>,
    modes: &[MotionalMode<f64>],
    n_max: &[usize],
) -> Result<f64, DynamicsError> {
    if n_max.len() != modes.len() {
        return Err(DynamicsError::Validation(format!("{} cutoffs given for {} modes", n_max.len(), modes.len())));
    }
    let mut weights = Vec::with_capacity(modes.len());
    for (m, &cut) in modes.iter().zip(n_max) {
        let p: Vec<f64> = (0..=cut).map(|n| thermal_probability(m.nbar, n)).collect();
        let deficit = if m.nbar == 0.0 { 0.0 } else { (m.nbar / (m.nbar + 1.0)).powi(cut as i32 + 1) };
        if deficit > TRUNCATION_WEIGHT {
            return Err(DynamicsError::Truncation { n_max: cut, deficit, limit: TRUNCATION_WEIGHT });
        }
        weights.push(p);
    }
    if modes.is_empty() {
        return Ok(drive.a / 2.0 * (1.0 - (drive.omega0 * t).cos()));
    }
    // Parallel over the first mode's occupation; each task walks the
    // remaining modes with an odometer. Partial sums are combined in index
    // order so the result does not depend on scheduling.
    let partial: Vec<f64> = (0..weights[0].len())
        .into_par_iter()
        .map(|n0| {
            let mut idx = vec![0usize; modes.len()];
            idx[0] = n0;
            let mut sum = 0.0;
            loop {
                let mut w = 1.0;
                let mut shift = 0.0;
                for (k, m) in modes.iter().enumerate() {
                    w *= weights[k][idx[k]];
                    shift += m.eta * m.eta * (idx[k] as f64 + 0.5);
                }
                sum += w * (drive.omega0 * (1.0 - shift) * t).cos();
                let mut k = modes.len() - 1;
                loop {
                    if k == 0 {
                        return sum;
                    }
                    idx[k] += 1;
                    if idx[k] < weights[k].len() {
                        break;
                    }
                    idx[k] = 0;
                    k -= 1;
                }
            }
        })
        .collect();
    let avg: f64 = partial.iter().sum();
    Ok(drive.a / 2.0 * (1.0 - avg))
}

/// Calibration point relating intensity to Rabi frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RabiReference<T> {
    /// W/m²
    pub intensity: T,
    /// rad/s
    pub omega: T,
}

/// `Ω = Ω_ref √(I / I_ref)`: Rabi frequency scales with field amplitude.
pub fn rabi_rate_from_intensity<T: Real>(intensity: T, reference: &RabiReference<T>) -> T {
    reference.omega * (intensity / reference.intensity).sqrt()
}

/// Mean occupation from the red/blue sideband amplitude ratio,
/// `n̄ = R/(1 − R)`.
pub fn nbar_from_sideband_ratio<T: Real>(ratio: T) -> Result<T, DynamicsError> {
    if !(ratio >= T::zero() && ratio < T::one()) {
        return Err(DynamicsError::OutOfDomain { value: to_f64(ratio), domain: "[0, 1)" });
    }
    Ok(ratio / (T::one() - ratio))
}

/// One point of a Rabi-flopping trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    /// s
    pub t: f64,
    /// Excited-state population (estimate when shots are used).
    pub population: f64,
    /// Standard error of the mean, when the point is a finite-shot estimate.
    pub stderr: Option<f64>,
    pub shots: Option<u64>,
}

/// Evenly spaced pulse durations `0, t_max/(points−1), …, t_max`.
pub fn time_grid(t_max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Rabi-flopping trace at `times`. With `shots = Some((n, seed))` each
/// point is the mean of `n` projective measurements; point `i` draws from
/// stream `i` of `seed`, so the trace is reproducible and independent of
/// evaluation order.
pub fn simulate_trace(
    times: &[f64],
    drive: &DriveSpec<f64>,
    modes: &[MotionalMode<f64>],
    shots: Option<(u64, u64)>,
) -> Result<Vec<TracePoint>, DynamicsError> {
    if let Some((0, _)) = shots {
        return Err(DynamicsError::Validation("shots must be at least 1".into()));
    }
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(DynamicsError::Validation("pulse durations must be nonnegative".into()));
    }
    Ok(times
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let p = rabi_carrier_population(t, drive, modes);
            match shots {
                None => TracePoint { t, population: p, stderr: None, shots: None },
                Some((n, seed)) => {
                    let mut r = rng::stream(seed, i as u64);
                    let k = Binomial::new(n, p.clamp(0.0, 1.0)).expect("probability in [0, 1]").sample(&mut r);
                    let est = k as f64 / n as f64;
                    let se = (est * (1.0 - est) / n as f64).sqrt();
                    TracePoint { t, population: est, stderr: Some(se), shots: Some(n) }
                }
            }
        })
        .collect())
}
