//! Fitting and extraction: Rabi traces, Gaussian beam profiles, heating
//! rates, cross-talk ratios and ensemble sensitivity scaling.

use serde::Serialize;
use thiserror::Error;

pub mod lm;
mod profile;
mod rabi;

pub use profile::fit_gaussian_profile;
pub use rabi::{fit_rabi, RabiFitOptions, RabiTrace};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("fit did not converge after {iterations} iterations (best reduced chi2 {best_reduced_chi2:.4e})")]
    NonConvergence { iterations: usize, best_reduced_chi2: f64, best: Box<FitResult> },
}

/// One fitted quantity with its 1σ uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Parameter {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
}

/// Outcome of a nonlinear fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    /// Fitted parameters followed by derived quantities.
    pub parameters: Vec<Parameter>,
    pub chi2: f64,
    pub dof: usize,
    pub reduced_chi2: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Uncertainties were rescaled by √χ²_red because the data carried no
    /// error bars.
    pub errors_scaled: bool,
    /// Conditions the caller should know about (e.g. a parameter pinned at
    /// a physical bound).
    pub flags: Vec<String>,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of `name`; panics if the fit has no such parameter.
    pub fn value(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("no parameter '{name}'")).value
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("no parameter '{name}'")).sigma
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

/// Packages an LM outcome; `sigmas_absolute` says whether the residuals
/// were normalised by real measurement errors.
pub(crate) fn finish_fit(
    names: &[&str],
    out: &lm::LmOutcome,
    sigmas_absolute: bool,
    mut flags: Vec<String>,
) -> Result<FitResult, AnalysisError> {
    let dof = out.residuals.len().saturating_sub(names.len());
    let reduced = if dof > 0 { out.chi2 / dof as f64 } else { 0.0 };
    let cov = lm::covariance(&out.jacobian);
    let scale = if sigmas_absolute { 1.0 } else { reduced.sqrt() };
    let sigmas: Vec<f64> = match &cov {
        Some(c) => (0..names.len()).map(|j| c[(j, j)].max(0.0).sqrt() * scale).collect(),
        None => {
            flags.push("singular_covariance".into());
            vec![f64::NAN; names.len()]
        }
    };
    let parameters = names
        .iter()
        .zip(&out.params)
        .zip(&sigmas)
        .map(|((n, v), s)| Parameter { name: n.to_string(), value: *v, sigma: *s })
        .collect();
    let result = FitResult {
        parameters,
        chi2: out.chi2,
        dof,
        reduced_chi2: reduced,
        converged: out.converged && cov.is_some(),
        iterations: out.iterations,
        errors_scaled: !sigmas_absolute,
        flags,
    };
    if !result.converged {
        return Err(AnalysisError::NonConvergence {
            iterations: out.iterations,
            best_reduced_chi2: reduced,
            best: Box::new(result),
        });
    }
    Ok(result)
}

/// Straight line `y = intercept + slope·x` from weighted least squares.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_sigma: f64,
    pub intercept_sigma: f64,
    /// Covariance between slope and intercept.
    pub covariance: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Weighted linear regression from the normal equations. With `sigma`
/// the uncertainties are absolute; without, unit weights are used and
/// uncertainties are scaled by the residual scatter (zero for two points).
pub fn weighted_line_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<LineFit, AnalysisError> {
    if x.len() != y.len() || sigma.is_some_and(|s| s.len() != x.len()) {
        return Err(AnalysisError::Validation("x, y and sigma must have equal lengths".into()));
    }
    if x.len() < 2 {
        return Err(AnalysisError::Validation("a line needs at least 2 points".into()));
    }
    let w: Vec<f64> = match sigma {
        Some(s) => {
            if s.iter().any(|s| !(*s > 0.0)) {
                return Err(AnalysisError::Validation("uncertainties must be positive".into()));
            }
            s.iter().map(|s| 1.0 / (s * s)).collect()
        }
        None => vec![1.0; x.len()],
    };
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * (x - xm) * (x - xm)).sum();
    if !(sxx > 0.0) {
        return Err(AnalysisError::Degenerate("all x values coincide".into()));
    }
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let chi2: f64 = w
        .iter()
        .zip(x)
        .zip(y)
        .map(|((w, x), y)| {
            let r = y - intercept - slope * x;
            w * r * r
        })
        .sum();
    let dof = x.len() - 2;
    let scale = match (sigma, dof) {
        (Some(_), _) => 1.0,
        (None, 0) => 0.0,
        (None, d) => chi2 / d as f64,
    };
    let var_slope = scale / sxx;
    let var_intercept = scale * (1.0 / sw + xm * xm / sxx);
    Ok(LineFit {
        slope,
        intercept,
        slope_sigma: var_slope.sqrt(),
        intercept_sigma: var_intercept.sqrt(),
        covariance: -xm * var_slope,
        chi2,
        dof,
    })
}

/// Linear heating fit `n̄(t) = n̄₀ + ṅ t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HeatingRate {
    /// quanta per millisecond
    pub rate_per_ms: f64,
    pub rate_sigma: f64,
    pub intercept: f64,
    pub intercept_sigma: f64,
    pub chi2: f64,
    pub dof: usize,
}

/// Heating rate from mean occupations fitted after `waits` (s).
pub fn heating_rate(waits: &[f64], nbar: &[f64], nbar_sigma: Option<&[f64]>) -> Result<HeatingRate, AnalysisError> {
    if waits.len() < 3 {
        return Err(AnalysisError::Validation(format!(
            "heating rate needs at least 3 wait times, got {}",
            waits.len()
        )));
    }
    let ms: Vec<f64> = waits.iter().map(|t| t * 1e3).collect();
    let fit = weighted_line_fit(&ms, nbar, nbar_sigma)?;
    Ok(HeatingRate {
        rate_per_ms: fit.slope,
        rate_sigma: fit.slope_sigma,
        intercept: fit.intercept,
        intercept_sigma: fit.intercept_sigma,
        chi2: fit.chi2,
        dof: fit.dof,
    })
}

/// Relative cross-talk intensity `(Ω_c/Ω₀)²`.
pub fn crosstalk_intensity_ratio(omega_c: f64, omega0: f64) -> f64 {
    let r = omega_c / omega0;
    r * r
}

/// Value with 1σ uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub sigma: f64,
}

/// [`crosstalk_intensity_ratio`] with first-order error propagation.
pub fn crosstalk_with_uncertainty(omega_c: Estimate, omega0: Estimate) -> Estimate {
    let value = crosstalk_intensity_ratio(omega_c.value, omega0.value);
    let rel = ((2.0 * omega_c.sigma / omega_c.value).powi(2) + (2.0 * omega0.sigma / omega0.value).powi(2)).sqrt();
    // At Ω_c = 0 the first-order term vanishes; keep the leading
    // second-order spread instead of reporting zero uncertainty.
    let sigma = if omega_c.value == 0.0 { (omega_c.sigma / omega0.value).powi(2) } else { value * rel };
    Estimate { value, sigma }
}

/// Fractional Rabi-frequency difference `δ = Ω_hi/Ω_lo − 1` between two
/// sites, so that `Ω_hi = (1 + δ)Ω_lo`, with propagated uncertainty.
pub fn rabi_imbalance(a: Estimate, b: Estimate) -> Estimate {
    let (hi, lo) = if a.value >= b.value { (a, b) } else { (b, a) };
    let ratio = hi.value / lo.value;
    let rel = ((hi.sigma / hi.value).powi(2) + (lo.sigma / lo.value).powi(2)).sqrt();
    Estimate { value: ratio - 1.0, sigma: ratio * rel }
}

/// Ensemble layout for distributed sensing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnsembleConfig {
    /// Ions per ensemble.
    pub ions: u32,
    /// Number of ensembles.
    pub ensembles: u32,
    /// Protocol constant.
    pub alpha: f64,
}

impl EnsembleConfig {
    pub fn new(ions: u32, ensembles: u32, alpha: f64) -> Result<Self, AnalysisError> {
        if ions < 1 || ensembles < 1 || !(alpha > 0.0) {
            return Err(AnalysisError::Validation("need N ≥ 1, m ≥ 1 and α > 0".into()));
        }
        Ok(Self { ions, ensembles, alpha })
    }
}

/// Relative sensitivity `(αN)^(−m/2)`.
pub fn ensemble_sensitivity_scaling(config: &EnsembleConfig) -> f64 {
    (config.alpha * config.ions as f64).powf(-(config.ensembles as f64) / 2.0)
}
