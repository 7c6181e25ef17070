//! Gaussian fits to beam profiles.

use super::lm::{self, LmOptions};
use super::{finish_fit, AnalysisError, FitResult, Parameter};

/// `FWHM = σ √(8 ln 2)`.
pub fn fwhm_from_sigma(sigma: f64) -> f64 {
    sigma * (8.0 * 2f64.ln()).sqrt()
}

/// Fits `amplitude·exp(−(x−center)²/(2σ²)) + offset` to a sampled profile.
///
/// Result parameters: `amplitude`, `center`, `sigma`, `offset`, plus the
/// derived `fwhm`. Flat data is rejected as degenerate; a fitted width
/// larger than the sampled span is flagged `sigma_unbounded`.
pub fn fit_gaussian_profile(
    positions: &[f64],
    values: &[f64],
    errors: Option<&[f64]>,
) -> Result<FitResult, AnalysisError> {
    let n = positions.len();
    if values.len() != n || errors.is_some_and(|e| e.len() != n) {
        return Err(AnalysisError::Validation("positions, values and errors must have equal lengths".into()));
    }
    if n < 5 {
        return Err(AnalysisError::Validation(format!("profile fit needs at least 5 points, got {n}")));
    }
    if let Some(e) = errors {
        if e.iter().any(|e| !(*e > 0.0)) {
            return Err(AnalysisError::Validation("errors must be positive".into()));
        }
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let xmin = positions.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = positions.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = xmax - xmin;
    let noise = errors.map(|e| e.iter().sum::<f64>() / n as f64).unwrap_or(0.0);
    if !(hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE)) || hi - lo <= noise {
        return Err(AnalysisError::Degenerate("profile is flat; no peak to fit".into()));
    }
    if !(span > 0.0) {
        return Err(AnalysisError::Degenerate("all positions coincide".into()));
    }
    // Moments of the baseline-subtracted profile for the starting point.
    let w: Vec<f64> = values.iter().map(|v| v - lo).collect();
    let sw: f64 = w.iter().sum();
    let peak = positions[values.iter().enumerate().fold(0, |b, (i, v)| if *v > values[b] { i } else { b })];
    let centroid = w.iter().zip(positions).map(|(w, x)| w * x).sum::<f64>() / sw;
    let var = w.iter().zip(positions).map(|(w, x)| w * (x - centroid).powi(2)).sum::<f64>() / sw;
    let sigma0 = var.sqrt().clamp(span / (4.0 * n as f64), span);
    let p0 = [hi - lo, peak, sigma0, lo];
    let inv: Vec<f64> = match errors {
        Some(e) => e.iter().map(|e| 1.0 / e).collect(),
        None => vec![1.0; n],
    };
    let residuals = |p: &[f64]| -> Vec<f64> {
        positions
            .iter()
            .zip(values)
            .zip(&inv)
            .map(|((x, y), iw)| (p[0] * (-(x - p[1]).powi(2) / (2.0 * p[2] * p[2])).exp() + p[3] - y) * iw)
            .collect()
    };
    let amp_scale = (hi - lo).abs();
    let opts = LmOptions {
        lower: vec![None, None, Some(1e-6 * span), None],
        scale: vec![amp_scale, span / 10.0, span / 10.0, amp_scale],
        max_iterations: 200,
    };
    let out = lm::minimize(residuals, &p0, &opts);
    let mut flags = Vec::new();
    if out.params[2] > span {
        flags.push("sigma_unbounded".to_string());
    }
    let mut fit = finish_fit(&["amplitude", "center", "sigma", "offset"], &out, errors.is_some(), flags)?;
    let s = fit.get("sigma").cloned().expect("sigma fitted");
    fit.parameters.push(Parameter {
        name: "fwhm".into(),
        value: fwhm_from_sigma(s.value),
        sigma: fwhm_from_sigma(s.sigma),
    });
    Ok(fit)
}
