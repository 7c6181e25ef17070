//! Damped nonlinear least squares (Levenberg-Marquardt).

use nalgebra::{DMatrix, DVector};

/// Settings for [`minimize`].
#[derive(Clone, Debug)]
pub struct LmOptions {
    /// Lower bound per parameter; steps are projected onto it.
    pub lower: Vec<Option<f64>>,
    /// Typical magnitude per parameter; sets finite-difference steps and
    /// the relative step convergence test.
    pub scale: Vec<f64>,
    pub max_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Sum of squared (weighted) residuals at `params`.
    pub chi2: f64,
    /// Jacobian of the residuals at `params`.
    pub jacobian: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters that ended on their lower bound after a projected step.
    pub at_bound: Vec<bool>,
}

fn chi2(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

fn project(p: &mut [f64], lower: &[Option<f64>]) -> Vec<bool> {
    p.iter_mut()
        .zip(lower)
        .map(|(x, lo)| match lo {
            Some(lo) if *x < *lo => {
                *x = *lo;
                true
            }
            _ => false,
        })
        .collect()
}

/// Central-difference Jacobian; one-sided at a lower bound.
pub fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, p: &[f64], r0: &[f64], opts: &LmOptions) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(r0.len(), p.len());
    for j in 0..p.len() {
        let h = 1e-6 * p[j].abs().max(opts.scale[j]);
        let mut hi = p.to_vec();
        hi[j] += h;
        let rh = f(&hi);
        let near_bound = matches!(opts.lower[j], Some(lo) if p[j] - h < lo);
        if near_bound {
            for i in 0..r0.len() {
                jac[(i, j)] = (rh[i] - r0[i]) / h;
            }
        } else {
            let mut lo = p.to_vec();
            lo[j] -= h;
            let rl = f(&lo);
            for i in 0..r0.len() {
                jac[(i, j)] = (rh[i] - rl[i]) / (2.0 * h);
            }
        }
    }
    jac
}

/// Minimises `Σ rᵢ(p)²` from `p0`. Only steps that lower the objective
/// are accepted, so the objective is non-increasing across iterations.
pub fn minimize<F: Fn(&[f64]) -> Vec<f64>>(f: F, p0: &[f64], opts: &LmOptions) -> LmOutcome {
    let n = p0.len();
    let mut p = p0.to_vec();
    let mut at_bound = project(&mut p, &opts.lower);
    let mut r = f(&p);
    let mut c = chi2(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations && !converged {
        iterations += 1;
        let jac = jacobian(&f, &p, &r, opts);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        if c == 0.0 {
            converged = true;
            break;
        }
        loop {
            let mut m = a.clone();
            for j in 0..n {
                let d = if a[(j, j)] > 0.0 { a[(j, j)] } else { 1.0 };
                m[(j, j)] += lambda * d;
            }
            let step = match m.cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                }
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            let hit = project(&mut trial, &opts.lower);
            let rt = f(&trial);
            let ct = chi2(&rt);
            let rel_step = trial
                .iter()
                .zip(&p)
                .zip(&opts.scale)
                .map(|((t, x), s)| (t - x).abs() / (x.abs() + s))
                .fold(0.0, f64::max);
            if ct.is_finite() && ct < c {
                let drop = c - ct;
                p = trial;
                r = rt;
                c = ct;
                at_bound = hit.iter().zip(&p).zip(&opts.lower).map(|((h, x), lo)| *h || Some(*x) == *lo).collect();
                lambda = (lambda / 10.0).max(1e-12);
                if drop <= 1e-14 * c || rel_step < 1e-12 {
                    converged = true;
                }
                break;
            }
            if rel_step < 1e-12 {
                // No representable improvement left along the damped
                // direction: the current point is a minimum to working
                // precision.
                converged = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                converged = true;
                break;
            }
        }
    }
    let jac = jacobian(&f, &p, &r, opts);
    LmOutcome { params: p, chi2: c, jacobian: jac, residuals: r, iterations, converged, at_bound }
}

/// `(JᵀJ)⁻¹`, or `None` when the parameters are not all identifiable.
pub fn covariance(jac: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let a = jac.transpose() * jac;
    let inv = a.clone().cholesky()?.inverse();
    if inv.iter().all(|x| x.is_finite()) {
        Some(inv)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_decay() {
        let t: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-1.3 * t).exp()).collect();
        let f = |p: &[f64]| t.iter().zip(&y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y).collect::<Vec<_>>();
        let opts = LmOptions { lower: vec![None, None], scale: vec![1.0, 1.0], max_iterations: 200 };
        let out = minimize(f, &[1.0, 0.5], &opts);
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-9);
        assert!((out.params[1] - 1.3).abs() < 1e-9);
    }

    #[test]
    fn respects_lower_bound() {
        let f = |p: &[f64]| vec![p[0] + 1.0];
        let opts = LmOptions { lower: vec![Some(0.0)], scale: vec![1.0], max_iterations: 50 };
        let out = minimize(f, &[2.0], &opts);
        assert_eq!(out.params[0], 0.0);
        assert!(out.at_bound[0]);
    }
}
