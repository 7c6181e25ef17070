use std::f64::consts::PI;

use iontrap_core::analysis::{
    crosstalk_intensity_ratio, crosstalk_with_uncertainty, ensemble_sensitivity_scaling, fit_gaussian_profile,
    fit_rabi, heating_rate, rabi_imbalance, weighted_line_fit, AnalysisError, EnsembleConfig, Estimate, RabiFitOptions,
    RabiTrace,
};
use iontrap_core::dynamics::{simulate_trace, time_grid, DriveSpec, MotionalMode};
use iontrap_core::num::units::{khz_to_rad_s, mhz_to_rad_s};
use iontrap_core::num::Vec3;
use iontrap_core::photonics::GaussianBeam;
use iontrap_core::rng;
use proptest::prelude::*;
use rand_distr::{Distribution, Normal};

const OMEGA0_KHZ: f64 = 3.846;

fn mode(eta: f64) -> MotionalMode<f64> {
    MotionalMode::new(mhz_to_rad_s(1.02), eta, 0.0).unwrap()
}

fn trace(omega0: f64, nbar: f64, a: f64, shots: Option<(u64, u64)>, t_max: f64, points: usize) -> RabiTrace {
    let d = DriveSpec::new(omega0, a, 435e-9, PI / 4.0).unwrap();
    let m = [MotionalMode { nbar, ..mode(0.055) }];
    RabiTrace::from_points(&simulate_trace(&time_grid(t_max, points), &d, &m, shots).unwrap()).unwrap()
}

#[test]
fn noiseless_ground_state_recovery() {
    let w = khz_to_rad_s(OMEGA0_KHZ);
    let tr = trace(w, 0.0, 1.0, None, 600e-6, 61);
    let fit = fit_rabi(&tr, &RabiFitOptions::new(vec![mode(0.055)])).unwrap();
    assert!((fit.value("omega0") / w - 1.0).abs() < 1e-6);
    assert!((fit.value("a") - 1.0).abs() < 1e-6);
    assert!(fit.value("nbar").abs() < 1e-6);
}

#[test]
fn noiseless_thermal_recovery() {
    let w = khz_to_rad_s(OMEGA0_KHZ);
    let tr = trace(w, 30.0, 0.93, None, 1.0e-3, 81);
    let fit = fit_rabi(&tr, &RabiFitOptions::new(vec![mode(0.055)])).unwrap();
    assert!((fit.value("omega0") / w - 1.0).abs() < 1e-6);
    assert!((fit.value("nbar") / 30.0 - 1.0).abs() < 1e-6);
    assert!((fit.value("a") / 0.93 - 1.0).abs() < 1e-6);
    assert!(fit.converged);
}

#[test]
fn noisy_thermal_recovery_over_seeds() {
    let w = khz_to_rad_s(OMEGA0_KHZ);
    let opts = RabiFitOptions::new(vec![mode(0.055)]);
    let trials = 40;
    let mut good = 0;
    for seed in 0..trials {
        let tr = trace(w, 30.0, 1.0, Some((200, rng::child_seed(seed, "rabi"))), 1.0e-3, 51);
        let fit = fit_rabi(&tr, &opts).unwrap();
        let ok_n = (fit.value("nbar") / 30.0 - 1.0).abs() <= 0.15;
        let ok_w = (fit.value("omega0") / w - 1.0).abs() <= 0.01;
        if ok_n && ok_w {
            good += 1;
        }
    }
    assert!(good as f64 >= 0.95 * trials as f64, "{good}/{trials}");
}

#[test]
fn omega_coverage_is_calibrated() {
    let w = khz_to_rad_s(OMEGA0_KHZ);
    let opts = RabiFitOptions::new(vec![mode(0.055)]);
    let trials = 200;
    let mut inside = 0;
    for seed in 0..trials {
        let tr = trace(w, 30.0, 1.0, Some((600, rng::child_seed(seed, "coverage"))), 1.0e-3, 51);
        let fit = fit_rabi(&tr, &opts).unwrap();
        if (fit.value("omega0") - w).abs() <= fit.sigma("omega0") {
            inside += 1;
        }
    }
    let frac = inside as f64 / trials as f64;
    assert!((0.60..=0.75).contains(&frac), "{frac}");
}

#[test]
fn split_sites_show_configured_imbalance() {
    let w = khz_to_rad_s(OMEGA0_KHZ);
    let opts = RabiFitOptions::new(vec![mode(0.055)]);
    let a = fit_rabi(&trace(w * 1.064, 30.0, 1.0, Some((600, 5)), 1.0e-3, 51), &opts).unwrap();
    let b = fit_rabi(&trace(w, 30.0, 1.0, Some((600, 6)), 1.0e-3, 51), &opts).unwrap();
    let d = rabi_imbalance(
        Estimate { value: a.value("omega0"), sigma: a.sigma("omega0") },
        Estimate { value: b.value("omega0"), sigma: b.sigma("omega0") },
    );
    assert!((d.value - 0.064).abs() <= 3.0 * d.sigma, "{d:?}");
    assert!(d.sigma < 0.02);
}

#[test]
fn negative_nbar_is_clamped_and_flagged() {
    // Contrast that grows with time: thermal dephasing can only shrink it,
    // so the unconstrained optimum has n̄ < 0.
    let w = khz_to_rad_s(OMEGA0_KHZ);
    let times = time_grid(1.0e-3, 51);
    let pops: Vec<f64> = times.iter().map(|t| 0.4 * (1.0 - (1.0 + 200.0 * t) * (w * t).cos())).collect();
    let tr = RabiTrace::new(times, pops, None, None).unwrap();
    let fit = fit_rabi(&tr, &RabiFitOptions::new(vec![mode(0.055)])).unwrap();
    assert_eq!(fit.value("nbar"), 0.0);
    assert!(fit.has_flag("nbar_clamped"));
}

#[test]
fn floating_eta_recovers_noiseless_parameters() {
    let w = khz_to_rad_s(OMEGA0_KHZ);
    // η and n̄ separate only once the recoil phase Ω₀η²t is of order one,
    // so the trace runs well past the early contrast decay.
    let tr = trace(w, 30.0, 1.0, None, 15e-3, 600);
    let mut opts = RabiFitOptions::new(vec![mode(0.05)]);
    opts.float_eta = true;
    opts.max_iterations = 2000;
    let fit = fit_rabi(&tr, &opts).unwrap();
    assert!((fit.value("eta") / 0.055 - 1.0).abs() < 1e-4, "{}", fit.value("eta"));
    assert!((fit.value("omega0") / w - 1.0).abs() < 1e-6);
}

#[test]
fn rabi_fit_input_checks() {
    let w = khz_to_rad_s(OMEGA0_KHZ);
    let short = trace(w, 0.0, 1.0, None, 100e-6, 9);
    assert!(matches!(fit_rabi(&short, &RabiFitOptions::new(vec![mode(0.055)])), Err(AnalysisError::Validation(_))));
    let brief = trace(w, 0.0, 1.0, None, 60e-6, 20);
    assert!(matches!(fit_rabi(&brief, &RabiFitOptions::new(vec![mode(0.055)])), Err(AnalysisError::Validation(_))));
    assert!(RabiTrace::new(vec![0.0, 0.0], vec![0.0, 0.1], None, None).is_err());
    assert!(RabiTrace::new(vec![0.0, 1.0], vec![0.0], None, None).is_err());
}

#[test]
fn zero_error_points_get_floor() {
    let tr = RabiTrace::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 1.0], Some(vec![0.0, 0.02, 0.0]), Some(vec![200; 3]))
        .unwrap();
    let s = tr.sigmas().unwrap();
    assert_eq!(s, vec![1.0 / 202.0, 0.02, 1.0 / 202.0]);
}

fn beam_cut(fwhm: f64) -> (Vec<f64>, Vec<f64>) {
    let b = GaussianBeam::new(Vec3::new(0.3e-6, 0.0, 50e-6), GaussianBeam::grating_direction(), 435e-9, fwhm, 1e-6)
        .unwrap();
    let xs: Vec<f64> = (0..41).map(|i| (i as f64 - 20.0) * 0.4e-6).collect();
    let ys = xs.iter().map(|x| b.intensity(&Vec3::new(*x, 0.0, 50e-6)) / b.peak_intensity()).collect();
    (xs, ys)
}

#[test]
fn beam_profile_fwhm_recovered() {
    let (xs, ys) = beam_cut(5.26e-6);
    let fit = fit_gaussian_profile(&xs, &ys, None).unwrap();
    assert!((fit.value("fwhm") / 5.26e-6 - 1.0).abs() < 1e-6);
    assert!((fit.value("center") - 0.3e-6).abs() < 1e-12);
    assert!((fit.value("amplitude") - 1.0).abs() < 1e-6);
    assert!(fit.value("offset").abs() < 1e-6);
}

fn noisy_profile(seed: u64, rel: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (xs, ys) = beam_cut(5.26e-6);
    let normal = Normal::new(0.0, rel).unwrap();
    let noisy: Vec<f64> =
        ys.iter().enumerate().map(|(i, y)| y * (1.0 + normal.sample(&mut rng::stream(seed, i as u64)))).collect();
    let errors = ys.iter().map(|y| rel * y).collect();
    (xs, noisy, errors)
}

#[test]
fn noisy_profile_within_three_percent() {
    for seed in 0..20 {
        let (xs, ys, es) = noisy_profile(seed, 0.05);
        let fit = fit_gaussian_profile(&xs, &ys, Some(&es)).unwrap();
        assert!((fit.value("fwhm") / 5.26e-6 - 1.0).abs() < 0.03, "seed {seed}: {}", fit.value("fwhm"));
    }
}

#[test]
fn profile_fwhm_coverage() {
    let trials = 300;
    let mut inside = 0;
    for seed in 0..trials {
        let (xs, ys, es) = noisy_profile(1000 + seed, 0.05);
        let fit = fit_gaussian_profile(&xs, &ys, Some(&es)).unwrap();
        if (fit.value("fwhm") - 5.26e-6).abs() <= fit.sigma("fwhm") {
            inside += 1;
        }
    }
    let frac = inside as f64 / trials as f64;
    assert!((0.60..=0.75).contains(&frac), "{frac}");
}

#[test]
fn flat_profile_is_rejected() {
    let xs: Vec<f64> = (0..11).map(|i| i as f64).collect();
    let ys = vec![3.0; 11];
    assert!(matches!(fit_gaussian_profile(&xs, &ys, None), Err(AnalysisError::Degenerate(_))));
    let noisy: Vec<f64> = (0..11).map(|i| 3.0 + 0.01 * ((i * 7) % 3) as f64).collect();
    let r = fit_gaussian_profile(&xs, &noisy, Some(&[0.05; 11]));
    assert!(matches!(r, Err(AnalysisError::Degenerate(_))));
    assert!(fit_gaussian_profile(&xs[..4], &ys[..4], None).is_err());
}

#[test]
fn wide_profile_is_flagged() {
    let xs: Vec<f64> = (0..11).map(|i| i as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (-(x - 5.0f64).powi(2) / (2.0 * 40.0f64.powi(2))).exp()).collect();
    match fit_gaussian_profile(&xs, &ys, None) {
        Ok(fit) => assert!(fit.has_flag("sigma_unbounded")),
        Err(e) => assert!(matches!(e, AnalysisError::NonConvergence { .. } | AnalysisError::Degenerate(_))),
    }
}

#[test]
fn heating_rate_cases() {
    let waits = [0.0, 2e-3, 4e-3, 6e-3];
    let flat = heating_rate(&waits, &[7.0; 4], None).unwrap();
    assert!(flat.rate_per_ms.abs() < 1e-12);
    let line: Vec<f64> = waits.iter().map(|t| 5.0 + 1.25 * t * 1e3).collect();
    let exact = heating_rate(&waits, &line, None).unwrap();
    assert!((exact.rate_per_ms - 1.25).abs() < 1e-12);
    assert!((exact.intercept - 5.0).abs() < 1e-12);
    assert!(matches!(heating_rate(&waits[..2], &line[..2], None), Err(AnalysisError::Validation(_))));
}

#[test]
fn noisy_heating_rate_recovery() {
    let waits: Vec<f64> = (0..6).map(|i| i as f64 * 2e-3).collect();
    let sig = vec![0.8; waits.len()];
    let normal = Normal::new(0.0, 0.8).unwrap();
    let mut good = 0;
    for seed in 0..50 {
        let n: Vec<f64> = waits
            .iter()
            .enumerate()
            .map(|(i, t)| 5.0 + 1.25 * t * 1e3 + normal.sample(&mut rng::stream(seed, i as u64)))
            .collect();
        let h = heating_rate(&waits, &n, Some(&sig)).unwrap();
        if (h.rate_per_ms / 1.25 - 1.0).abs() <= 0.1 {
            good += 1;
        }
        assert!(h.rate_sigma > 0.0);
    }
    assert!(good >= 35, "{good}");
}

#[test]
fn two_point_line_is_exact() {
    let f = weighted_line_fit(&[1.0, 3.0], &[2.0, 8.0], None).unwrap();
    assert_eq!(f.slope, 3.0);
    assert_eq!(f.intercept, -1.0);
    assert_eq!(f.chi2, 0.0);
    assert!(weighted_line_fit(&[1.0], &[2.0], None).is_err());
    assert!(weighted_line_fit(&[1.0, 1.0], &[2.0, 3.0], None).is_err());
}

#[test]
fn crosstalk_ratio_cases() {
    assert!((crosstalk_intensity_ratio(0.05, 1.0) - 0.0025).abs() < 1e-15);
    assert!((crosstalk_intensity_ratio(0.05, 1.0) - 0.0026).abs() <= 0.0001 + 1e-15);
    assert_eq!(crosstalk_intensity_ratio(0.0, 3.0), 0.0);
    assert_eq!(crosstalk_intensity_ratio(3.0, 3.0), 1.0);
    let e = crosstalk_with_uncertainty(Estimate { value: 0.05, sigma: 0.001 }, Estimate { value: 1.0, sigma: 0.0 });
    assert!((e.sigma - 0.0001).abs() < 1e-12);
}

#[test]
fn ensemble_scaling_cases() {
    let s = |n, m, a| ensemble_sensitivity_scaling(&EnsembleConfig::new(n, m, a).unwrap());
    assert_eq!(s(1, 1, 1.0), 1.0);
    assert!((s(4, 2, 1.0) - 0.25).abs() < 1e-15);
    assert!((s(8, 1, 2.0) - 0.25).abs() < 1e-15);
    assert!(EnsembleConfig::new(0, 1, 1.0).is_err());
    assert!(EnsembleConfig::new(1, 1, 0.0).is_err());
}

proptest! {
    #[test]
    fn crosstalk_inverts_sqrt(r in 0.0..=1.0f64) {
        prop_assert!((crosstalk_intensity_ratio(r.sqrt(), 1.0) - r).abs() < 1e-15);
    }

    #[test]
    fn slope_invariant_under_offset(c in -50.0..50.0f64, ys in prop::collection::vec(0.0..40.0f64, 4)) {
        let waits = [0.0, 1e-3, 3e-3, 4e-3];
        let a = heating_rate(&waits, &ys, None).unwrap();
        let shifted: Vec<f64> = ys.iter().map(|y| y + c).collect();
        let b = heating_rate(&waits, &shifted, None).unwrap();
        prop_assert!((a.rate_per_ms - b.rate_per_ms).abs() < 1e-9);
    }
}
