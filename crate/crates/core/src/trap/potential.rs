use std::sync::Arc;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};

use super::{ElectrodeBasis, IonSpecies, TrapError};
use crate::num::{lit, to_f64, Mat3, Real, Vec3};

/// RF drive: rails described by one electrode of a basis, driven at
/// `amplitude` volts and angular `frequency`.
#[derive(Clone)]
pub struct RfDrive<T: Real> {
    /// rad/s
    pub frequency: T,
    /// V
    pub amplitude: T,
    pub field: Arc<dyn ElectrodeBasis<T>>,
    pub electrode: usize,
}

impl<T: Real> RfDrive<T> {
    pub fn validate(&self) -> Result<(), TrapError> {
        if !(self.frequency > T::zero()) {
            return Err(TrapError::Validation("RF drive frequency must be positive".into()));
        }
        if self.electrode >= self.field.electrode_count() {
            return Err(TrapError::Validation("RF electrode index out of range".into()));
        }
        Ok(())
    }

    pub fn with_amplitude(&self, amplitude: T) -> Self {
        Self { amplitude, ..self.clone() }
    }
}

/// Potential energy with its gradient and Hessian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySample<T> {
    /// J
    pub energy: T,
    /// J/m
    pub gradient: Vec3<T>,
    /// J/m²
    pub hessian: Mat3<T>,
}

impl<T: Real> EnergySample<T> {
    fn zero() -> Self {
        Self { energy: T::zero(), gradient: Vec3::zeros(), hessian: Mat3::zeros() }
    }
}

/// Time-averaged pseudopotential `q² |E_rf|² / (4 m Ω²)`.
///
/// The Hessian includes the third-derivative term when the RF basis provides
/// third derivatives; otherwise it is the `2κ H²` form, exact at the RF null.
pub fn pseudopotential<T: Real>(
    rf: &RfDrive<T>,
    species: &IonSpecies<T>,
    point: &Vec3<T>,
) -> Result<EnergySample<T>, TrapError> {
    rf.validate()?;
    let s = rf.field.sample(rf.electrode, point)?;
    let q = species.charge;
    let kappa = q * q * rf.amplitude * rf.amplitude / (lit::<T>(4.0) * species.mass * rf.frequency * rf.frequency);
    let two_kappa = kappa + kappa;
    let g = s.gradient;
    let h = s.hessian;
    let mut hess = h * h;
    if let Some(third) = s.third {
        for (j, t) in third.iter().enumerate() {
            hess += t * g[j];
        }
    }
    Ok(EnergySample { energy: kappa * g.norm_squared(), gradient: (h * g) * two_kappa, hessian: hess * two_kappa })
}

/// Total potential energy of the ion: DC electrodes plus RF pseudopotential.
pub fn total_potential<T: Real>(
    basis: &dyn ElectrodeBasis<T>,
    voltages: &[T],
    rf: Option<&RfDrive<T>>,
    species: &IonSpecies<T>,
    point: &Vec3<T>,
) -> Result<EnergySample<T>, TrapError> {
    check_voltages(basis, voltages)?;
    let mut out = EnergySample::zero();
    for (e, &v) in voltages.iter().enumerate() {
        if v == T::zero() {
            // still validates the point
            basis.potential(e, point)?;
            continue;
        }
        let s = basis.sample(e, point)?;
        let w = species.charge * v;
        out.energy += s.value * w;
        out.gradient += s.gradient * w;
        out.hessian += s.hessian * w;
    }
    if let Some(rf) = rf {
        let p = pseudopotential(rf, species, point)?;
        out.energy += p.energy;
        out.gradient += p.gradient;
        out.hessian += p.hessian;
    }
    Ok(out)
}

fn check_voltages<T: Real>(basis: &dyn ElectrodeBasis<T>, voltages: &[T]) -> Result<(), TrapError> {
    if voltages.len() != basis.electrode_count() {
        return Err(TrapError::Dimension { expected: basis.electrode_count(), got: voltages.len() });
    }
    Ok(())
}

fn total_energy<T: Real>(
    basis: &dyn ElectrodeBasis<T>,
    voltages: &[T],
    rf: Option<&RfDrive<T>>,
    species: &IonSpecies<T>,
    point: &Vec3<T>,
) -> Result<T, TrapError> {
    let mut e = T::zero();
    for (i, &v) in voltages.iter().enumerate() {
        if v != T::zero() {
            e += basis.potential(i, point)? * v * species.charge;
        }
    }
    if let Some(rf) = rf {
        e += pseudopotential(rf, species, point)?.energy;
    }
    Ok(e)
}

/// Normal modes of a potential energy Hessian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecularModes<T: Real> {
    /// rad/s, ordered by ascending eigenvalue. For a negative eigenvalue this
    /// is `sqrt(|λ|/m)` and the matching `imaginary` flag is set.
    pub frequencies: [T; 3],
    /// Orthonormal principal axes as columns, in the same order.
    pub axes: Mat3<T>,
    pub imaginary: [bool; 3],
}

impl<T: Real> SecularModes<T> {
    /// Index of the mode whose axis is most parallel to `axis`.
    pub fn mode_along(&self, axis: &Vec3<T>) -> usize {
        let a = axis.normalize();
        (0..3)
            .max_by(|&i, &j| {
                let ci = self.axes.column(i).dot(&a).abs();
                let cj = self.axes.column(j).dot(&a).abs();
                ci.partial_cmp(&cj).unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0)
    }

    /// Frequency of the mode most parallel to `axis`.
    pub fn frequency_along(&self, axis: &Vec3<T>) -> T {
        self.frequencies[self.mode_along(axis)]
    }
}

/// Secular frequencies `ω = sqrt(λ/m)` of a potential energy Hessian (J/m²).
pub fn secular_frequency<T: Real>(hessian: &Mat3<T>, species: &IonSpecies<T>) -> Result<SecularModes<T>, TrapError> {
    let scale = hessian.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    let tol = lit::<T>(1e-12) * scale;
    for i in 0..3 {
        for j in 0..i {
            if (hessian[(i, j)] - hessian[(j, i)]).abs() > tol {
                return Err(TrapError::Validation("hessian is not symmetric".into()));
            }
        }
    }
    let eig = SymmetricEigen::new(*hessian);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut frequencies = [T::zero(); 3];
    let mut imaginary = [false; 3];
    let mut axes = Mat3::zeros();
    for (k, &i) in order.iter().enumerate() {
        let lambda = eig.eigenvalues[i];
        frequencies[k] = (lambda.abs() / species.mass).sqrt();
        imaginary[k] = lambda < T::zero();
        axes.set_column(k, &eig.eigenvectors.column(i));
    }
    Ok(SecularModes { frequencies, axes, imaginary })
}

/// Frequency from the energy curvature along `axis` alone, `sqrt(aᵀHa / m)`.
///
/// Equals the normal-mode frequency when `axis` is a principal axis; when the
/// potential is tilted it is what the axial curvature constraint controls.
pub fn axial_frequency<T: Real>(hessian: &Mat3<T>, species: &IonSpecies<T>, axis: &Vec3<T>) -> T {
    let a = axis.normalize();
    let k = (hessian * a).dot(&a);
    (k.max(T::zero()) / species.mass).sqrt()
}

/// Lowest radial secular frequency: the smaller of the two modes other than
/// the one along `axial`. Imaginary radial modes count as zero.
pub fn radial_frequency<T: Real>(modes: &SecularModes<T>, axial: &Vec3<T>) -> T {
    let ax = modes.mode_along(axial);
    (0..3)
        .filter(|&i| i != ax)
        .map(|i| if modes.imaginary[i] { T::zero() } else { modes.frequencies[i] })
        .fold(T::max_value().unwrap_or_else(|| lit(1e300)), |m, f| m.min(f))
}

const DEPTH_SCAN_STEPS: usize = 2000;

/// Barrier height along `escape_axis` from a local minimum at `site`.
///
/// Walks from `site` along the axis on a uniform grid until the energy first
/// turns downward, refines that maximum by golden-section search, and returns
/// its height above the site energy. The site must be a minimum along the
/// axis: zero slope (to within a millionth of the scan length in implied
/// displacement) and positive curvature.
pub fn trap_depth<T: Real>(
    basis: &dyn ElectrodeBasis<T>,
    voltages: &[T],
    rf: Option<&RfDrive<T>>,
    species: &IonSpecies<T>,
    site: &Vec3<T>,
    escape_axis: &Vec3<T>,
) -> Result<T, TrapError> {
    check_voltages(basis, voltages)?;
    if escape_axis.norm() == T::zero() {
        return Err(TrapError::Validation("escape axis must be nonzero".into()));
    }
    let dir = escape_axis.normalize();
    let mut domain = basis.domain();
    if let Some(rf) = rf {
        let d = rf.field.domain();
        domain.min = domain.min.sup(&d.min);
        domain.max = domain.max.inf(&d.max);
    }
    if !domain.contains(site) {
        return Err(super::basis::unknown_point(site));
    }
    let length = domain.exit_distance(site, &dir);
    if !(length > T::zero()) {
        return Err(TrapError::Validation("site lies on the domain boundary along the escape axis".into()));
    }

    let here = total_potential(basis, voltages, rf, species, site)?;
    let slope = here.gradient.dot(&dir);
    let curvature = (here.hessian * dir).dot(&dir);
    if !(curvature > T::zero()) {
        return Err(TrapError::Validation(format!(
            "site is not a minimum along the escape axis (curvature {:.3e} J/m²)",
            to_f64(curvature)
        )));
    }
    if (slope / curvature).abs() > length * lit(1e-6) {
        return Err(TrapError::Validation(format!(
            "site is not a stationary point along the escape axis (slope {:.3e} J/m)",
            to_f64(slope)
        )));
    }

    let e0 = here.energy;
    let energy = |t: T| total_energy(basis, voltages, rf, species, &(site + dir * t));
    let step = length / lit(DEPTH_SCAN_STEPS as f64);
    let mut prev = e0;
    for k in 1..=DEPTH_SCAN_STEPS {
        let t = step * lit(k as f64);
        let e = energy(t)?;
        if e < prev && k > 1 {
            let lo = step * lit((k - 2) as f64);
            let peak = golden_max(&energy, lo, t)?;
            return Ok(peak.max(prev) - e0);
        }
        prev = e;
    }
    Err(TrapError::DomainExhausted { boundary_depth: to_f64(prev - e0) })
}

fn golden_max<T: Real>(f: &dyn Fn(T) -> Result<T, TrapError>, mut a: T, mut b: T) -> Result<T, TrapError> {
    let r: T = lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - (b - a) * r;
    let mut d = a + (b - a) * r;
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..200 {
        if (b - a).abs() <= lit::<T>(1e-12) * (a.abs() + b.abs()) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * r;
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * r;
            fd = f(d)?;
        }
    }
    Ok(fc.max(fd))
}

/// Finds the RF field null near `start` by Newton iteration in the plane
/// transverse to the trap axis (`y`, `z`), keeping `x` fixed.
pub fn find_rf_null<T: Real>(rf: &RfDrive<T>, start: &Vec3<T>) -> Result<Vec3<T>, TrapError> {
    rf.validate()?;
    let mut p = *start;
    for _ in 0..50 {
        let s = rf.field.sample(rf.electrode, &p)?;
        let g = Vector2::new(s.gradient[1], s.gradient[2]);
        let h = Matrix2::new(s.hessian[(1, 1)], s.hessian[(1, 2)], s.hessian[(2, 1)], s.hessian[(2, 2)]);
        let Some(inv) = h.try_inverse() else {
            return Err(TrapError::Validation("singular RF curvature while locating the null".into()));
        };
        let step = inv * g;
        p[1] -= step[0];
        p[2] -= step[1];
        if step.norm() <= lit::<T>(1e-15) + lit::<T>(1e-13) * p.norm() {
            return Ok(p);
        }
    }
    Err(TrapError::Validation("RF null search did not converge".into()))
}

/// Scans the RF amplitude until the lowest radial secular frequency of the
/// pseudopotential at `site` equals `target`.
///
/// Brackets by doubling from 1 V, then bisects to 1e-12 relative.
pub fn calibrate_rf_amplitude<T: Real>(
    rf: &RfDrive<T>,
    species: &IonSpecies<T>,
    site: &Vec3<T>,
    axial: &Vec3<T>,
    target: T,
) -> Result<T, TrapError> {
    if !(target > T::zero()) {
        return Err(TrapError::Validation("target radial frequency must be positive".into()));
    }
    let radial = |v: T| -> Result<T, TrapError> {
        let p = pseudopotential(&rf.with_amplitude(v), species, site)?;
        Ok(radial_frequency(&secular_frequency(&p.hessian, species)?, axial))
    };
    let mut lo = T::zero();
    let mut hi = T::one();
    let mut n = 0;
    while radial(hi)? < target {
        lo = hi;
        hi *= lit(2.0);
        n += 1;
        if n > 60 {
            return Err(TrapError::Validation("RF amplitude scan did not bracket the target".into()));
        }
    }
    for _ in 0..200 {
        let mid = (lo + hi) * lit(0.5);
        if radial(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= hi * lit(1e-12) {
            break;
        }
    }
    Ok((lo + hi) * lit(0.5))
}
