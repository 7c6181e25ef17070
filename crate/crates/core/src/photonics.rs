//! Integrated-optics delivery: beam intensity at the ion, MMI splitting,
//! insertion-loss budgets, evanescent cross-coupling and mesh transmission.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{lit, Real, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum PhotonicsError {
    #[error("invalid input: {0}")]
    Validation(String),
}

/// Focused Gaussian beam leaving an output grating coupler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBeam<T> {
    /// m
    pub focus: Vec3<T>,
    /// Unit propagation direction.
    pub direction: Vec3<T>,
    /// m
    pub wavelength: T,
    /// Intensity full width at half maximum at the focus, m.
    pub fwhm: T,
    /// W
    pub power: T,
}

impl<T: Real> GaussianBeam<T> {
    pub fn new(focus: Vec3<T>, direction: Vec3<T>, wavelength: T, fwhm: T, power: T) -> Result<Self, PhotonicsError> {
        if !(fwhm > T::zero()) {
            return Err(PhotonicsError::Validation("beam FWHM must be positive".into()));
        }
        if !(wavelength > T::zero()) {
            return Err(PhotonicsError::Validation("wavelength must be positive".into()));
        }
        if power < T::zero() {
            return Err(PhotonicsError::Validation("beam power must be nonnegative".into()));
        }
        let n = direction.norm();
        if !(n > T::zero()) {
            return Err(PhotonicsError::Validation("beam direction must be nonzero".into()));
        }
        Ok(Self { focus, direction: direction / n, wavelength, fwhm, power })
    }

    /// Direction leaving the chip at 45° to the surface, tilted in the `y-z`
    /// plane so a cut along the trap axis `x` is transverse to the beam.
    pub fn grating_direction() -> Vec3<T> {
        let s: T = lit(std::f64::consts::FRAC_1_SQRT_2);
        Vec3::new(T::zero(), s, s)
    }

    /// 1/e² intensity radius at the focus, `FWHM / sqrt(2 ln 2)`.
    pub fn waist(&self) -> T {
        self.fwhm / (lit::<T>(2.0) * lit::<T>(2.0).ln()).sqrt()
    }

    /// Standard deviation of the transverse intensity profile.
    pub fn sigma(&self) -> T {
        self.fwhm / (lit::<T>(8.0) * lit::<T>(2.0).ln()).sqrt()
    }

    pub fn rayleigh_range(&self) -> T {
        let w0 = self.waist();
        T::pi() * w0 * w0 / self.wavelength
    }

    pub fn peak_intensity(&self) -> T {
        let w0 = self.waist();
        lit::<T>(2.0) * self.power / (T::pi() * w0 * w0)
    }

    /// W/m² at `point`.
    pub fn intensity(&self, point: &Vec3<T>) -> T {
        let r = point - self.focus;
        let z = r.dot(&self.direction);
        let rho2 = (r.norm_squared() - z * z).max(T::zero());
        let zr = self.rayleigh_range();
        let w0 = self.waist();
        let w2 = w0 * w0 * (T::one() + (z / zr) * (z / zr));
        lit::<T>(2.0) * self.power / (T::pi() * w2) * (-lit::<T>(2.0) * rho2 / w2).exp()
    }
}

/// Beam delivered to a site: a focused Gaussian, or an intentionally
/// unfocused beam that is flat over the trapping region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BeamModel<T> {
    Gaussian(GaussianBeam<T>),
    Uniform { intensity: T },
}

/// Intensity (W/m²) of `beam` at `point`.
pub fn beam_intensity<T: Real>(beam: &BeamModel<T>, point: &Vec3<T>) -> T {
    match beam {
        BeamModel::Gaussian(g) => g.intensity(point),
        BeamModel::Uniform { intensity } => *intensity,
    }
}

/// Multimode-interference splitter.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitterSpec<T> {
    /// Fraction of input power routed to each output; sums to at most 1.
    pub ratios: Vec<T>,
    /// Excess loss applied to every output, dB.
    pub insertion_loss_db: T,
}

impl<T: Real> Default for SplitterSpec<T> {
    fn default() -> Self {
        let half: T = lit(0.5);
        Self { ratios: vec![half, half], insertion_loss_db: T::zero() }
    }
}

impl<T: Real> SplitterSpec<T> {
    pub fn fanout(&self) -> usize {
        self.ratios.len()
    }

    /// Equal 1×N splitter.
    pub fn uniform(fanout: usize, insertion_loss_db: T) -> Self {
        let r = T::one() / lit(fanout as f64);
        Self { ratios: vec![r; fanout], insertion_loss_db }
    }

    /// 1×2 splitter whose output powers differ by `(1 + δ)²`, i.e. whose
    /// outputs drive Rabi frequencies differing by the fraction `δ`.
    pub fn for_rabi_imbalance(delta: T, insertion_loss_db: T) -> Self {
        let r = power_ratio_for_rabi_imbalance(delta);
        Self { ratios: vec![r / (T::one() + r), T::one() / (T::one() + r)], insertion_loss_db }
    }

    pub fn validate(&self) -> Result<(), PhotonicsError> {
        if self.ratios.is_empty() {
            return Err(PhotonicsError::Validation("splitter needs at least one output".into()));
        }
        if self.ratios.iter().any(|r| !(*r > T::zero())) {
            return Err(PhotonicsError::Validation("split ratios must be positive".into()));
        }
        let sum = self.ratios.iter().fold(T::zero(), |a, r| a + *r);
        if sum > T::one() + lit(1e-12) {
            return Err(PhotonicsError::Validation("split ratios sum above 1".into()));
        }
        if self.insertion_loss_db < T::zero() {
            return Err(PhotonicsError::Validation("insertion loss must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Power ratio between two beams whose Rabi frequencies differ by the
/// fraction `δ` (intensity ∝ Ω²).
pub fn power_ratio_for_rabi_imbalance<T: Real>(delta: T) -> T {
    (T::one() + delta) * (T::one() + delta)
}

pub fn db_to_fraction<T: Real>(db: T) -> T {
    lit::<T>(10.0).powf(-db / lit(10.0))
}

/// Output powers (W) of a splitter fed with `input` (W).
pub fn split<T: Real>(input: T, spec: &SplitterSpec<T>) -> Result<Vec<T>, PhotonicsError> {
    spec.validate()?;
    if input < T::zero() {
        return Err(PhotonicsError::Validation("input power must be nonnegative".into()));
    }
    let t = db_to_fraction(spec.insertion_loss_db);
    Ok(spec.ratios.iter().map(|r| input * *r * t).collect())
}

/// One entry of a loss chain: a lumped loss or a per-length loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum LossElement {
    Distributed { name: String, loss_db_per_cm: f64, length_cm: f64 },
    Lumped { name: String, loss_db: f64 },
}

impl LossElement {
    pub fn lumped(name: impl Into<String>, loss_db: f64) -> Self {
        Self::Lumped { name: name.into(), loss_db }
    }

    pub fn distributed(name: impl Into<String>, loss_db_per_cm: f64, length_cm: f64) -> Self {
        Self::Distributed { name: name.into(), loss_db_per_cm, length_cm }
    }

    /// Loss known in total but not assigned to a specific component.
    pub fn unattributed(loss_db: f64) -> Self {
        Self::lumped("unattributed", loss_db)
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Lumped { name, .. } | Self::Distributed { name, .. } => name,
        }
    }

    pub fn loss_db(&self) -> f64 {
        match self {
            Self::Lumped { loss_db, .. } => *loss_db,
            Self::Distributed { loss_db_per_cm, length_cm, .. } => loss_db_per_cm * length_cm,
        }
    }
}

/// Ordered optical path from launch to ion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossChain {
    pub elements: Vec<LossElement>,
}

impl LossChain {
    pub fn new(elements: Vec<LossElement>) -> Self {
        Self { elements }
    }

    pub fn then(mut self, other: &LossChain) -> Self {
        self.elements.extend(other.elements.iter().cloned());
        self
    }

    /// Chain of the bench measurement: fibre combiner, input grating,
    /// 5 mm of waveguide at 0.9 dB/cm (435 nm), output grating, and one MMI
    /// counted as a 3 dB split. Gratings at the 6.5 dB midpoint of 6–7 dB.
    pub fn bench_435nm() -> Self {
        Self::new(vec![
            LossElement::lumped("combiner", 3.0),
            LossElement::lumped("input grating", 6.5),
            LossElement::distributed("propagation", 0.9, 0.5),
            LossElement::lumped("output grating", 6.5),
            LossElement::lumped("splitter", 3.0),
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossBudget {
    pub total_db: f64,
    pub transmission: f64,
    /// (element name, dB) in chain order.
    pub table: Vec<(String, f64)>,
}

impl LossBudget {
    /// Power delivered from `input` (W) through the chain.
    pub fn deliver(&self, input: f64) -> f64 {
        input * self.transmission
    }
}

pub fn loss_budget(chain: &LossChain) -> Result<LossBudget, PhotonicsError> {
    if chain.elements.is_empty() {
        return Err(PhotonicsError::Validation("loss chain is empty".into()));
    }
    let mut table = Vec::with_capacity(chain.elements.len());
    for e in &chain.elements {
        if let LossElement::Distributed { loss_db_per_cm, length_cm, .. } = e {
            if *loss_db_per_cm < 0.0 || *length_cm < 0.0 {
                return Err(PhotonicsError::Validation(format!("negative loss rate or length in '{}'", e.name())));
            }
        }
        let db = e.loss_db();
        if !(db >= 0.0) {
            return Err(PhotonicsError::Validation(format!("negative loss in '{}'", e.name())));
        }
        table.push((e.name().to_string(), db));
    }
    let total_db: f64 = table.iter().map(|(_, db)| db).sum();
    Ok(LossBudget { total_db, transmission: db_to_fraction(total_db), table })
}

/// Fraction of power transferred between two parallel waveguides after
/// length `length`, from the beat between symmetric and antisymmetric
/// supermodes with effective-index difference `delta_n_eff`:
/// `sin²(π Δn L / λ)`.
pub fn evanescent_coupling<T: Real>(delta_n_eff: T, length: T, wavelength: T) -> T {
    let phase = T::pi() * delta_n_eff * length / wavelength;
    let s = phase.sin();
    (s * s).max(T::zero()).min(T::one())
}

/// Open-area fraction of a square mesh with square holes of side `hole`
/// separated by traces of width `trace`. Requires `hole > 0`, `trace >= 0`.
pub fn mesh_transmission<T: Real>(hole: T, trace: T) -> T {
    let f = hole / (hole + trace);
    f * f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_milliwatt_splits() {
        let out = split(1e-3, &SplitterSpec::default()).unwrap();
        assert_eq!(out, vec![0.5e-3, 0.5e-3]);
        let lossy = SplitterSpec { ratios: vec![0.5, 0.5], insertion_loss_db: 0.2 };
        let out = split(1e-3, &lossy).unwrap();
        assert!((out[0] - 0.5e-3 * 10f64.powf(-0.02)).abs() < 1e-18);
        assert!((out[0] / 1e-3 - 0.4775).abs() < 5e-5);
    }

    #[test]
    fn splitter_validation() {
        let bad = SplitterSpec { ratios: vec![0.7, 0.4], insertion_loss_db: 0.0 };
        assert!(split(1.0, &bad).is_err());
        let bad = SplitterSpec { ratios: vec![0.5, 0.0], insertion_loss_db: 0.0 };
        assert!(split(1.0, &bad).is_err());
        assert!(split(-1.0, &SplitterSpec::<f64>::default()).is_err());
        assert_eq!(SplitterSpec::<f64>::uniform(4, 0.0).fanout(), 4);
    }

    #[test]
    fn negative_and_empty_chains_rejected() {
        assert!(loss_budget(&LossChain::default()).is_err());
        assert!(loss_budget(&LossChain::new(vec![LossElement::lumped("x", -1.0)])).is_err());
        assert!(loss_budget(&LossChain::new(vec![LossElement::distributed("x", 1.0, -1.0)])).is_err());
    }

    #[test]
    fn chain_json_shapes() {
        let chain: LossChain = serde_json::from_str(
            r#"[{"name": "a", "loss_db": 1.5}, {"name": "wg", "loss_db_per_cm": 1.35, "length_cm": 0.5}]"#,
        )
        .unwrap();
        assert_eq!(chain.elements[1], LossElement::distributed("wg", 1.35, 0.5));
        assert!(serde_json::from_str::<LossChain>(r#"[{"name": "a", "loss": 1}]"#).is_err());
    }

    #[test]
    fn mesh_cases() {
        assert_eq!(mesh_transmission(3e-6, 1e-6), 0.5625);
        assert_eq!(mesh_transmission(3e-6, 0.0), 1.0);
        assert_eq!(mesh_transmission(2.0, 2.0), 0.25);
    }

    #[test]
    fn evanescent_trivial_cases() {
        assert_eq!(evanescent_coupling(0.0, 1.7e-3, 435e-9), 0.0);
        assert_eq!(evanescent_coupling(0.01, 0.0, 435e-9), 0.0);
    }
}
