use std::f64::consts::TAU;
use std::sync::Arc;

use super::basis::unknown_point;
use super::{Domain, ElectrodeBasis, IonSpecies, PotentialSample, RfDrive, TrapError};
use crate::jet::Jet;
use crate::num::{lit, units, Real, Vec3};

/// Rectangular electrode `[x0, x1] × [y0, y1]` in the plane `z = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RectElectrode<T> {
    pub x: (T, T),
    pub y: (T, T),
}

impl<T: Real> RectElectrode<T> {
    pub fn new(x0: T, x1: T, y0: T, y1: T) -> Self {
        Self { x: (x0, x1), y: (y0, y1) }
    }

    /// Potential per volt above an infinite grounded plane with no gaps.
    ///
    /// Sum of four corner solid-angle terms `atan(u v / (z r))`; each term is
    /// harmonic so the result satisfies Laplace's equation for `z > 0`.
    fn jet(&self, p: &[Jet<T>; 3]) -> Jet<T> {
        let [x, y, z] = *p;
        let corner = |xc: T, yc: T| {
            let u = Jet::constant(xc) - x;
            let v = Jet::constant(yc) - y;
            let r = (u * u + v * v + z * z).sqrt();
            ((u * v) / (z * r)).atan()
        };
        let s = corner(self.x.1, self.y.1) - corner(self.x.0, self.y.1) - corner(self.x.1, self.y.0)
            + corner(self.x.0, self.y.0);
        s.scale(T::one() / lit(TAU))
    }

    fn value(&self, p: &Vec3<T>) -> T {
        let (x, y, z) = (p[0], p[1], p[2]);
        let corner = |xc: T, yc: T| {
            let u = xc - x;
            let v = yc - y;
            ((u * v) / (z * (u * u + v * v + z * z).sqrt())).atan()
        };
        (corner(self.x.1, self.y.1) - corner(self.x.0, self.y.1) - corner(self.x.1, self.y.0)
            + corner(self.x.0, self.y.0))
            / lit(TAU)
    }
}

/// Analytic surface-electrode basis: each named electrode is a union of
/// rectangles in the trap plane, everything else grounded.
#[derive(Clone, Debug)]
pub struct SurfaceTrap<T> {
    names: Vec<String>,
    electrodes: Vec<Vec<RectElectrode<T>>>,
    domain: Domain<T>,
}

impl<T: Real> SurfaceTrap<T> {
    pub fn new(
        names: Vec<String>,
        electrodes: Vec<Vec<RectElectrode<T>>>,
        domain: Domain<T>,
    ) -> Result<Self, TrapError> {
        if names.len() != electrodes.len() {
            return Err(TrapError::Validation("one name per electrode required".into()));
        }
        if !(domain.min[2] > T::zero()) {
            return Err(TrapError::Validation("domain must lie strictly above the electrode plane".into()));
        }
        Ok(Self { names, electrodes, domain })
    }

    pub fn rectangles(&self, electrode: usize) -> &[RectElectrode<T>] {
        &self.electrodes[electrode]
    }

    fn check(&self, electrode: usize, p: &Vec3<T>) -> Result<(), TrapError> {
        if electrode >= self.electrodes.len() {
            return Err(TrapError::Validation(format!("no electrode with index {electrode}")));
        }
        if !self.domain.contains(p) {
            return Err(unknown_point(p));
        }
        Ok(())
    }
}

impl<T: Real> ElectrodeBasis<T> for SurfaceTrap<T> {
    fn electrode_names(&self) -> &[String] {
        &self.names
    }

    fn domain(&self) -> Domain<T> {
        self.domain
    }

    fn sample(&self, electrode: usize, point: &Vec3<T>) -> Result<PotentialSample<T>, TrapError> {
        self.check(electrode, point)?;
        let p = Jet::point(point);
        let j = self.electrodes[electrode].iter().fold(Jet::constant(T::zero()), |acc, r| acc + r.jet(&p));
        Ok(PotentialSample { value: j.value(), gradient: j.gradient(), hessian: j.hessian(), third: Some(j.third()) })
    }

    fn potential(&self, electrode: usize, point: &Vec3<T>) -> Result<T, TrapError> {
        self.check(electrode, point)?;
        Ok(self.electrodes[electrode].iter().fold(T::zero(), |acc, r| acc + r.value(point)))
    }
}

/// Bundled five-wire demonstration trap.
///
/// Cross-section along `y`: outer DC row, RF rail, centre DC row, RF rail,
/// outer DC row. The trap axis is `x`. All three DC rows are split into
/// 60 µm segments spanning `x ∈ [-400, 800]` µm, with long end electrodes
/// closing the centre row. With a 70 µm centre row and 36.4 µm rails the RF
/// null sits 50 µm above the surface.
#[derive(Clone)]
pub struct DemoTrap<T: Real> {
    pub dc: Arc<SurfaceTrap<T>>,
    pub rf: Arc<SurfaceTrap<T>>,
}

impl<T: Real> DemoTrap<T> {
    pub const CENTER_WIDTH_UM: f64 = 70.0;
    pub const RAIL_WIDTH_UM: f64 = 36.4;
    pub const SEGMENT_PITCH_UM: f64 = 60.0;
    pub const SEGMENTS: usize = 20;
    pub const FIRST_SEGMENT_UM: f64 = -400.0;
    pub const OUTER_WIDTH_UM: f64 = 1000.0;
    pub const HALF_LENGTH_UM: f64 = 5000.0;
    /// Nominal ion height; the exact RF null comes from [`super::find_rf_null`].
    pub const ION_HEIGHT_UM: f64 = 50.0;
    /// RF drive frequency used by the bundled calibration, MHz.
    pub const RF_DRIVE_MHZ: f64 = 30.0;

    pub fn new() -> Self {
        let um = |x: f64| lit::<T>(x * units::MICRON);
        let c = Self::CENTER_WIDTH_UM / 2.0;
        let rail = c + Self::RAIL_WIDTH_UM;
        let outer = rail + Self::OUTER_WIDTH_UM;
        let half = Self::HALF_LENGTH_UM;
        let domain = Domain {
            min: Vec3::new(um(-2000.0), um(-1000.0), um(5.0)),
            max: Vec3::new(um(2000.0), um(1000.0), um(1000.0)),
        };

        let mut names = Vec::new();
        let mut rects = Vec::new();
        for i in 0..Self::SEGMENTS {
            let x0 = Self::FIRST_SEGMENT_UM + i as f64 * Self::SEGMENT_PITCH_UM;
            let x1 = x0 + Self::SEGMENT_PITCH_UM;
            for (row, y0, y1) in [("N", rail, outer), ("C", -c, c), ("S", -outer, -rail)] {
                names.push(format!("DC_{row}{i:02}"));
                rects.push(vec![RectElectrode::new(um(x0), um(x1), um(y0), um(y1))]);
            }
        }
        let end = Self::FIRST_SEGMENT_UM + Self::SEGMENTS as f64 * Self::SEGMENT_PITCH_UM;
        names.push("DC_C_LEFT".into());
        rects.push(vec![RectElectrode::new(um(-half), um(Self::FIRST_SEGMENT_UM), um(-c), um(c))]);
        names.push("DC_C_RIGHT".into());
        rects.push(vec![RectElectrode::new(um(end), um(half), um(-c), um(c))]);
        let dc = SurfaceTrap { names, electrodes: rects, domain };

        let rf = SurfaceTrap {
            names: vec!["RF".into()],
            electrodes: vec![vec![
                RectElectrode::new(um(-half), um(half), um(c), um(rail)),
                RectElectrode::new(um(-half), um(half), um(-rail), um(-c)),
            ]],
            domain,
        };
        Self { dc: Arc::new(dc), rf: Arc::new(rf) }
    }

    /// RF drive on the rails with the given amplitude (V) at the bundled
    /// drive frequency.
    pub fn rf_drive(&self, amplitude: T) -> RfDrive<T> {
        RfDrive {
            frequency: lit(units::mhz_to_rad_s(Self::RF_DRIVE_MHZ)),
            amplitude,
            field: self.rf.clone(),
            electrode: 0,
        }
    }

    /// RF drive calibrated so the radial secular frequency at the RF null
    /// above `x` equals `radial_omega`; also returns the null position.
    pub fn calibrated_rf(
        &self,
        species: &IonSpecies<T>,
        x: T,
        radial_omega: T,
    ) -> Result<(RfDrive<T>, Vec3<T>), TrapError> {
        let template = self.rf_drive(T::one());
        let start = Vec3::new(x, T::zero(), lit(Self::ION_HEIGHT_UM * units::MICRON));
        let null = super::find_rf_null(&template, &start)?;
        let amplitude = super::calibrate_rf_amplitude(&template, species, &null, &Vec3::x(), radial_omega)?;
        Ok((self.rf_drive(amplitude), null))
    }
}

impl<T: Real> Default for DemoTrap<T> {
    fn default() -> Self {
        Self::new()
    }
}
