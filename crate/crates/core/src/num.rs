//! Scalar abstraction and physical constants.

use nalgebra::{Matrix3, RealField, Vector3};

/// Floating point scalar the physics code is generic over.
///
/// Implemented for `f32` and `f64`. All methods come from [`RealField`];
/// `num_traits::Float` is intentionally not a supertrait so method calls
/// like `x.sqrt()` stay unambiguous.
pub trait Real: RealField + Copy + Send + Sync + 'static {}

impl<T: RealField + Copy + Send + Sync + 'static> Real for T {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts `T` back into `f64`.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    nalgebra::try_convert(x).unwrap_or(f64::NAN)
}

pub type Vec3<T> = Vector3<T>;
pub type Mat3<T> = Matrix3<T>;

/// SI constants (CODATA 2018 exact or recommended values).
pub mod consts {
    /// Elementary charge, C.
    pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
    /// Reduced Planck constant, J s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Unified atomic mass unit, kg.
    pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
}

/// Unit conversions used at the I/O boundary. Internally everything is SI.
pub mod units {
    use std::f64::consts::TAU;

    pub const MICRON: f64 = 1e-6;
    pub const NANOMETER: f64 = 1e-9;
    pub const MILLIMETER: f64 = 1e-3;
    pub const CENTIMETER: f64 = 1e-2;
    pub const MICROSECOND: f64 = 1e-6;
    pub const MILLISECOND: f64 = 1e-3;
    pub const MILLIWATT: f64 = 1e-3;
    pub const MILLI_EV: f64 = 1e-3 * super::consts::ELEMENTARY_CHARGE;

    /// Cyclic frequency in MHz to angular frequency in rad/s.
    pub fn mhz_to_rad_s(f_mhz: f64) -> f64 {
        TAU * f_mhz * 1e6
    }

    pub fn khz_to_rad_s(f_khz: f64) -> f64 {
        TAU * f_khz * 1e3
    }

    pub fn rad_s_to_mhz(w: f64) -> f64 {
        w / TAU / 1e6
    }

    pub fn rad_s_to_khz(w: f64) -> f64 {
        w / TAU / 1e3
    }

    pub fn joule_to_mev(e: f64) -> f64 {
        e / MILLI_EV
    }

    pub fn um3(p: [f64; 3]) -> [f64; 3] {
        [p[0] * MICRON, p[1] * MICRON, p[2] * MICRON]
    }
}
