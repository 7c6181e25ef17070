//! Electrode potentials, RF pseudopotential, secular frequencies and trap depth.

mod basis;
mod potential;
mod surface;

use thiserror::Error;

use crate::num::{consts, lit, Real};

pub use basis::{BasisFile, Domain, ElectrodeBasis, PotentialSample, SampledBasis};
pub use potential::{
    axial_frequency, calibrate_rf_amplitude, find_rf_null, pseudopotential, radial_frequency, secular_frequency,
    total_potential, trap_depth, EnergySample, RfDrive, SecularModes,
};
pub use surface::{DemoTrap, RectElectrode, SurfaceTrap};

#[derive(Debug, Error)]
pub enum TrapError {
    #[error("point ({x:.6e}, {y:.6e}, {z:.6e}) m is outside the basis query set")]
    UnknownPoint { x: f64, y: f64, z: f64 },
    #[error("expected {expected} voltages, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(
        "no turning point along the escape axis before the domain boundary (boundary depth {boundary_depth:.6e} J)"
    )]
    DomainExhausted { boundary_depth: f64 },
    #[error("basis file line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ion mass and charge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IonSpecies<T> {
    /// kg
    pub mass: T,
    /// C
    pub charge: T,
}

impl<T: Real> IonSpecies<T> {
    pub fn new(mass: T, charge: T) -> Result<Self, TrapError> {
        if !(mass > T::zero()) {
            return Err(TrapError::Validation("ion mass must be positive".into()));
        }
        if charge == T::zero() {
            return Err(TrapError::Validation("ion charge must be nonzero".into()));
        }
        Ok(Self { mass, charge })
    }

    /// Singly ionised ytterbium-171, mass taken as 171 u.
    pub fn yb171() -> Self {
        Self { mass: lit(171.0 * consts::ATOMIC_MASS_UNIT), charge: lit(consts::ELEMENTARY_CHARGE) }
    }

    /// Potential curvature (V/m²) giving angular frequency `omega`.
    pub fn curvature_for_frequency(&self, omega: T) -> T {
        self.mass * omega * omega / self.charge
    }

    /// Angular frequency produced by a potential curvature in V/m².
    pub fn frequency_for_curvature(&self, curvature: T) -> T {
        (self.charge * curvature / self.mass).sqrt()
    }
}
