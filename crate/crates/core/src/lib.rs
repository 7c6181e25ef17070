//! Desk-scale models for multi-site integrated optical addressing of trapped
//! ions.
//!
//! * [`trap`]: electrode potentials, RF pseudopotential, secular frequencies,
//!   trap depth, and a bundled analytic five-wire surface trap.
//! * [`solver`]: multi-well DC voltage solutions and shuttling waveforms.
//! * [`photonics`]: Gaussian beam intensity, splitters, loss budgets,
//!   evanescent coupling and mesh transmission.
//! * [`dynamics`]: Lamb-Dicke parameters and thermal carrier Rabi flopping.
//! * [`detection`]: Poisson photon-count discrimination.
//! * [`analysis`]: fitting pipelines (Rabi, Gaussian profiles, heating rate).
//! * [`scenario`]: declarative runner tying the modules together.
//!
//! The physics modules are generic over the scalar type ([`num::Real`]);
//! the aliases below fix it to `f64`.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the tensor formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod detection;
pub mod dynamics;
pub mod jet;
pub mod json_locate;
pub mod num;
pub mod photonics;
pub mod rng;
pub mod scenario;
pub mod solver;
pub mod trap;

pub type IonSpecies = trap::IonSpecies<f64>;
pub type RfDrive = trap::RfDrive<f64>;
pub type SecularModes = trap::SecularModes<f64>;
pub type EnergySample = trap::EnergySample<f64>;
pub type DemoTrap = trap::DemoTrap<f64>;
pub type WellSpec = solver::WellSpec<f64>;
pub type ConstraintSystem = solver::ConstraintSystem<f64>;
pub type VoltageSolution = solver::VoltageSolution<f64>;
pub type GaussianBeam = photonics::GaussianBeam<f64>;
pub type SplitterSpec = photonics::SplitterSpec<f64>;
pub type MotionalMode = dynamics::MotionalMode<f64>;
pub type DriveSpec = dynamics::DriveSpec<f64>;

/// Toolkit version recorded in run reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
