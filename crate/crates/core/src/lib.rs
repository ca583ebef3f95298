//! Simulation of a single domain-wall kink in a long-range transverse-field
//! Ising chain of trapped ions.

// `!(x > 0.0)` is used throughout so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod experiments;
pub mod kink;
pub mod spin;
pub mod trap;
pub mod units;

pub use coupling::{CouplingError, CouplingMatrix, KinkPotential, PowerLawFit};
pub use experiments::{run_scenario, ExperimentError, ResultTable, ScenarioConfig, ScenarioKind};
pub use kink::{EffectiveHamiltonian, KinkError, KinkState};
pub use spin::{FullHamiltonian, MeasurementRecord, NoiseModel, SpinError, SpinState};
pub use trap::{BeamProfile, IonPositions, ModeSpectrum, TrapConfig, TrapError};
