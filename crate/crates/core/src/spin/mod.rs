//! Full 2^N transverse-field Ising simulation.
//!
//! States are stored in the x basis. Bit `i` of a basis index holds ion `i`
//! (0-based, so ion 1 is the least significant bit); a clear bit is `|+⟩`
//! and a set bit is `|−⟩`. In this basis σ_x is diagonal, σ_z flips a bit
//! and σ_y flips a bit with phase: σ_y|+⟩ = −i|−⟩, σ_y|−⟩ = i|+⟩.

use thiserror::Error;

pub mod hamiltonian;
pub mod krylov;
pub mod measure;
pub mod noise;
pub mod probe;
pub mod state;

pub use hamiltonian::{build_full_hamiltonian, FullHamiltonian, DEFAULT_ION_CAP};
pub use krylov::{evolve_full, KrylovOptions, KrylovStats};
pub use measure::{
    count_kinks, post_select_single_kink, sample_x_basis, single_kink_projection, MeasurementRecord,
};
pub use noise::{prepare_kink_state, NoiseModel};
pub use probe::{probe_spectroscopy, ProbeScan};
pub use state::{Qubit, SpinState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("{ions} ions exceed the cap of {cap}")]
    TooManyIons { ions: usize, cap: usize },
    #[error("need at least {min} ions, got {ions}")]
    TooFewIons { ions: usize, min: usize },
    #[error("site {site} outside 1..={max}")]
    SiteOutOfRange { site: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("Krylov step size underflow at t = {time:.6e} s (step {step:.3e} s, error estimate {estimate:.3e}, tolerance {tol:.1e})")]
    StepUnderflow {
        time: f64,
        step: f64,
        estimate: f64,
        tol: f64,
    },
    #[error("state has no weight in the single-kink subspace")]
    NoSingleKinkWeight,
    #[error("no shot among {shots} has exactly one kink")]
    NothingRetained { shots: usize },
    #[error("measurement record: {0}")]
    Record(String),
}

pub type Result<T> = std::result::Result<T, SpinError>;
