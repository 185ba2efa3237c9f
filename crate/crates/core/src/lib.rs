//! Simulation of chirped two-photon excitation in a chain of three-level
//! Rydberg atoms: collective Hamiltonian, Schrödinger propagation, GHZ and W
//! fidelities, bare-state spectra, an effective two-level reduction and
//! parameter sweeps.

pub mod analysis;
pub mod config;
pub mod error;
pub mod format;
pub mod model;
pub mod observe;
pub mod propagate;
pub mod svg;
pub mod sweep;
pub mod validate;

pub use error::{Error, Result};
pub use model::{
    AngularConvention, BasisState, CollectiveBasis, LatticeSpec, Model, ModelSettings, PulseSpec, RabiCoupling,
    SystemSpec,
};
pub use propagate::{IntegratorConfig, StateVector, Trajectory};
