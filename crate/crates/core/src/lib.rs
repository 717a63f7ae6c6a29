//! Analysis of a heat equation under two-threshold relay control, in its
//! truncated spectral form.
//!
//! * [`spectral`]: the modal system (eigenvalues, sensor and actuator coefficients)
//! * [`hysteresis`]: the relay
//! * [`dynamics`]: exact flow, switching detection, simulation
//! * [`periodic`]: closed-form symmetric periodic solutions
//! * [`bifurcation`]: grazing and fold sets, bifurcation diagrams
//! * [`stability`]: linearized half-period map and its eigenvalues
//! * [`poincare`]: numerical Poincaré maps, finite-difference Jacobians, rates
//! * [`acceptance`]: the end-to-end verification suite

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod bifurcation;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod hysteresis;
pub mod linalg;
pub mod periodic;
pub mod poincare;
pub mod spectral;
pub mod stability;

pub use dynamics::{
    advance_modes, decompose, mean_rate, mean_temperature, next_switching, simulate, Decomposition,
    ModeVector, SwitchEvent, Trajectory,
};
pub use error::{Error, Result};
pub use hysteresis::{relay_cross, relay_init, RelayOutput, RelayState, Threshold};
pub use periodic::{enumerate_periodic, PeriodicSolution};
pub use spectral::{build_rod_model, validate, SpectralSystem, SystemDescriptor, ValidationReport};
pub use stability::{StabilityClass, StabilityReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
