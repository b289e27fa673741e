//! Simulator for a heralded controlled-phase gate between two atoms trapped
//! in separate leaky optical cavities.
//!
//! The gate works in two steps: a simultaneous drive entangles each atom with
//! its own cavity field, then the photons leaking from both cavities are
//! interfered on a small linear-optics network and a two-fold detector
//! coincidence heralds the gate. This crate provides
//!
//! - [`hilbert`]: the joint atom ⊗ cavity-mode state space and sparse
//!   operator algebra,
//! - [`dynamics`]: the effective driven dynamics, the non-Hermitian no-jump
//!   evolution (closed form and numeric), and a Lindblad master-equation
//!   oracle,
//! - [`optics`]: the PBS/QWP detection network, its 4×4 mode transform, and
//!   the detector jump operators,
//! - [`protocol`]: the end-to-end gate — input preparation, coincidence
//!   detection, pattern-dependent correction, truth-table verification, and
//!   success-probability accounting,
//! - [`trajectories`]: Monte Carlo quantum-jump unraveling with reproducible
//!   seeding,
//! - [`verify`]: the acceptance suite run by `gate-sim verify` and the
//!   `acceptance` test target.

pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod linalg;
pub mod optics;
pub mod protocol;
pub mod trajectories;
pub mod verify;

pub use error::{Error, Result};
