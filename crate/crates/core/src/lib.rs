//! Optimal entanglement witnesses for two photonic qubits.
//!
//! Local filters erase the marginal polarization of each photon until the
//! state reaches its SLOCC normal form. There the best local-unitary witness
//! is built from the extrema of the two-photon correlations, and the
//! concurrence of the source follows from the filter scale `s0`.
//!
//! Modules, bottom-up:
//! - [`qstate`]: density matrices, Stokes tensors, named source states.
//! - [`slocc`]: filters, composite arm operators, waveplates.
//! - [`distill`]: the iterative erasure loop.
//! - [`witness`]: extrema, witness values, materialized operators, GHZ branch.
//! - [`photonsim`]: the counting bench and its measurement protocols.
//! - [`oracle`]: Wootters concurrence and the tomography baseline.
//! - [`pipeline`]: the end-to-end experiment.

pub mod distill;
pub mod error;
pub mod oracle;
pub mod photonsim;
pub mod pipeline;
pub mod qstate;
pub mod slocc;
pub mod witness;

pub use error::{Error, Result};
pub use qstate::{DensityMatrix, StateSpec};
