//! Sum-form uncertainty relations on qubits and qutrits, end to end: exact
//! bound evaluation, an amplitude-level simulator for the wave-plate /
//! beam-displacer hardware that measures them, a compiler from projective
//! measurements to plate angles, and a finite-statistics counting emulator.
//!
//! The crate is organized around five layers:
//!
//! * [`qmath`] - dense complex linear algebra for dimensions 2-4.
//! * [`relations`] - the product-form (Heisenberg-Robertson) bound, both
//!   sum-form bounds, optimal/random orthogonal states and the rank-one
//!   witness operators whose expectations equal the bound terms.
//! * [`optics`] - dual-rail polarization encoding, Jones matrices for
//!   half- and quarter-wave plates, beam-displacer routing and circuit
//!   simulation.
//! * [`compiler`] - turns a projective measurement into plate angles for
//!   the staged interferometer, verifies compiled circuits by simulation
//!   and regenerates the published angle tables.
//! * [`experiment`] - multinomial counting statistics, estimators with
//!   standard errors, the twelve-point sweep and dataset export.

pub mod cli;
pub mod compiler;
pub mod experiment;
pub mod optics;
pub mod qmath;
pub mod relations;
