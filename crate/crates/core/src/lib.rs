//! Discrete machinery of generalized matrix-weighted Besov- and
//! Triebel–Lizorkin-type sequence spaces, truncated to finite dyadic
//! lattices.
//!
//! The crate is organized around the objects that appear in the
//! continuous theory:
//!
//! * [`lattice`] — dyadic cubes `Q_{j,k}`, finite enumeration windows,
//!   and the product/slice geometry used by trace operators;
//! * [`linalg`] — complex Hermitian matrices, a cyclic Jacobi
//!   eigensolver, and matrix fractional powers;
//! * [`matweight`] — matrix weights, the `A_{p,∞}` characteristic,
//!   lower/upper dimension estimation, and reducing operators;
//! * [`growth`] — growth functions on the dyadic lattice and empirical
//!   membership certification;
//! * [`seqspace`] — finitely supported coefficient sequences and the
//!   weighted sequence-space norms;
//! * [`almostdiag`] — almost-diagonal envelopes, certification,
//!   truncated application, and the boundedness thresholds;
//! * [`wavelets`] — Daubechies filters, cascade samples, tensor
//!   systems, and the band-limited transform pair;
//! * [`molecules`] — molecule/atom condition checks and smooth atom
//!   construction;
//! * [`operators`] — coefficient-level trace/extension operators,
//!   pseudo-differential application, and Calderón–Zygmund kernel
//!   experiments.
//!
//! All norms and certificates are computed on a finite
//! [`lattice::LatticeWindow`]; the library reports achieved constants
//! and ratios instead of asserting the (non-computable) infinite-lattice
//! suprema.

pub mod almostdiag;
pub mod error;
pub mod exec;
pub mod growth;
pub mod lattice;
pub mod linalg;
pub mod matweight;
pub mod molecules;
pub mod operators;
pub mod quad;
pub mod seqspace;
pub mod wavelets;

pub use error::{Error, Result};
