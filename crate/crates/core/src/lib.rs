//! Power-instability certificates for linear discrete-time systems
//! `x(n+1) = A(n) x(n)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`systems`] builds coefficient sequences `A(n)` (built-in fixtures,
//!   seeded random systems, JSON documents) in a log-magnitude representation.
//! * [`transition`] evaluates transition operators `A(m)...A(n+1)`, their
//!   minimum gains and triangular growth tables.
//! * [`certify`] fits `(N, r, s)` certificates for the uniform, nonuniform and
//!   strong instability concepts and classifies systems over nested windows.
//! * [`przyluski`] evaluates the weighted summation criterion, fits its
//!   constants `(D, d, c)` and converts between criterion and certificate.
//! * [`report`] drives the analyses from a configuration and writes the
//!   JSON/CSV reports used by the `powinst` binary.

pub mod certify;
pub mod error;
pub mod numerics;
pub mod przyluski;
pub mod report;
pub mod systems;
pub mod transition;

pub use error::{Error, Result};
