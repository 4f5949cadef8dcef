//! Numerical laboratory for the quenched thermodynamic formalism of random
//! open piecewise-linear interval maps: transfer-operator cocycles with
//! holes, escape rates, extremal indices, quenched Gumbel laws, hitting-time
//! statistics, conditionally invariant measures and Bowen's formula.
//!
//! Two engines back every computation. The *interval engine* ([`maps`])
//! manipulates finite unions of intervals and step functions exactly; the
//! *grid engine* ([`transfer`]) is a sparse Ulam discretization of the
//! weighted transfer operator, exact on aligned Markov grids.

pub mod config;
pub mod driving;
pub mod error;
pub mod evt;
pub mod maps;
pub mod open;
pub mod perturb;
pub mod pressure;
pub mod raccim;
pub mod selftest;
pub mod transfer;
pub mod validate;

pub use error::{Error, Result};
