//! Numerical laboratory for the weakly asymmetric simple exclusion process on
//! a periodic ring: exact Walsh-basis operator algebra, kinetic Monte Carlo
//! with exact path integrals, symmetric-resolvent quadratic forms, mollified
//! fluctuation fields, and harnesses that check resolvent-type variance bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod error;
pub mod harness;
pub mod io;
pub mod kmc;
pub mod lattice;
pub mod mollifier;
pub mod quad;
pub mod resolvent;
pub mod semigroup;
pub mod stats;
pub mod walsh;

pub use error::{Error, Result};
pub use kmc::{DynamicsParams, TimeProfile};
pub use lattice::{LatticeState, ObservableSpec, WalshIndex};
pub use walsh::WalshVector;
