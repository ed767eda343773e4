//! Numerics for antiferromagnetic two-spin systems on trees and small
//! graphs: exact field-gadget evaluation, uniqueness-threshold solvers,
//! certified construction of gadget pairs with equal effective fields and
//! separated magnetization gaps, phase gadgets, and Max-Cut reduction
//! graphs, all cross-checked against a brute-force Gibbs oracle.

pub mod checks;
pub mod construct;
pub mod error;
pub mod fixpoint;
pub mod gadget;
pub mod graph;
pub mod oracle;
pub mod params;
pub mod reduction;
pub mod scalar;

pub use error::{Error, Result};
