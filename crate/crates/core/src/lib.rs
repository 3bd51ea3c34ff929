//! Online linear regression on panel data: simplex-constrained forecasters,
//! regret accounting against ex-post oracles, panel generators, and
//! design-based inference for a single treated unit.

pub mod error;
pub mod adversary;
pub mod cli;
pub mod inference;
pub mod panel;
pub mod protocol;
pub mod simplex;
pub mod strategies;

pub use error::{Error, Result};
pub use panel::{Panel, TransformKind, TransformedPanel};
