//! Poisson process factorization of somatic mutation catalogs.

pub mod channels;
pub mod copies;
pub mod counts;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod genome;
pub mod gibbs;
pub mod hungarian;
pub mod io;
pub mod map;
pub mod model;
pub mod par;
pub mod postprocess;
pub mod rng;
pub mod simulate;

pub use error::{PpfError, Result};

#[cfg(test)]
mod testutil;
