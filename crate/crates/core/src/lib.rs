//! Conditioned path sampling for SDEs.
//!
//! Paths of an Euler–Maruyama discretized SDE are parametrized by their
//! standardized Gaussian noise `z`. Conditioning on a scalar observable
//! `F(z) = z*` restricts `z` to a level set; [`sampler`] runs a Metropolis
//! random walk on that manifold with exact adjoint gradients from
//! [`dynamics`].

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod models;
pub mod observables;
pub mod pathcore;
pub mod run;
pub mod sampler;

pub use error::{Error, Result};
