//! Pseudospectral laboratory for the stochastic 2D-3C vortex-noise model on the
//! periodic square and its deterministic eddy-viscosity limit.

pub mod error;
pub mod asymptotics;
pub mod covariance;
pub mod green;
pub mod harness;
pub mod limit;
pub mod noise;
pub mod observables;
pub mod profile;
pub mod quadrature;
pub mod scalar;
pub mod spde;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Grid = spectral::FourierGrid<f64>;
pub type Field = spectral::ScalarField<f64>;
pub type Vector = spectral::VectorField2<f64>;
pub type Grid32 = spectral::FourierGrid<f32>;
pub type Field32 = spectral::ScalarField<f32>;
pub type Vector32 = spectral::VectorField2<f32>;
