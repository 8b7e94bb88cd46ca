//! Spatio-temporal nearest-neighbour Gaussian process GLMMs.

pub mod cli;
pub mod covariance;
pub mod data;
pub mod error;
pub mod family;
pub mod graph;
pub mod io;
pub mod knn;
pub mod laplace;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod params;
pub mod predict;
pub mod process;
pub mod residuals;
mod serde_nan;
pub mod simulate;

pub use error::{Error, Result};
