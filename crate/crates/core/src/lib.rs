//! Two-step composite likelihood inference for spatial extremes under the Smith max-stable model.
//!
//! Marginal GEV parameters are estimated from daily records with a point-process independence
//! likelihood; dependence parameters follow from a pairwise likelihood of block maxima with the
//! margins plugged in. Variances come from the Godambe sandwich.

pub mod benchmark;
pub mod config;
pub mod decluster;
pub mod error;
pub mod estimator;
pub mod gev;
pub mod godambe;
pub mod io;
pub mod likelihood;
pub mod optim;
pub mod pipeline;
pub mod risk;
pub mod rng;
pub mod simulate;
pub mod smith;
pub mod special;

pub use error::{Error, Result};
pub use gev::{GevParams, Link, MarginalDesign, Site, SiteCatalog};
pub use smith::SmithDispersion;
