//! Photokinetics of a three-level fluorophore measured by fluorescence
//! correlation spectroscopy.
//!
//! The crate covers the full chain: a Monte-Carlo photon source
//! ([`sim`]), multi-tau correlation ([`correlator`]), least-squares fitting of
//! correlation curves, saturation series and lifetime histograms ([`fit`]),
//! and inversion of the fitted coefficients into photokinetic rates
//! ([`solver`]). [`pipeline`] wires them together behind the `nanofcs` CLI.

pub mod correlator;
pub mod error;
pub mod fit;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod reference;
pub mod report;
pub mod rng;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    ExcitationContext, IntensityDimension, IntensityUnit, RateSet, SaturationCoefficients,
    ThreeLevelState,
};
pub use solver::{Measured, MeasuredInputs, SolvedRates};
