//! Least-squares engine and the three model fits built on it.

pub mod fcs;
pub mod lifetime;
pub mod lm;
pub mod power;

pub use fcs::{fit_fcs, FcsFit, FcsFixed};
pub use lifetime::{fit_lifetime, simulate_decay, DecayHistogram, LifetimeBranch, LifetimeFit};
pub use lm::{nlls, FitOptions, FitReport, FitResult, Model};
pub use power::{
    fit_power_series, PowerFitMode, PowerFitOptions, PowerRow, PowerSeriesData, PowerSeriesFit, TripletRateForm,
};
