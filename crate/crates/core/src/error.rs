use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical quantity is outside the domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// `alpha_T * I_s >= 1`: the coefficients cannot come from a three-level system.
    #[error("saturation-inconsistency: alpha_T * I_s = {product} must be < 1")]
    SaturationInconsistency { product: f64 },

    /// A simulation or pipeline configuration breaks a stated bound.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or schema-violating input, with the offending field path.
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("rank-deficient Jacobian: parameter direction `{direction}` is unidentifiable")]
    RankDeficient { direction: String },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("input uncertainties inconsistent with model: {rejected} of {total} draws rejected")]
    Uncertainty { rejected: usize, total: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 2 config/schema, 3 physics invariant, 4 fit non-convergence, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. } | Error::Json(_) => 2,
            Error::Domain(_)
            | Error::SaturationInconsistency { .. }
            | Error::Config(_)
            | Error::Uncertainty { .. }
            | Error::Data(_) => 3,
            Error::RankDeficient { .. } | Error::Fit(_) => 4,
            Error::Io(_) | Error::Format(_) => 5,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
