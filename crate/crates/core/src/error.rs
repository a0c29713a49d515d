//! Crate-wide error type.

use std::fmt;

/// Errors reported by the landscape catalog, noise models, engine and
/// verification oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Catalog name not recognized by `make_landscape`.
    UnknownLandscape(String),
    /// A landscape parameter is outside its documented range.
    InvalidParameter { name: &'static str, message: String },
    /// Logits passed to the cross-entropy loss contain NaN/Inf.
    NonFiniteLogits,
    /// Parameter vector contains NaN/Inf or has the wrong dimension.
    BadParamVector(String),
    /// Requested batch size exceeds the sample count of the toy problem.
    BatchTooLarge { batch: usize, samples: usize },
    /// The landscape does not expose per-sample structure.
    NoPerSampleStructure,
    /// The model lacks the declared last-layer-linear decomposition.
    NoLinearLayer,
    /// Matrix is not symmetric within the documented tolerance.
    AsymmetricMatrix { deviation: f64 },
    /// Learning rate outside the admissible interval for the rate bound.
    InadmissibleRate { eta: f64, upper: f64 },
    /// A rate fit was requested on a window containing nonpositive values.
    NonPositiveSeries { index: usize },
    /// A fit window is too short.
    WindowTooShort { len: usize, min: usize },
    /// The candidate interpolant is not on the zero-loss set.
    NotOnManifold { loss: f64, threshold: f64 },
    /// Trajectory was recorded without the requested instrumentation.
    MissingNoiseLog,
    /// Rank preconditions of the eigenvalue lemma are violated; the test is
    /// vacuous rather than failed.
    VacuousLemmaInstance(String),
    /// Every sample was excluded by the requested floor/ceiling.
    AllSamplesExcluded,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnknownLandscape(name) => write!(f, "unknown catalog landscape `{name}`"),
            Error::InvalidParameter { name, message } => {
                write!(f, "invalid parameter `{name}`: {message}")
            }
            Error::NonFiniteLogits => write!(f, "logits must be finite"),
            Error::BadParamVector(msg) => write!(f, "bad parameter vector: {msg}"),
            Error::BatchTooLarge { batch, samples } => {
                write!(f, "batch size {batch} exceeds sample count {samples}")
            }
            Error::NoPerSampleStructure => {
                write!(f, "landscape exposes no per-sample loss structure")
            }
            Error::NoLinearLayer => {
                write!(f, "model has no declared final linear layer")
            }
            Error::AsymmetricMatrix { deviation } => {
                write!(f, "matrix asymmetric (max deviation {deviation:e})")
            }
            Error::InadmissibleRate { eta, upper } => {
                write!(f, "learning rate {eta} outside admissible interval (0, {upper})")
            }
            Error::NonPositiveSeries { index } => {
                write!(f, "nonpositive value at window index {index}; shrink the fit window")
            }
            Error::WindowTooShort { len, min } => {
                write!(f, "fit window of length {len} shorter than required {min}")
            }
            Error::NotOnManifold { loss, threshold } => {
                write!(f, "loss {loss:e} above interpolation threshold {threshold:e}")
            }
            Error::MissingNoiseLog => {
                write!(f, "trajectory was not recorded with instrumentation on")
            }
            Error::VacuousLemmaInstance(msg) => write!(f, "vacuous lemma instance: {msg}"),
            Error::AllSamplesExcluded => write!(f, "all samples excluded by the floor"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
