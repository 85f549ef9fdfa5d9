use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input outside the domain of an operation.
    Domain(&'static str),
    /// A non-finite value appeared while integrating.
    NumericFault { tick: u64, scale: usize },
    /// Ratio estimate with a vanishing probe component.
    DegenerateProbe { component: usize, value: f64 },
    /// Histograms built on different bin grids.
    GridMismatch,
    /// Statistic requested on an empty sample set.
    EmptySamples,
    /// Not enough data points for a fit or estimate.
    InsufficientData { needed: usize, got: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::NumericFault { tick, scale } => {
                write!(f, "non-finite value at scale {scale} during tick {tick}")
            }
            Error::DegenerateProbe { component, value } => {
                write!(f, "probe component {component} is degenerate ({value:e})")
            }
            Error::GridMismatch => f.write_str("histograms use different bin grids"),
            Error::EmptySamples => f.write_str("empty sample set"),
            Error::InsufficientData { needed, got } => {
                write!(f, "need at least {needed} data points, got {got}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
