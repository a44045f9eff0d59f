use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("basis is not orthonormal under the quadrature rule: max |G - I| = {deviation:e} (order {order})")]
    QuadratureTooCoarse { order: usize, deviation: f64 },

    #[error("point ({x}, {y}) lies outside the unit square")]
    OutsideDomain { x: f64, y: f64 },

    #[error("Riccati solution escaped at t = {time}: norm {norm:e} exceeds ceiling {ceiling:e}")]
    RiccatiEscape { time: f64, norm: f64, ceiling: f64 },

    #[error("optimizer stalled at iteration {iteration}: objective {objective:e}, projected-gradient norm {gradient_norm:e}")]
    Stalled {
        iteration: usize,
        objective: f64,
        gradient_norm: f64,
        best: Box<crate::sweep::Solution>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("config validation failed: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
