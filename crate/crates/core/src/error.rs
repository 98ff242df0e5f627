use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("transmitter and receiver coincide; path loss is singular")]
    CoincidentPoints,
    #[error("node index {index} out of range for a realization of {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("{len} MAPs given for {nodes} nodes")]
    LengthMismatch { len: usize, nodes: usize },
    #[error("node {index} has only {available} other receivers, cannot take the {k}-th nearest")]
    NotEnoughReceivers { index: usize, k: usize, available: usize },
    #[error("invalid stopping set: {0}")]
    InvalidSpec(String),
    #[error("divergent integral: {0}")]
    Divergent(&'static str),
    #[error("{0} is only available for deterministic stopping sets (empty or disk)")]
    NotDeterministic(&'static str),
    #[error("{what} requires beta = 4, got {beta}")]
    RequiresBeta4 { what: &'static str, beta: f64 },
    #[error("MAP equation has no sign change: g({lo}) = {g_lo}, g({hi}) = {g_hi}")]
    Bracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },
    #[error("numerical failure in {context}: {source}")]
    Numerics {
        context: &'static str,
        #[source]
        source: NumericsError,
    },
    #[error("Stieltjes discretisation error {error:.3e} exceeds tolerance {tolerance:.3e}; refine the rho grid")]
    GridTooCoarse { error: f64, tolerance: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidSimConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait NumericsContext<T> {
    fn context(self, context: &'static str) -> Result<T>;
}

impl<T> NumericsContext<T> for std::result::Result<T, NumericsError> {
    fn context(self, context: &'static str) -> Result<T> {
        self.map_err(|source| Error::Numerics { context, source })
    }
}
