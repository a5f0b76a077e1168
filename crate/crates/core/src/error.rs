use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Calibration,
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },

    #[error("duplicate record for {symbol} on {date}")]
    DuplicateDate { symbol: String, date: NaiveDate },

    #[error("line {line}: non-positive price")]
    NonPositivePrice { line: u64 },

    #[error("line {line}: auction volume {auction} exceeds total volume {total}")]
    AuctionExceedsTotal { line: u64, auction: f64, total: f64 },

    #[error("line {line}: bin timestamp {time} is off the {minutes}-minute grid")]
    OffGrid { line: u64, time: String, minutes: u32 },

    #[error("line {line}: bin timestamp {time} is outside the session")]
    OutsideSession { line: u64, time: String },

    #[error("insufficient history: need {needed}, have {got}")]
    InsufficientHistory { needed: usize, got: usize },

    #[error("degenerate volatility")]
    DegenerateVolatility,

    #[error("empty input")]
    EmptyInput,

    #[error("non-positive value {0}")]
    NonPositive(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("rank-deficient design matrix")]
    RankDeficient,

    #[error("no convergence after {0} iterations")]
    NonConvergence(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("no liquidity in window")]
    NoLiquidity,

    #[error("config error: {0}")]
    Config(String),

    #[error("missing calibrated parameters for symbol {0}")]
    MissingParams(String),

    #[error("{module}: {source}")]
    Component {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration failed for {symbol}: {source}")]
    Calibration {
        symbol: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Wrap an error with the name of the component that raised it.
    pub fn in_module(self, module: &'static str) -> Self {
        Error::Component { module, source: Box::new(self) }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => ErrorClass::Config,
            Error::RankDeficient
            | Error::NonConvergence(_)
            | Error::Calibration { .. }
            | Error::MissingParams(_) => ErrorClass::Calibration,
            Error::Component { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
