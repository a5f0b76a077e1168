//! Intraday equity-volume forecasting.
//!
//! Five small models cooperate to forecast a stock's volume during the
//! trading day:
//!
//! * [`prior`]: today's total-volume prior from a 20-day geometric mean,
//!   an ARMA(1,1) excess-volume term and special-day multipliers;
//! * [`ucurve`]: the intraday profile (u-curve / c-curve) with functional
//!   regression on the overnight gap and the volume percentile;
//! * [`auction`]: close-auction volume with an expiry-day multiplier;
//! * [`bayes`]: conjugate updating of the daily total from per-bin
//!   observations (liquid names) or the cumulative observation (illiquid);
//! * [`forecast`]: remaining volume, interval volume, participation rate
//!   and end-time analytics assembled from the above.
//!
//! [`marketdata`] loads and validates input files, [`stats`] carries the
//! shared estimators and the asymmetric logarithmic error, [`synth`] is the
//! seeded scenario generator used as a test oracle, and [`harness`] drives
//! calibration, replay and export.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auction;
pub mod bayes;
pub mod error;
pub mod forecast;
pub mod harness;
pub mod marketdata;
pub mod prior;
pub mod stats;
pub mod synth;
pub mod ucurve;

pub use auction::{AuctionModel, ExpiryCalendar};
pub use bayes::{GaussianPosterior, IntradayConfig, IntradayState, NormalGammaParams, Route};
pub use error::{Error, ErrorClass, Result};
pub use forecast::{EndTime, Forecast};
pub use harness::{CalibratedParams, RunConfig};
pub use marketdata::{BinGrid, BinSeries, DayFlags, DayRecord, GapObservation, SymbolHistory};
pub use prior::{ArmaParams, VolumePrior};
pub use stats::{LogNormalFit, LossSpec};
pub use synth::ScenarioSpec;
pub use ucurve::{Curve, CurveKind, FunctionalBetas};
