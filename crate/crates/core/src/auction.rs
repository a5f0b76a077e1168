//! Closing-auction volume: rolling geometric mean times an option-expiry
//! multiplier, and the fixed-fraction allocation helper.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{DayFlags, DayRecord};
use crate::stats;

pub const AUCTION_WINDOW: usize = 20;
pub const MIN_AUCTION_DAYS: usize = 60;
pub const ALLOCATION_FRACTION: f64 = 0.12;

/// Third Friday of March, June, September or December.
pub fn is_triple_witching(date: NaiveDate) -> bool {
    matches!(date.month(), 3 | 6 | 9 | 12) && date.weekday() == Weekday::Fri && (15..=21).contains(&date.day())
}

/// Which sessions carry the expiry dummy.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExpiryCalendar {
    /// Replaces the triple-witching rule when set.
    pub dates: Option<BTreeSet<NaiveDate>>,
    /// Also treat days flagged `optexp` as expiries.
    pub ignore_flags: bool,
}

impl ExpiryCalendar {
    /// Loads a `date,label` CSV; the label is informational.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: 0, msg: e.to_string() })?;
        let mut dates = BTreeSet::new();
        for (i, row) in reader.records().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| Error::Parse { path: path.to_path_buf(), line, msg: e.to_string() })?;
            let field = row.get(0).unwrap_or("");
            let date = NaiveDate::parse_from_str(field, "%Y-%m-%d").map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad date {field:?}: {e}"),
            })?;
            dates.insert(date);
        }
        Ok(Self { dates: Some(dates), ignore_flags: false })
    }

    pub fn is_expiry(&self, date: NaiveDate, flags: &DayFlags) -> bool {
        let listed = match &self.dates {
            Some(d) => d.contains(&date),
            None => is_triple_witching(date),
        };
        listed || (!self.ignore_flags && flags.option_expiry)
    }

    pub fn is_expiry_day(&self, day: &DayRecord) -> bool {
        self.is_expiry(day.date, &day.flags)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionConfig {
    pub window: usize,
    /// Leave expiry days out of the rolling mean.
    pub exclude_expiry_from_mean: bool,
}

impl Default for AuctionConfig {
    fn default() -> Self {
        Self { window: AUCTION_WINDOW, exclude_expiry_from_mean: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionModel {
    pub beta_expiry: f64,
    pub beta_std_error: f64,
    /// Rolling mean log auction volume as of the end of the fitted history.
    pub mu_a: f64,
    pub expiry_days: usize,
    /// No expiry day in the sample, so the multiplier is fixed at 1.
    pub no_expiry_flag: bool,
    pub config: AuctionConfig,
}

impl AuctionModel {
    /// Expiry multiplier `exp(β)`.
    pub fn expiry_multiplier(&self) -> f64 {
        self.beta_expiry.exp()
    }

    /// `exp(μ_a + β·d)`.
    pub fn predict(&self, expiry: bool) -> f64 {
        (self.mu_a + if expiry { self.beta_expiry } else { 0.0 }).exp()
    }

    pub fn predict_auction(&self, date: NaiveDate, flags: &DayFlags, calendar: &ExpiryCalendar) -> f64 {
        self.predict(calendar.is_expiry(date, flags))
    }

    /// Re-anchors `mu_a` on the last `window` days of `history`.
    pub fn roll(&mut self, history: &[DayRecord], calendar: &ExpiryCalendar) -> Result<()> {
        self.mu_a = rolling_auction_log_mean(history, calendar, &self.config)?;
        Ok(())
    }
}

/// Mean log auction volume over the last `window` days of `history`,
/// skipping zero-auction days (and expiry days when configured).
pub fn rolling_auction_log_mean(
    history: &[DayRecord],
    calendar: &ExpiryCalendar,
    cfg: &AuctionConfig,
) -> Result<f64> {
    let start = history.len().saturating_sub(cfg.window);
    let logs: Vec<f64> = history[start..]
        .iter()
        .filter(|d| d.auction_volume > 0.0)
        .filter(|d| !(cfg.exclude_expiry_from_mean && calendar.is_expiry_day(d)))
        .map(|d| d.auction_volume.ln())
        .collect();
    if logs.is_empty() {
        return Err(Error::InsufficientHistory { needed: 1, got: 0 });
    }
    Ok(stats::mean(&logs))
}

/// Regression of the excess log auction volume (over the trailing rolling
/// mean) on the expiry dummy. Without an intercept the coefficient is the
/// mean excess on expiry days.
pub fn fit_auction_seasonality(
    history: &[DayRecord],
    calendar: &ExpiryCalendar,
    cfg: AuctionConfig,
) -> Result<AuctionModel> {
    if history.len() < MIN_AUCTION_DAYS {
        return Err(Error::InsufficientHistory { needed: MIN_AUCTION_DAYS, got: history.len() });
    }
    let mut excess = Vec::new();
    let mut dummy = Vec::new();
    for t in cfg.window..history.len() {
        let day = &history[t];
        if !(day.auction_volume > 0.0) {
            continue;
        }
        let Ok(mu) = rolling_auction_log_mean(&history[..t], calendar, &cfg) else {
            continue;
        };
        excess.push(day.auction_volume.ln() - mu);
        dummy.push(calendar.is_expiry_day(day));
    }
    let on_expiry: Vec<f64> = excess.iter().zip(&dummy).filter(|(_, d)| **d).map(|(y, _)| *y).collect();
    let k = on_expiry.len();
    let beta = if k == 0 { 0.0 } else { stats::mean(&on_expiry) };
    let rss: f64 = excess.iter().zip(&dummy).map(|(y, d)| (y - if *d { beta } else { 0.0 }).powi(2)).sum();
    let dof = excess.len().saturating_sub(1).max(1) as f64;
    let beta_std_error = if k == 0 { f64::INFINITY } else { (rss / dof / k as f64).sqrt() };
    Ok(AuctionModel {
        beta_expiry: beta,
        beta_std_error,
        mu_a: rolling_auction_log_mean(history, calendar, &cfg)?,
        expiry_days: k,
        no_expiry_flag: k == 0,
        config: cfg,
    })
}

/// `min(12% of the order, 12% of the predicted auction)`.
pub fn auction_allocation(order_size: f64, predicted_auction: f64) -> Result<f64> {
    if order_size < 0.0 || predicted_auction < 0.0 || order_size.is_nan() || predicted_auction.is_nan() {
        return Err(Error::InvalidArgument("allocation inputs must be non-negative".into()));
    }
    Ok(ALLOCATION_FRACTION * order_size.min(predicted_auction))
}
