//! File-level orchestration: configuration, per-symbol calibration and
//! parameter files, day-by-day replay with metric reports, curve export and
//! scenario generation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::auction::{self, AuctionConfig, AuctionModel, ExpiryCalendar};
use crate::bayes::{self, GaussianPosterior, IntradayConfig, Route};
use crate::error::{Error, Result};
use crate::forecast::{replay_day, DayContext, Forecast};
use crate::marketdata::{
    load_bins, load_days, overnight_gap, volume_percentile, write_string, BinGrid, BinSeries, DayRecord,
    SymbolHistory,
};
use crate::prior::{self, ArmaParams, PriorConfig, SpecialDayBetas, VolumePrior, SPECIAL_DAY_PREDICTORS};
use crate::stats::{self, LossSpec, Metrics};
use crate::synth::{self, ScenarioSpec};
use crate::ucurve::{self, Curve, FunctionalBetas, GAP_PREDICTOR, VOLUME_PERCENTILE_PREDICTOR};

pub const SCHEMA_VERSION: u32 = 1;
/// Stored dispersion for bins without enough history: the cumulative
/// observation then carries no weight against the prior.
pub const OMEGA_UNINFORMATIVE: f64 = 1e6;
pub const MIN_SPECIAL_DAY_ROWS: usize = 60;
pub const MIN_PERCENTILE_HISTORY: usize = 20;
pub const KAPPA_FRACTION_RANGE: (f64, f64) = (0.3, 0.8);

/// Flat key-value run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub session: String,
    pub bin_minutes: u32,
    pub prior_window: usize,
    pub curve_window: usize,
    pub dispersion_window: usize,
    pub percentile_window: usize,
    pub kappa_fraction: f64,
    /// Permit a κ fraction outside [0.3, 0.8].
    pub kappa_override: bool,
    pub zero_bin_threshold: f64,
    pub min_bins_for_variance: usize,
    pub grubbs_alpha: f64,
    pub loss_over_weight: f64,
    pub loss_under_weight: f64,
    pub loss_exponent: u8,
    pub arma_loss_exponent: u8,
    pub reconcile_tolerance: f64,
    /// Daily totals in the days file include the closing auction.
    pub total_includes_auction: bool,
    pub use_arma: bool,
    pub use_special_days: bool,
    pub use_functional_regression: bool,
    pub refresh_curve_intraday: bool,
    pub smooth_curve_betas: bool,
    pub exclude_expiry_from_auction_mean: bool,
    /// Optional `date,label` CSV replacing the triple-witching calendar.
    pub expiry_calendar: Option<PathBuf>,
    pub ignore_expiry_flags: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            session: "09:30-16:00".into(),
            bin_minutes: 10,
            prior_window: 20,
            curve_window: 180,
            dispersion_window: 60,
            percentile_window: 60,
            kappa_fraction: 0.5,
            kappa_override: false,
            zero_bin_threshold: 0.05,
            min_bins_for_variance: 6,
            grubbs_alpha: 0.05,
            loss_over_weight: 2.0,
            loss_under_weight: 1.0,
            loss_exponent: 1,
            arma_loss_exponent: 2,
            reconcile_tolerance: 0.005,
            total_includes_auction: true,
            use_arma: true,
            use_special_days: true,
            use_functional_regression: true,
            refresh_curve_intraday: true,
            smooth_curve_betas: false,
            exclude_expiry_from_auction_mean: false,
            expiry_calendar: None,
            ignore_expiry_flags: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("prior_window", self.prior_window),
            ("curve_window", self.curve_window),
            ("dispersion_window", self.dispersion_window),
            ("percentile_window", self.percentile_window),
            ("min_bins_for_variance", self.min_bins_for_variance),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        let (lo, hi) = KAPPA_FRACTION_RANGE;
        if !(self.kappa_fraction > 0.0) {
            return bad("kappa_fraction must be positive".into());
        }
        if !self.kappa_override && !(lo..=hi).contains(&self.kappa_fraction) {
            return bad(format!("kappa_fraction {} outside [{lo}, {hi}]; set kappa_override to allow", self.kappa_fraction));
        }
        if !(0.0..=1.0).contains(&self.zero_bin_threshold) {
            return bad("zero_bin_threshold must lie in [0, 1]".into());
        }
        if !(self.grubbs_alpha > 0.0 && self.grubbs_alpha < 1.0) {
            return bad("grubbs_alpha must lie in (0, 1)".into());
        }
        if !(self.reconcile_tolerance >= 0.0) {
            return bad("reconcile_tolerance must be non-negative".into());
        }
        self.loss().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.arma_loss().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<BinGrid> {
        BinGrid::from_session(&self.session, self.bin_minutes).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn loss(&self) -> LossSpec {
        LossSpec { over_weight: self.loss_over_weight, under_weight: self.loss_under_weight, exponent: self.loss_exponent }
    }

    pub fn arma_loss(&self) -> LossSpec {
        LossSpec { exponent: self.arma_loss_exponent, ..self.loss() }
    }

    pub fn prior_config(&self) -> PriorConfig {
        PriorConfig { window: self.prior_window, grubbs_alpha: self.grubbs_alpha, ..Default::default() }
    }

    pub fn intraday_config(&self) -> IntradayConfig {
        IntradayConfig {
            kappa_fraction: self.kappa_fraction,
            prior_window: self.prior_window,
            min_bins_for_variance: self.min_bins_for_variance,
            zero_bin_threshold: self.zero_bin_threshold,
            grubbs_alpha: self.grubbs_alpha,
        }
    }

    pub fn auction_config(&self) -> AuctionConfig {
        AuctionConfig { window: auction::AUCTION_WINDOW, exclude_expiry_from_mean: self.exclude_expiry_from_auction_mean }
    }

    pub fn calendar(&self) -> Result<ExpiryCalendar> {
        let mut cal = match &self.expiry_calendar {
            Some(path) => ExpiryCalendar::from_csv(path)?,
            None => ExpiryCalendar::default(),
        };
        cal.ignore_flags = self.ignore_expiry_flags;
        Ok(cal)
    }
}

/// Components that fell back to a default instead of a fit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fallbacks {
    pub arma_prior_only: bool,
    pub special_days_pooled: bool,
    pub special_days_zero: bool,
    pub curve_uniform: bool,
    pub functional_zero: bool,
    pub route_insufficient_history: bool,
    pub dispersion_uninformative: bool,
    pub auction_default: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub days: usize,
    pub bin_days: usize,
    pub unreconciled_days: usize,
    pub arma_observations: usize,
    pub arma_loss: Option<f64>,
    pub special_day_rows: usize,
    pub curve_days: usize,
    pub functional_days: usize,
    pub auction_expiry_days: usize,
    /// QQ correlation of daily continuous volumes against a log-normal.
    pub lognormal_qq: Option<f64>,
    pub warnings: Vec<String>,
}

/// Per-symbol fitted parameters, persisted as `<SYMBOL>.params.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedParams {
    pub schema_version: u32,
    pub symbol: String,
    pub calibrated_through: Option<NaiveDate>,
    pub session: String,
    pub bin_minutes: u32,
    pub phi: f64,
    pub theta: f64,
    pub special_days: SpecialDayBetas,
    pub base_curve: Curve,
    pub functional: FunctionalBetas,
    pub beta_expiry: f64,
    pub beta_expiry_std_error: Option<f64>,
    pub route: Route,
    pub zero_bin_fraction: f64,
    pub omega_sq: Vec<f64>,
    pub fallbacks: Fallbacks,
    pub diagnostics: Diagnostics,
}

impl CalibratedParams {
    pub fn file_name(symbol: &str) -> String {
        format!("{symbol}.params.json")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.symbol));
        write_string(&path, &self.to_json()?)?;
        Ok(path)
    }

    pub fn load(dir: &Path, symbol: &str) -> Result<Self> {
        let path = dir.join(Self::file_name(symbol));
        if !path.exists() {
            return Err(Error::MissingParams(symbol.to_string()));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let params: Self = serde_json::from_str(&text)?;
        if params.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: schema version {} (expected {SCHEMA_VERSION})",
                path.display(),
                params.schema_version
            )));
        }
        Ok(params)
    }

    pub fn arma(&self) -> ArmaParams {
        ArmaParams { phi: self.phi, theta: self.theta, last_eps: 0.0 }
    }
}

/// Joins the days and bins files into per-symbol histories.
pub fn load_histories(days: &Path, bins: &Path, cfg: &RunConfig) -> Result<Vec<SymbolHistory>> {
    let grid = cfg.grid()?;
    let days = load_days(days)?;
    let mut bins = load_bins(bins, &grid)?;
    Ok(days
        .into_iter()
        .map(|(sym, recs)| {
            let b = bins.remove(&sym).unwrap_or_default();
            SymbolHistory::join(sym, recs, b, cfg.reconcile_tolerance, cfg.total_includes_auction)
        })
        .collect())
}

/// History truncated to days on or before `until`.
pub fn history_until(history: &SymbolHistory, until: NaiveDate) -> SymbolHistory {
    let mut h = history.clone();
    h.days.retain(|d| d.date <= until);
    h.bins.retain(|d, _| *d <= until);
    h.unreconciled.retain(|d| *d <= until);
    h
}

/// Today's record as known before the open: date, open price and flags.
fn pre_open(day: &DayRecord) -> DayRecord {
    DayRecord { close_price: day.open_price, total_volume: 0.0, auction_volume: 0.0, ..day.clone() }
}

/// Absolute gap ratio of day `i`; 0 when volatility is undefined.
fn abs_gap(days: &[DayRecord], i: usize) -> Option<f64> {
    if i == 0 {
        return None;
    }
    let today = pre_open(&days[i]);
    Some(overnight_gap(&days[i - 1], &today, &days[..i]).map_or(0.0, |g| g.gap_ratio.abs()))
}

fn trailing_volumes(history: &SymbolHistory, end: usize, window: usize) -> Vec<f64> {
    history.days[end.saturating_sub(window)..end]
        .iter()
        .map(|d| history.continuous_volume(d))
        .filter(|v| *v > 0.0)
        .collect()
}

/// Rows of the special-day regression: ARMA residual of the excess log
/// volume against the day's predictors.
#[derive(Debug, Clone, Default)]
pub struct SpecialDayRows {
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

pub fn special_day_rows(
    history: &SymbolHistory,
    cfg: &RunConfig,
    calendar: &ExpiryCalendar,
    arma: &ArmaParams,
) -> SpecialDayRows {
    let days = &history.days;
    let valid: Vec<usize> = (0..days.len()).filter(|&i| history.continuous_volume(&days[i]) > 0.0).collect();
    let logs: Vec<f64> = valid.iter().map(|&i| history.continuous_volume(&days[i]).ln()).collect();
    let excess = prior::excess_series(&logs, cfg.prior_window, cfg.grubbs_alpha);
    let (preds, _) = prior::arma_filter(&excess, arma.phi, arma.theta);
    let mut rows = SpecialDayRows::default();
    for (k, y) in excess.iter().enumerate() {
        let i = valid[k + cfg.prior_window];
        let gap = abs_gap(days, i).unwrap_or(0.0);
        let mut x = prior::special_day_features(&days[i], None, calendar.is_expiry_day(&days[i]));
        x[0] = gap;
        rows.y.push(y - preds[k]);
        rows.x.push(x);
    }
    rows
}

/// One day's curve with its regression predictors.
#[derive(Debug, Clone)]
pub struct CurveDay {
    pub date: NaiveDate,
    pub curve: Curve,
    pub gap: f64,
    pub percentile: f64,
}

/// Usable days in the curve window with both predictors defined.
pub fn curve_days(history: &SymbolHistory, cfg: &RunConfig) -> Vec<CurveDay> {
    let days = &history.days;
    let start = days.len().saturating_sub(cfg.curve_window);
    (start..days.len())
        .filter_map(|i| {
            let bins = history.bins.get(&days[i].date)?;
            if !ucurve::usable_day(bins) {
                return None;
            }
            let past = trailing_volumes(history, i, cfg.percentile_window);
            if past.len() < MIN_PERCENTILE_HISTORY.min(cfg.percentile_window) {
                return None;
            }
            let percentile = volume_percentile(history.continuous_volume(&days[i]), &past).ok()?;
            Some(CurveDay { date: days[i].date, curve: Curve::from_bins(bins)?, gap: abs_gap(days, i)?, percentile })
        })
        .collect()
}

fn window_bins(history: &SymbolHistory, window: usize) -> Vec<BinSeries> {
    let start = history.days.len().saturating_sub(window);
    history.days[start..].iter().filter_map(|d| history.bins.get(&d.date).cloned()).collect()
}

/// Fits every component for one symbol. The special-day fit is left at
/// zero (and flagged) when the symbol has too few rows; [`calibrate_all`]
/// pools those symbols.
pub fn calibrate_symbol(
    history: &SymbolHistory,
    cfg: &RunConfig,
    calendar: &ExpiryCalendar,
) -> Result<(CalibratedParams, SpecialDayRows)> {
    if history.days.is_empty() {
        return Err(Error::EmptyInput);
    }
    let grid = cfg.grid()?;
    let bin_count = grid.bin_count();
    let mut fb = Fallbacks::default();
    let mut diag = Diagnostics {
        days: history.days.len(),
        bin_days: history.bins.len(),
        unreconciled_days: history.unreconciled.len(),
        ..Default::default()
    };

    let volumes: Vec<f64> =
        history.days.iter().map(|d| history.continuous_volume(d)).filter(|v| *v > 0.0).collect();
    diag.lognormal_qq = stats::lognormal_fit(&volumes).ok().map(|f| f.qq_correlation());
    let logs: Vec<f64> = volumes.iter().map(|v| v.ln()).collect();

    let excess = prior::excess_series(&logs, cfg.prior_window, cfg.grubbs_alpha);
    diag.arma_observations = excess.len();
    let arma = if cfg.use_arma {
        let fit = prior::calibrate_arma(&excess, &cfg.arma_loss());
        fb.arma_prior_only = fit.prior_only;
        if !fit.prior_only {
            diag.arma_loss = Some(fit.loss);
        }
        fit.params
    } else {
        ArmaParams::null()
    };

    let rows = if cfg.use_special_days { special_day_rows(history, cfg, calendar, &arma) } else { SpecialDayRows::default() };
    diag.special_day_rows = rows.y.len();
    let special_days = if !cfg.use_special_days {
        SpecialDayBetas::zeros()
    } else if rows.y.len() < MIN_SPECIAL_DAY_ROWS {
        fb.special_days_zero = true;
        SpecialDayBetas::zeros()
    } else {
        match prior::special_day_regression(&rows.y, &rows.x, &SPECIAL_DAY_PREDICTORS, &cfg.loss()) {
            Ok(b) => b,
            Err(e) => {
                diag.warnings.push(format!("special-day regression: {e}"));
                fb.special_days_zero = true;
                SpecialDayBetas::zeros()
            }
        }
    };

    let base_curve = match ucurve::historical_curve(&window_bins(history, cfg.curve_window), cfg.curve_window) {
        Ok(c) => c,
        Err(e) => {
            diag.warnings.push(format!("historical curve: {e}"));
            fb.curve_uniform = true;
            Curve::uniform(bin_count)
        }
    };

    let names = [GAP_PREDICTOR, VOLUME_PERCENTILE_PREDICTOR];
    let cdays = curve_days(history, cfg);
    diag.curve_days = cdays.len();
    let functional = if !cfg.use_functional_regression {
        FunctionalBetas::zeros(&names, bin_count)
    } else {
        let curves: Vec<Curve> = cdays.iter().map(|d| d.curve.clone()).collect();
        let preds: Vec<Vec<f64>> = cdays.iter().map(|d| vec![d.gap, d.percentile]).collect();
        match ucurve::fit_functional_regression(&curves, &preds, &names) {
            Ok(f) => {
                diag.functional_days = f.n_days;
                diag.warnings.extend(f.warnings.iter().cloned());
                f
            }
            Err(e) => {
                diag.warnings.push(format!("functional regression: {e}"));
                fb.functional_zero = true;
                FunctionalBetas::zeros(&names, bin_count)
            }
        }
    };

    let route_bins = window_bins(history, cfg.dispersion_window);
    let cells: usize = route_bins.iter().map(|b| b.volumes.len()).sum();
    let zeros: usize = route_bins.iter().map(BinSeries::zero_bins).sum();
    let zero_bin_fraction = if cells == 0 { 0.0 } else { zeros as f64 / cells as f64 };
    fb.route_insufficient_history = route_bins.len() < bayes::MIN_ROUTING_DAYS;
    let route = bayes::route_symbol(&route_bins, cfg.zero_bin_threshold);

    let omega_sq = match bayes::dispersion_profile(&route_bins, &base_curve) {
        Ok(w) => w.into_iter().map(|v| if v.is_finite() { v } else { OMEGA_UNINFORMATIVE }).collect(),
        Err(e) => {
            diag.warnings.push(format!("dispersion profile: {e}"));
            fb.dispersion_uninformative = true;
            vec![OMEGA_UNINFORMATIVE; bin_count]
        }
    };

    let (beta_expiry, beta_expiry_std_error) =
        match auction::fit_auction_seasonality(&history.days, calendar, cfg.auction_config()) {
            Ok(m) => {
                diag.auction_expiry_days = m.expiry_days;
                if m.no_expiry_flag {
                    diag.warnings.push("auction: no expiry days in sample".into());
                }
                (m.beta_expiry, m.beta_std_error.is_finite().then_some(m.beta_std_error))
            }
            Err(e) => {
                diag.warnings.push(format!("auction seasonality: {e}"));
                fb.auction_default = true;
                (0.0, None)
            }
        };

    let params = CalibratedParams {
        schema_version: SCHEMA_VERSION,
        symbol: history.symbol.clone(),
        calibrated_through: history.days.last().map(|d| d.date),
        session: grid.session_string(),
        bin_minutes: grid.bin_minutes,
        phi: arma.phi,
        theta: arma.theta,
        special_days,
        base_curve,
        functional,
        beta_expiry,
        beta_expiry_std_error,
        route,
        zero_bin_fraction,
        omega_sq,
        fallbacks: fb,
        diagnostics: diag,
    };
    Ok((params, rows))
}

/// Calibrates each symbol independently. Symbols with too few special-day
/// rows share a fit pooled over every symbol's rows.
pub fn calibrate_all(
    histories: &[SymbolHistory],
    cfg: &RunConfig,
    calendar: &ExpiryCalendar,
) -> BTreeMap<String, Result<CalibratedParams>> {
    let mut out = BTreeMap::new();
    let mut pooled_rows = SpecialDayRows::default();
    for h in histories {
        let res = calibrate_symbol(h, cfg, calendar).map_err(|e| Error::Calibration {
            symbol: h.symbol.clone(),
            source: Box::new(e),
        });
        if let Ok((_, rows)) = &res {
            pooled_rows.y.extend_from_slice(&rows.y);
            pooled_rows.x.extend(rows.x.iter().cloned());
        }
        out.insert(h.symbol.clone(), res.map(|(p, _)| p));
    }
    let needs_pool = out.values().any(|r| matches!(r, Ok(p) if p.fallbacks.special_days_zero));
    if !(cfg.use_special_days && needs_pool && pooled_rows.y.len() >= MIN_SPECIAL_DAY_ROWS) {
        return out;
    }
    let Ok(pooled) =
        prior::special_day_regression(&pooled_rows.y, &pooled_rows.x, &SPECIAL_DAY_PREDICTORS, &cfg.loss())
    else {
        return out;
    };
    for p in out.values_mut().flatten() {
        if p.fallbacks.special_days_zero && p.diagnostics.special_day_rows < MIN_SPECIAL_DAY_ROWS {
            p.special_days = pooled.clone();
            p.fallbacks.special_days_zero = false;
            p.fallbacks.special_days_pooled = true;
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct CalibrationSummary {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(String, Error)>,
}

/// Calibrates every symbol in the data files on days up to `until` and
/// writes one parameter file per symbol into `out`.
pub fn cmd_calibrate(
    days: &Path,
    bins: &Path,
    out: &Path,
    until: Option<NaiveDate>,
    cfg: &RunConfig,
) -> Result<CalibrationSummary> {
    cfg.validate()?;
    let calendar = cfg.calendar()?;
    let mut histories = load_histories(days, bins, cfg)?;
    if let Some(u) = until {
        histories = histories.iter().map(|h| history_until(h, u)).collect();
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summary = CalibrationSummary::default();
    for (symbol, res) in calibrate_all(&histories, cfg, &calendar) {
        match res {
            Ok(p) => summary.written.push(p.save(out)?),
            Err(e) => summary.failures.push((symbol, e)),
        }
    }
    Ok(summary)
}

/// Pre-open inputs for day `index` of `history` plus the prior used.
pub fn day_context(
    history: &SymbolHistory,
    index: usize,
    params: &CalibratedParams,
    cfg: &RunConfig,
    calendar: &ExpiryCalendar,
) -> Result<(DayContext, VolumePrior)> {
    let past = &history.days[..index];
    let today = pre_open(&history.days[index]);
    let past_logs = prior::log_volumes(past, history.total_includes_auction);
    let mut arma = if cfg.use_arma { params.arma() } else { ArmaParams::null() };
    let betas = if cfg.use_special_days { params.special_days.clone() } else { SpecialDayBetas::zeros() };
    let gap = abs_gap(&history.days, index).unwrap_or(0.0);
    let mut features = prior::special_day_features(&today, None, calendar.is_expiry_day(&today));
    features[0] = gap;
    let prior = prior::build_prior(&past_logs, &cfg.prior_config(), &mut arma, &betas, &features)
        .map_err(|e| e.in_module("prior"))?;

    let volume_history = trailing_volumes(history, index, cfg.percentile_window);
    let percentile = volume_percentile(prior.log_mean().exp(), &volume_history).unwrap_or(0.5);
    let functional = if cfg.smooth_curve_betas { params.functional.smoothed() } else { params.functional.clone() };
    let predictors = functional
        .predictor_names
        .iter()
        .map(|n| match n.as_str() {
            GAP_PREDICTOR => gap,
            VOLUME_PERCENTILE_PREDICTOR => percentile,
            _ => 0.0,
        })
        .collect();

    let mut model = AuctionModel {
        beta_expiry: params.beta_expiry,
        beta_std_error: params.beta_expiry_std_error.unwrap_or(f64::INFINITY),
        mu_a: 0.0,
        expiry_days: 0,
        no_expiry_flag: false,
        config: cfg.auction_config(),
    };
    let auction =
        if model.roll(past, calendar).is_ok() { model.predict_auction(today.date, &today.flags, calendar) } else { 0.0 };

    let ctx = DayContext {
        prior: GaussianPosterior::from_prior(&prior),
        route: params.route,
        base_curve: params.base_curve.clone(),
        betas: functional,
        predictors,
        volume_history,
        omega_sq: params.omega_sq.clone(),
        auction,
        intraday: cfg.intraday_config(),
        refresh_curve: cfg.refresh_curve_intraday,
    };
    Ok((ctx, prior))
}

/// One replayed session with the realized values it is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct DayReplay {
    pub symbol: String,
    pub date: NaiveDate,
    pub forecasts: Vec<Forecast>,
    pub true_log: f64,
    pub gm_log: f64,
    pub arma_log: f64,
    pub prior_log: f64,
    pub bins: Vec<f64>,
    pub auction_true: f64,
}

impl DayReplay {
    pub fn quintet_log(&self) -> f64 {
        self.forecasts.last().map_or(self.prior_log, |f| f.total_log)
    }
}

/// Replays every session of `history` dated within `[from, to]`. Sessions
/// that cannot be replayed are reported in the returned warnings.
pub fn replay_symbol(
    history: &SymbolHistory,
    params: &CalibratedParams,
    cfg: &RunConfig,
    calendar: &ExpiryCalendar,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<(Vec<DayReplay>, Vec<String>)> {
    let bin_count = cfg.grid()?.bin_count();
    if params.base_curve.len() != bin_count {
        return Err(Error::Config(format!(
            "{}: parameters use {} bins, grid has {bin_count}",
            params.symbol,
            params.base_curve.len()
        )));
    }
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (i, day) in history.days.iter().enumerate() {
        if day.date < from || day.date > to {
            continue;
        }
        let tag = format!("{} {}", history.symbol, day.date);
        let Some(bins) = history.bins.get(&day.date) else {
            warnings.push(format!("{tag}: no bins"));
            continue;
        };
        let realized = history.continuous_volume(day);
        if !(realized > 0.0) {
            warnings.push(format!("{tag}: no continuous volume"));
            continue;
        }
        let (ctx, prior) = match day_context(history, i, params, cfg, calendar) {
            Ok(c) => c,
            Err(e) => {
                warnings.push(format!("{tag}: {e}"));
                continue;
            }
        };
        let forecasts = replay_day(&ctx, &bins.volumes)?;
        out.push(DayReplay {
            symbol: history.symbol.clone(),
            date: day.date,
            forecasts,
            true_log: realized.ln(),
            gm_log: prior.gm_log,
            arma_log: prior.mu0,
            prior_log: prior.log_mean(),
            bins: bins.volumes.clone(),
            auction_true: day.auction_volume,
        });
    }
    Ok((out, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub rank: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub days: usize,
    pub loss: LossSpec,
    /// End-of-day total continuous volume, best model first.
    pub total_volume: Vec<ModelScore>,
    /// Remaining volume forecast at the middle of the session.
    pub remaining_midday: Option<Metrics>,
    pub auction: Option<Metrics>,
    pub warnings: Vec<String>,
}

pub const MODEL_NAMES: [&str; 4] = ["gm_only", "gm_arma", "gm_arma_special", "quintet"];

fn metrics(est: &[f64], truth: &[f64], loss: &LossSpec) -> Option<Metrics> {
    if est.is_empty() {
        None
    } else {
        stats::report_metrics(est, truth, loss).ok()
    }
}

pub fn build_report(replays: &[DayReplay], warnings: Vec<String>, loss: &LossSpec) -> ReplayReport {
    let truth: Vec<f64> = replays.iter().map(|r| r.true_log).collect();
    let columns: [Vec<f64>; 4] = [
        replays.iter().map(|r| r.gm_log).collect(),
        replays.iter().map(|r| r.arma_log).collect(),
        replays.iter().map(|r| r.prior_log).collect(),
        replays.iter().map(DayReplay::quintet_log).collect(),
    ];
    let mut scores: Vec<ModelScore> = MODEL_NAMES
        .iter()
        .zip(&columns)
        .filter_map(|(name, est)| {
            Some(ModelScore { model: name.to_string(), rank: 0, metrics: metrics(est, &truth, loss)? })
        })
        .collect();
    scores.sort_by(|a, b| a.metrics.ale.total_cmp(&b.metrics.ale));
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
    }

    let (mut rem_est, mut rem_true) = (Vec::new(), Vec::new());
    let (mut auc_est, mut auc_true) = (Vec::new(), Vec::new());
    for r in replays {
        let mid = r.bins.len() / 2;
        let realized: f64 = r.bins[mid..].iter().sum();
        if let Some(f) = r.forecasts.get(mid) {
            if f.remaining > 0.0 && realized > 0.0 {
                rem_est.push(f.remaining.ln());
                rem_true.push(realized.ln());
            }
        }
        let predicted = r.forecasts.first().map_or(0.0, |f| f.auction);
        if predicted > 0.0 && r.auction_true > 0.0 {
            auc_est.push(predicted.ln());
            auc_true.push(r.auction_true.ln());
        }
    }
    ReplayReport {
        days: replays.len(),
        loss: *loss,
        total_volume: scores,
        remaining_midday: metrics(&rem_est, &rem_true, loss),
        auction: metrics(&auc_est, &auc_true, loss),
        warnings,
    }
}

impl ReplayReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "replayed days: {}", self.days);
        let _ = writeln!(
            s,
            "loss: over {} under {} exponent {}",
            self.loss.over_weight, self.loss.under_weight, self.loss.exponent
        );
        let _ = writeln!(s, "\nend-of-day total volume");
        let _ = writeln!(s, "{:<4} {:<18} {:>12} {:>16} {:>10} {:>6}", "rank", "model", "ale", "rmse", "mape", "n");
        for m in &self.total_volume {
            let _ = writeln!(
                s,
                "{:<4} {:<18} {:>12.6} {:>16.1} {:>10.4} {:>6}",
                m.rank, m.model, m.metrics.ale, m.metrics.rmse, m.metrics.mape, m.metrics.n
            );
        }
        for (name, m) in [("remaining volume at midday", &self.remaining_midday), ("closing auction", &self.auction)] {
            let _ = writeln!(s, "\n{name}");
            match m {
                Some(m) => {
                    let _ = writeln!(s, "ale {:.6}  rmse {:.1}  mape {:.4}  n {}", m.ale, m.rmse, m.mape, m.n);
                }
                None => {
                    let _ = writeln!(s, "no observations");
                }
            }
        }
        if !self.warnings.is_empty() {
            let _ = writeln!(s, "\nwarnings");
            for w in &self.warnings {
                let _ = writeln!(s, "{w}");
            }
        }
        s
    }
}

#[derive(Serialize)]
struct ForecastRecord<'a> {
    symbol: &'a str,
    date: NaiveDate,
    #[serde(flatten)]
    forecast: &'a Forecast,
}

/// One JSON object per (symbol, date, time point).
pub fn forecasts_jsonl(replays: &[DayReplay]) -> Result<String> {
    let mut s = String::new();
    for r in replays {
        for f in &r.forecasts {
            s.push_str(&serde_json::to_string(&ForecastRecord { symbol: &r.symbol, date: r.date, forecast: f })?);
            s.push('\n');
        }
    }
    Ok(s)
}

/// Replays `[from, to]` for every symbol in the data files using the
/// parameter files in `params_dir`.
#[allow(clippy::too_many_arguments)]
pub fn cmd_replay(
    params_dir: &Path,
    days: &Path,
    bins: &Path,
    from: NaiveDate,
    to: NaiveDate,
    report: &Path,
    forecasts_out: Option<&Path>,
    cfg: &RunConfig,
) -> Result<ReplayReport> {
    cfg.validate()?;
    if from > to {
        return Err(Error::Config(format!("--from {from} is after --to {to}")));
    }
    let calendar = cfg.calendar()?;
    let histories = load_histories(days, bins, cfg)?;
    let mut all = Vec::new();
    let mut warnings = Vec::new();
    for h in &histories {
        let params = CalibratedParams::load(params_dir, &h.symbol)?;
        if params.calibrated_through.is_some_and(|d| d >= from) {
            warnings.push(format!("{}: parameters calibrated through {} overlap the replay", h.symbol, params.calibrated_through.unwrap()));
        }
        let (r, w) = replay_symbol(h, &params, cfg, &calendar, from, to)?;
        all.extend(r);
        warnings.extend(w);
    }
    let rep = build_report(&all, warnings, &cfg.loss());
    if report.extension().is_some_and(|e| e == "json") {
        write_string(report, &(serde_json::to_string_pretty(&rep)? + "\n"))?;
    } else {
        write_string(report, &rep.to_text())?;
    }
    if let Some(path) = forecasts_out {
        write_string(path, &forecasts_jsonl(&all)?)?;
    }
    Ok(rep)
}

/// Average c-curve over the days in one predictor bucket.
#[derive(Debug, Clone)]
pub struct CurveBucket {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    pub dates: Vec<NaiveDate>,
    pub curve: Curve,
}

/// Splits the days into `buckets` equal-count groups by `key` (ties broken
/// by date) and averages each group's curves.
pub fn bucket_curves(days: &[CurveDay], buckets: usize, key: impl Fn(&CurveDay) -> f64) -> Result<Vec<CurveBucket>> {
    if buckets == 0 {
        return Err(Error::InvalidArgument("bucket count must be positive".into()));
    }
    let mut order: Vec<&CurveDay> = days.iter().collect();
    order.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.date.cmp(&b.date)));
    let n = order.len();
    let mut out = Vec::new();
    for k in 0..buckets {
        let group = &order[k * n / buckets..(k + 1) * n / buckets];
        if group.is_empty() {
            continue;
        }
        let curves: Vec<Curve> = group.iter().map(|d| d.curve.clone()).collect();
        out.push(CurveBucket {
            index: k,
            lower: key(group[0]),
            upper: key(group[group.len() - 1]),
            dates: group.iter().map(|d| d.date).collect(),
            curve: ucurve::average_curve(&curves)?,
        });
    }
    Ok(out)
}

fn buckets_csv(symbol: &str, predictor: &str, buckets: &[CurveBucket]) -> String {
    let mut s = String::from("symbol,predictor,bucket,lower,upper,days,bin_index,c_value\n");
    for b in buckets {
        for (i, c) in b.curve.values().iter().enumerate() {
            let _ = writeln!(s, "{symbol},{predictor},{},{},{},{},{i},{c}", b.index, b.lower, b.upper, b.dates.len());
        }
    }
    s
}

/// Writes, per symbol, the historical curve and the gap- and
/// percentile-bucketed average curves.
pub fn cmd_export_curves(days: &Path, bins: &Path, out: &Path, buckets: usize, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for h in load_histories(days, bins, cfg)? {
        let cdays = curve_days(&h, cfg);
        let historical = ucurve::historical_curve(&window_bins(&h, cfg.curve_window), cfg.curve_window)
            .map_err(|e| Error::Calibration { symbol: h.symbol.clone(), source: Box::new(e) })?;
        let path = out.join(format!("{}.curve.csv", h.symbol));
        ucurve::write_curve_csv(&path, &historical)?;
        written.push(path);
        for (name, b) in [
            (GAP_PREDICTOR, bucket_curves(&cdays, buckets, |d| d.gap)?),
            (VOLUME_PERCENTILE_PREDICTOR, bucket_curves(&cdays, buckets, |d| d.percentile)?),
        ] {
            let path = out.join(format!("{}.{name}_buckets.csv", h.symbol));
            write_string(&path, &buckets_csv(&h.symbol, name, &b))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Generates a scenario into `out` (days.csv, bins.csv, truth.json).
pub fn cmd_synth(spec: &Path, out: &Path, seed: Option<u64>) -> Result<ScenarioSpec> {
    let mut spec = ScenarioSpec::load(spec)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    synth::generate(&spec)?.write(out, &spec)?;
    Ok(spec)
}
