//! Seeded synthetic market generator with known ground truth.
//!
//! Daily log continuous volume is `μ + ARMA(1,1) + β_gap·|gap ratio|`.
//! Bins split the day along a curve shape shifted by the gap and the
//! volume percentile, with multiplicative log-normal noise and optional
//! empty bins. The closing auction is a noisy fraction of the day, scaled on
//! triple-witching sessions.

use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::auction::is_triple_witching;
use crate::bayes::Route;
use crate::error::{Error, Result};
use crate::harness::{CalibratedParams, Fallbacks, SCHEMA_VERSION};
use crate::marketdata::{
    overnight_gap, volume_percentile, write_bins, write_days, write_string, BinGrid, BinSeries, BinsBySymbol,
    DayFlags, DayRecord, DaysBySymbol,
};
use crate::prior::{SpecialDayBetas, SPECIAL_DAY_PREDICTORS};
use crate::ucurve::{repair, Curve, FunctionalBetas, GAP_PREDICTOR, VOLUME_PERCENTILE_PREDICTOR};

const ARMA_BURN_IN: usize = 200;
const PERCENTILE_LOOKBACK: usize = 60;
const START_PRICE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveShape {
    Uniform,
    UShape,
    InvertedJ,
}

impl CurveShape {
    /// Per-bin fractions summing to 1.
    pub fn u_curve(self, bins: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..bins)
            .map(|j| {
                let s = (j as f64 + 0.5) / bins as f64;
                match self {
                    CurveShape::Uniform => 1.0,
                    CurveShape::UShape => 1.0 + 3.0 * (2.0 * s - 1.0).powi(2),
                    CurveShape::InvertedJ => 1.0 + 4.0 * (-6.0 * s).exp() + 0.8 * s.powi(4),
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }

    pub fn c_curve(self, bins: usize) -> Curve {
        Curve::from_u(self.u_curve(bins)).map(|u| u.to_c()).unwrap_or_else(|_| Curve::uniform(bins))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub symbol: String,
    pub start_date: NaiveDate,
    pub n_days: usize,
    /// Mean daily log continuous volume.
    pub mu_log: f64,
    /// Stdev of the ARMA innovations.
    pub sigma_log: f64,
    pub phi: f64,
    pub theta: f64,
    /// Log-volume effect per unit of absolute gap ratio.
    pub beta_gap: f64,
    pub curve_shape: CurveShape,
    /// Stdev of the multiplicative log noise on each bin.
    pub bin_noise: f64,
    pub expiry_multiplier: f64,
    pub zero_bin_prob: f64,
    pub seed: u64,
    /// Opening-bin shift of the c-curve per unit of absolute gap ratio.
    pub curve_gap_beta: f64,
    /// Opening-bin shift of the c-curve per unit of volume percentile.
    pub curve_volume_beta: f64,
    /// Auction volume as a fraction of continuous volume.
    pub auction_fraction: f64,
    pub auction_noise: f64,
    /// Stdev of overnight and intraday log returns.
    pub price_vol: f64,
    pub bin_minutes: u32,
    pub session: String,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            symbol: "SYN".into(),
            start_date: NaiveDate::from_ymd_opt(2015, 1, 2).unwrap(),
            n_days: 500,
            mu_log: 2.0e6f64.ln(),
            sigma_log: 0.25,
            phi: 0.7,
            theta: -0.3,
            beta_gap: 0.15,
            curve_shape: CurveShape::UShape,
            bin_noise: 0.25,
            expiry_multiplier: 3.0,
            zero_bin_prob: 0.0,
            seed: 42,
            curve_gap_beta: 0.02,
            curve_volume_beta: 0.02,
            auction_fraction: 0.08,
            auction_noise: 0.15,
            price_vol: 0.015,
            bin_minutes: 10,
            session: "09:30-16:00".into(),
        }
    }
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn grid(&self) -> Result<BinGrid> {
        BinGrid::from_session(&self.session, self.bin_minutes).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.symbol.trim().is_empty() || self.symbol.contains(',') {
            return bad("symbol must be non-empty without commas");
        }
        if self.n_days == 0 {
            return bad("n_days must be positive");
        }
        if !self.mu_log.is_finite() {
            return bad("mu_log must be finite");
        }
        for (name, v) in [
            ("sigma_log", self.sigma_log),
            ("bin_noise", self.bin_noise),
            ("auction_noise", self.auction_noise),
            ("price_vol", self.price_vol),
            ("beta_gap", self.beta_gap.abs()),
            ("curve_gap_beta", self.curve_gap_beta.abs()),
            ("curve_volume_beta", self.curve_volume_beta.abs()),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be finite and non-negative"));
            }
        }
        if !(self.phi.abs() < 1.0 && self.theta.abs() < 1.0) {
            return bad("|phi| and |theta| must be below 1");
        }
        if !(0.0..=1.0).contains(&self.zero_bin_prob) {
            return bad("zero_bin_prob must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.auction_fraction) {
            return bad("auction_fraction must lie in [0, 1)");
        }
        if !(self.expiry_multiplier > 0.0 && self.expiry_multiplier.is_finite()) {
            return bad("expiry_multiplier must be positive");
        }
        self.grid()?;
        Ok(())
    }
}

/// Generated data plus the parameters that produced it.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub days: Vec<DayRecord>,
    pub bins: Vec<BinSeries>,
    /// Realized daily log continuous volumes.
    pub log_volumes: Vec<f64>,
    pub truth: CalibratedParams,
}

impl SynthData {
    pub fn write(&self, dir: &Path, spec: &ScenarioSpec) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let grid = spec.grid()?;
        let days: DaysBySymbol = [(spec.symbol.clone(), self.days.clone())].into_iter().collect();
        let bins: BinsBySymbol = [(spec.symbol.clone(), self.bins.clone())].into_iter().collect();
        write_days(&dir.join("days.csv"), &days)?;
        write_bins(&dir.join("bins.csv"), &bins, &grid)?;
        let truth = serde_json::to_string_pretty(&self.truth)? + "\n";
        write_string(&dir.join("truth.json"), &truth)
    }
}

/// Opening-to-close decay of a curve coefficient: `beta` at the first bin, 0 at the last.
fn decaying(beta: f64, bins: usize) -> Vec<f64> {
    let last = (bins.max(2) - 1) as f64;
    (0..bins).map(|j| beta * (last - j as f64) / last).collect()
}

fn next_session(date: NaiveDate) -> NaiveDate {
    let mut d = date;
    loop {
        d = d.succ_opt().expect("date overflow");
        if d.weekday().num_days_from_monday() < 5 {
            return d;
        }
    }
}

fn first_session(date: NaiveDate) -> NaiveDate {
    if date.weekday().num_days_from_monday() < 5 {
        date
    } else {
        next_session(date)
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<SynthData> {
    spec.validate()?;
    let grid = spec.grid()?;
    let bins = grid.bin_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = move |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let mut arma = 0.0;
    let mut prev_eps = 0.0;
    for _ in 0..ARMA_BURN_IN {
        let eps = spec.sigma_log * normal(&mut rng);
        arma = spec.phi * arma + eps + spec.theta * prev_eps;
        prev_eps = eps;
    }

    let base_c = spec.curve_shape.c_curve(bins);
    let gap_shift = decaying(spec.curve_gap_beta, bins);
    let vol_shift = decaying(spec.curve_volume_beta, bins);

    let mut days: Vec<DayRecord> = Vec::with_capacity(spec.n_days);
    let mut series = Vec::with_capacity(spec.n_days);
    let mut log_volumes = Vec::with_capacity(spec.n_days);
    let mut volumes: Vec<f64> = Vec::with_capacity(spec.n_days);
    let mut date = first_session(spec.start_date);
    let mut prev_close = START_PRICE;

    for i in 0..spec.n_days {
        if i > 0 {
            date = next_session(date);
        }
        let eps = spec.sigma_log * normal(&mut rng);
        let gap_draw = normal(&mut rng);
        let intraday_draw = normal(&mut rng);
        let bin_draws: Vec<f64> = (0..bins).map(|_| normal(&mut rng)).collect();
        let zero_draws: Vec<f64> = (0..bins).map(|_| rng.random::<f64>()).collect();
        let auction_draw = normal(&mut rng);

        arma = spec.phi * arma + eps + spec.theta * prev_eps;
        prev_eps = eps;

        let open = prev_close * (spec.price_vol * gap_draw).exp();
        let close = open * (spec.price_vol * intraday_draw).exp();
        let expiry = is_triple_witching(date);
        let today = DayRecord {
            date,
            open_price: open,
            close_price: close,
            total_volume: 0.0,
            auction_volume: 0.0,
            flags: DayFlags { option_expiry: expiry, ..Default::default() },
        };
        let gap_ratio = days
            .last()
            .and_then(|prev| overnight_gap(prev, &today, &days).ok())
            .map_or(0.0, |g| g.gap_ratio.abs());

        let log_v = spec.mu_log + arma + spec.beta_gap * gap_ratio;
        let v = log_v.exp();
        let lookback = &volumes[volumes.len().saturating_sub(PERCENTILE_LOOKBACK)..];
        let pct = volume_percentile(v, lookback).unwrap_or(0.5);

        let shifted: Vec<f64> = base_c
            .values()
            .iter()
            .enumerate()
            .map(|(j, c)| c + gap_shift[j] * gap_ratio + vol_shift[j] * pct)
            .collect();
        let c_day = Curve::from_c(repair(shifted))?;
        let mut vols: Vec<f64> = (0..bins)
            .map(|j| {
                if zero_draws[j] < spec.zero_bin_prob {
                    0.0
                } else {
                    c_day.u_at(j) * (spec.bin_noise * bin_draws[j]).exp()
                }
            })
            .collect();
        let sum: f64 = vols.iter().sum();
        if sum > 0.0 {
            vols.iter_mut().for_each(|x| *x *= v / sum);
        } else {
            let busiest = (0..bins).max_by(|a, b| c_day.u_at(*a).total_cmp(&c_day.u_at(*b))).unwrap_or(0);
            vols[busiest] = v;
        }

        let multiplier = if expiry { spec.expiry_multiplier } else { 1.0 };
        let auction = spec.auction_fraction * v * (spec.auction_noise * auction_draw).exp() * multiplier;
        days.push(DayRecord { total_volume: v + auction, auction_volume: auction, ..today });
        series.push(BinSeries::new(date, vols));
        log_volumes.push(log_v);
        volumes.push(v);
        prev_close = close;
    }

    Ok(SynthData { days, bins: series, log_volumes, truth: ground_truth(spec)? })
}

/// Generating parameters in the calibrated-parameter schema. Curve
/// coefficients are per raw predictor unit (unit scales, zero centres).
pub fn ground_truth(spec: &ScenarioSpec) -> Result<CalibratedParams> {
    spec.validate()?;
    let grid = spec.grid()?;
    let bins = grid.bin_count();
    let mut special = SpecialDayBetas::zeros();
    special.betas[0] = spec.beta_gap;
    let names = [GAP_PREDICTOR, VOLUME_PERCENTILE_PREDICTOR];
    let mut functional = FunctionalBetas::zeros(&names, bins);
    functional.scales = vec![1.0, 1.0];
    functional.beta0 = spec.curve_shape.c_curve(bins).values().to_vec();
    functional.betas = vec![decaying(spec.curve_gap_beta, bins), decaying(spec.curve_volume_beta, bins)];
    let route = if spec.zero_bin_prob > 0.05 { Route::CumulativeModel } else { Route::BinModel };
    debug_assert_eq!(special.names.len(), SPECIAL_DAY_PREDICTORS.len());
    Ok(CalibratedParams {
        schema_version: SCHEMA_VERSION,
        symbol: spec.symbol.clone(),
        calibrated_through: None,
        session: grid.session_string(),
        bin_minutes: grid.bin_minutes,
        phi: spec.phi,
        theta: spec.theta,
        special_days: special,
        base_curve: spec.curve_shape.c_curve(bins),
        functional,
        beta_expiry: spec.expiry_multiplier.ln(),
        beta_expiry_std_error: None,
        route,
        zero_bin_fraction: spec.zero_bin_prob,
        omega_sq: vec![0.0; bins],
        fallbacks: Fallbacks::default(),
        diagnostics: Default::default(),
    })
}
