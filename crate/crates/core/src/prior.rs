//! Daily volume prior: rolling geometric mean of the last N days, an
//! ARMA(1,1) model of the excess log volume, and multiplicative
//! special-day adjustments fitted by ALE regression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{DayRecord, GapObservation};
use crate::stats::{self, LossSpec};

/// Names of the special-day predictors, in design-matrix order.
pub const SPECIAL_DAY_PREDICTORS: [&str; 4] = ["gap_ratio", "earnings", "optexp", "rebalance"];

pub const SIGMA0_SQ_FLOOR: f64 = 0.05 * 0.05;
pub const ARMA_MIN_OBS: usize = 60;
pub const ARMA_BURN_IN: usize = 10;
/// Grid bound; coefficients stay strictly inside (-0.95, 0.95).
pub const ARMA_LIMIT: f64 = 0.95;

/// Default ARMA calibration loss: ALE weights (2, 1) on squared log errors.
pub const ARMA_LOSS: LossSpec = LossSpec { over_weight: 2.0, under_weight: 1.0, exponent: 2 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub window: usize,
    pub grubbs_alpha: f64,
    pub sigma0_sq_floor: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { window: 20, grubbs_alpha: 0.05, sigma0_sq_floor: SIGMA0_SQ_FLOOR }
    }
}

/// ARMA(1,1) coefficients plus the running innovation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaParams {
    pub phi: f64,
    pub theta: f64,
    #[serde(default)]
    pub last_eps: f64,
}

impl ArmaParams {
    pub fn new(phi: f64, theta: f64) -> Result<Self> {
        if !(phi.abs() < 1.0 && theta.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("ARMA({phi}, {theta}) outside the unit interval")));
        }
        Ok(Self { phi, theta, last_eps: 0.0 })
    }

    pub fn null() -> Self {
        Self { phi: 0.0, theta: 0.0, last_eps: 0.0 }
    }
}

/// One-step predictions and innovations with `ε₀ = 0`: `pred[t]` is the
/// forecast of `y[t]` from `y[..t]`, and `pred[y.len()]` the next one.
pub fn arma_filter(y: &[f64], phi: f64, theta: f64) -> (Vec<f64>, Vec<f64>) {
    let mut preds = Vec::with_capacity(y.len() + 1);
    let mut eps = Vec::with_capacity(y.len());
    let mut pred = 0.0;
    for &v in y {
        preds.push(pred);
        let e = v - pred;
        eps.push(e);
        pred = phi * v + theta * e;
    }
    preds.push(pred);
    (preds, eps)
}

/// One-step forecast `φ·y_last + θ·ε_last`, innovations rebuilt from the start.
/// Updates `params.last_eps`.
pub fn arma_forecast(y_history: &[f64], params: &mut ArmaParams) -> Result<f64> {
    if y_history.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (preds, eps) = arma_filter(y_history, params.phi, params.theta);
    params.last_eps = *eps.last().unwrap();
    Ok(*preds.last().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmaFit {
    pub params: ArmaParams,
    /// One-step ALE after burn-in.
    pub loss: f64,
    pub n: usize,
    /// Too little history: the null model was returned.
    pub prior_only: bool,
}

fn arma_loss(y: &[f64], phi: f64, theta: f64, spec: &LossSpec) -> f64 {
    let mut pred = 0.0;
    let mut loss = 0.0;
    for (t, &v) in y.iter().enumerate() {
        if t >= ARMA_BURN_IN {
            loss += spec.point(pred - v);
        }
        pred = phi * v + theta * (v - pred);
    }
    loss
}

fn grid(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) / step).round() as i64;
    (0..=n).map(move |i| ((lo + i as f64 * step) * 100.0).round() / 100.0)
}

/// Grid search over (φ, θ) minimizing one-step ALE: step 0.05 on
/// (-0.95, 0.95)², then step 0.01 around the best point.
///
/// On white noise the AR and MA factors can cancel along the ridge φ = −θ,
/// so the search returns the null model unless the best fit lowers the null
/// loss by a relative `NULL_GAIN_PER_PARAM · ln(n) / n` per parameter.
pub fn calibrate_arma(y: &[f64], spec: &LossSpec) -> ArmaFit {
    let n = y.len();
    let null_loss = if n > ARMA_BURN_IN { arma_loss(y, 0.0, 0.0, spec) } else { 0.0 };
    let null = ArmaFit { params: ArmaParams::null(), loss: null_loss, n, prior_only: n < ARMA_MIN_OBS };
    if n < ARMA_MIN_OBS || y.iter().all(|v| *v == 0.0) {
        return null;
    }
    let eval = |phi: f64, theta: f64| (phi, theta, arma_loss(y, phi, theta, spec));
    let coarse: Vec<(f64, f64, f64)> = grid(-0.90, 0.90, 0.05)
        .flat_map(|p| grid(-0.90, 0.90, 0.05).map(move |t| (p, t)))
        .map(|(p, t)| eval(p, t))
        .collect();
    let (cp, ct, _) = argmin(&coarse);
    let fine_max = ARMA_LIMIT - 0.01;
    let fine: Vec<(f64, f64, f64)> = grid((cp - 0.05).max(-fine_max), (cp + 0.05).min(fine_max), 0.01)
        .flat_map(|p| grid((ct - 0.05).max(-fine_max), (ct + 0.05).min(fine_max), 0.01).map(move |t| (p, t)))
        .map(|(p, t)| eval(p, t))
        .collect();
    let (phi, theta, loss) = argmin(&fine);
    let scored = (n - ARMA_BURN_IN) as f64;
    if null_loss - loss <= 2.0 * NULL_GAIN_PER_PARAM * scored.ln() / scored * null_loss {
        return null;
    }
    ArmaFit { params: ArmaParams { phi, theta, last_eps: 0.0 }, loss, n, prior_only: false }
}

/// Relative loss gain per fitted parameter, in units of `ln(n) / n`, that
/// the ARMA fit must beat to replace the null model.
pub const NULL_GAIN_PER_PARAM: f64 = 2.0;

/// Lowest loss; exact ties go to the smaller `φ² + θ²`.
fn argmin(points: &[(f64, f64, f64)]) -> (f64, f64, f64) {
    *points
        .iter()
        .min_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then_with(|| (a.0 * a.0 + a.1 * a.1).total_cmp(&(b.0 * b.0 + b.1 * b.1)))
        })
        .unwrap()
}

/// Rolling-window summary of filtered log volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub mean: f64,
    /// Sample variance of the filtered window.
    pub variance: f64,
    pub kept: usize,
    pub removed: usize,
}

/// Mean and variance of `logs` after the Grubbs filter.
pub fn window_stats(logs: &[f64], alpha: f64) -> Result<WindowStats> {
    if logs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let out = stats::grubbs_filter(logs, alpha);
    Ok(WindowStats {
        mean: stats::mean(&out.kept),
        variance: stats::sample_variance(&out.kept),
        kept: out.kept.len(),
        removed: out.removed.len(),
    })
}

/// Log continuous volumes of days with positive volume, in date order.
pub fn log_volumes(days: &[DayRecord], total_includes_auction: bool) -> Vec<f64> {
    days.iter()
        .map(|d| d.continuous_volume(total_includes_auction))
        .filter(|v| *v > 0.0)
        .map(f64::ln)
        .collect()
}

/// Filtered mean log volume over the `window` days before `at`.
pub fn rolling_log_mean(
    days: &[DayRecord],
    window: usize,
    at: chrono::NaiveDate,
    total_includes_auction: bool,
    alpha: f64,
) -> Result<f64> {
    let before: Vec<DayRecord> = days.iter().filter(|d| d.date < at).cloned().collect();
    let logs = log_volumes(&before, total_includes_auction);
    if logs.len() < window {
        return Err(Error::InsufficientHistory { needed: window, got: logs.len() });
    }
    Ok(window_stats(&logs[logs.len() - window..], alpha)?.mean)
}

/// Excess log volume `y_t = X_t − μ_t` for every `t ≥ window`, where `μ_t`
/// is the filtered mean of the preceding `window` values.
pub fn excess_series(logs: &[f64], window: usize, alpha: f64) -> Vec<f64> {
    (window..logs.len())
        .map(|t| logs[t] - window_stats(&logs[t - window..t], alpha).map(|w| w.mean).unwrap_or(logs[t]))
        .collect()
}

/// Per-symbol special-day coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecialDayBetas {
    pub names: Vec<String>,
    pub betas: Vec<f64>,
    /// Calibration-sample mean of each predictor. The trailing mean already
    /// carries the average day's effect, so predictors act as deviations.
    #[serde(default)]
    pub centers: Vec<f64>,
}

impl SpecialDayBetas {
    pub fn zeros() -> Self {
        Self {
            names: SPECIAL_DAY_PREDICTORS.iter().map(|s| s.to_string()).collect(),
            betas: vec![0.0; SPECIAL_DAY_PREDICTORS.len()],
            centers: vec![0.0; SPECIAL_DAY_PREDICTORS.len()],
        }
    }

    /// `exp(Σ β_k (x_k − center_k))`; a missing center counts as 0.
    pub fn multiplier(&self, features: &[f64]) -> f64 {
        self.betas
            .iter()
            .zip(features)
            .enumerate()
            .map(|(k, (b, x))| b * (x - self.centers.get(k).copied().unwrap_or(0.0)))
            .sum::<f64>()
            .exp()
    }
}

/// Predictor row for a day: absolute gap ratio then earnings/optexp/rebalance dummies.
pub fn special_day_features(day: &DayRecord, gap: Option<&GapObservation>, expiry: bool) -> Vec<f64> {
    let dummy = |b: bool| if b { 1.0 } else { 0.0 };
    vec![
        gap.map_or(0.0, |g| g.gap_ratio.abs()),
        dummy(day.flags.earnings),
        dummy(day.flags.option_expiry || expiry),
        dummy(day.flags.index_rebalance),
    ]
}

/// ALE regression of excess log volume on special-day predictors. A
/// nuisance intercept absorbs the offset the asymmetric loss induces and is
/// discarded; predictors are applied relative to their sample means, so the
/// average day keeps multiplier 1. Columns that are identically zero get
/// β = 0.
pub fn special_day_regression(
    y: &[f64],
    predictors: &[Vec<f64>],
    names: &[&str],
    spec: &LossSpec,
) -> Result<SpecialDayBetas> {
    if y.len() != predictors.len() {
        return Err(Error::LengthMismatch { left: y.len(), right: predictors.len() });
    }
    let k = names.len();
    let active: Vec<usize> = (0..k).filter(|&j| predictors.iter().any(|r| r[j] != 0.0)).collect();
    let mut betas = vec![0.0; k];
    let mut centers = vec![0.0; k];
    if !active.is_empty() {
        for &j in &active {
            centers[j] = predictors.iter().map(|r| r[j]).sum::<f64>() / predictors.len() as f64;
        }
        let design: Vec<Vec<f64>> = predictors
            .iter()
            .map(|r| std::iter::once(1.0).chain(active.iter().map(|&j| r[j])).collect())
            .collect();
        let fit = stats::ale_regression(y, &design, spec)?;
        for (slot, b) in active.iter().zip(fit.into_iter().skip(1)) {
            betas[*slot] = b;
        }
    }
    Ok(SpecialDayBetas { names: names.iter().map(|s| s.to_string()).collect(), betas, centers })
}

/// Log-space prior for today's continuous volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumePrior {
    /// Rolling filtered mean plus the ARMA forecast.
    pub mu0: f64,
    pub sigma0_sq: f64,
    /// Special-day multiplier `exp(Σ β_k x_k)`.
    pub multiplier: f64,
    pub source_window: usize,
    /// Rolling filtered mean alone (the geometric-mean prior in logs).
    pub gm_log: f64,
    pub arma_adjustment: f64,
    /// The variance floor was applied.
    pub floored: bool,
}

impl VolumePrior {
    /// Prior mean in log space, `mu0 + ln(multiplier)`.
    pub fn log_mean(&self) -> f64 {
        self.mu0 + self.multiplier.ln()
    }

    /// A prior centred at `log_mean` with no model terms.
    pub fn flat(log_mean: f64, sigma0_sq: f64) -> Self {
        Self {
            mu0: log_mean,
            sigma0_sq,
            multiplier: 1.0,
            source_window: 0,
            gm_log: log_mean,
            arma_adjustment: 0.0,
            floored: false,
        }
    }
}

/// Prior from past log volumes (oldest first, today excluded).
///
/// `mu0` is the filtered rolling mean of the last `window` values plus the
/// ARMA forecast over the whole excess series; the multiplier applies the
/// special-day betas to `today_features`.
pub fn build_prior(
    past_logs: &[f64],
    cfg: &PriorConfig,
    arma: &mut ArmaParams,
    betas: &SpecialDayBetas,
    today_features: &[f64],
) -> Result<VolumePrior> {
    let n = past_logs.len();
    if n < cfg.window {
        return Err(Error::InsufficientHistory { needed: cfg.window, got: n });
    }
    let w = window_stats(&past_logs[n - cfg.window..], cfg.grubbs_alpha)?;
    let excess = excess_series(past_logs, cfg.window, cfg.grubbs_alpha);
    let arma_adjustment = if excess.is_empty() { 0.0 } else { arma_forecast(&excess, arma)? };
    let floored = w.variance < cfg.sigma0_sq_floor;
    let multiplier = betas.multiplier(today_features);
    Ok(VolumePrior {
        mu0: w.mean + arma_adjustment,
        sigma0_sq: w.variance.max(cfg.sigma0_sq_floor),
        multiplier,
        source_window: cfg.window,
        gm_log: w.mean,
        arma_adjustment,
        floored,
    })
}
