//! User-facing predictions built from the component models: remaining and
//! interval volume, participation rate, end-time solve, and the bin-by-bin
//! replay of one session.
//!
//! Time points run from 0 (the open) to the bin count (the close); the
//! forecast at time point n has seen bins `0..n`.

use serde::{Deserialize, Serialize};

use crate::bayes::{GaussianPosterior, IntradayConfig, IntradayState, Route};
use crate::error::{Error, Result};
use crate::marketdata::volume_percentile;
use crate::ucurve::{self, Curve, FunctionalBetas};

const END_TIME_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub as_of_bin: usize,
    /// Posterior mean of today's log continuous volume.
    pub total_log: f64,
    pub total: f64,
    /// Continuous volume traded in bins before `as_of_bin`.
    pub traded: f64,
    pub remaining: f64,
    pub c_hat: Curve,
    pub auction: f64,
    pub route: Route,
    pub posterior_var: f64,
    /// The predicted total is below the volume already traded.
    pub deficit: bool,
}

impl Forecast {
    /// Full-day estimate `remaining + traded`.
    pub fn day_estimate(&self) -> f64 {
        self.remaining + self.traded
    }

    fn check_point(&self, t: usize) -> Result<()> {
        if t > self.c_hat.len() {
            return Err(Error::InvalidArgument(format!("time point {t} outside the session")));
        }
        Ok(())
    }

    /// `(remaining + traded) · (ĉ(t₂) − ĉ(t₁))`.
    pub fn interval_volume(&self, t1: usize, t2: usize) -> Result<f64> {
        self.check_point(t1)?;
        self.check_point(t2)?;
        if t1 > t2 {
            return Err(Error::InvalidArgument(format!("interval [{t1}, {t2}] is reversed")));
        }
        Ok(self.day_estimate() * (self.c_hat.c_at(t2) - self.c_hat.c_at(t1)))
    }

    /// Participation rate `S / V(t₁, t₂)`.
    pub fn expected_participation(&self, order: f64, t1: usize, t2: usize) -> Result<f64> {
        let v = self.interval_volume(t1, t2)?;
        if !(v > 0.0) {
            return Err(Error::NoLiquidity);
        }
        Ok(order / v)
    }

    /// First time point `t > t₁` with `ρ·V(t₁, t) ≥ S`.
    pub fn end_time(&self, order: f64, rho: f64, t1: usize) -> Result<EndTime> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidArgument(format!("participation {rho} outside (0, 1]")));
        }
        self.check_point(t1)?;
        for t in t1 + 1..=self.c_hat.len() {
            let reach = rho * self.interval_volume(t1, t)?;
            if reach >= order * (1.0 - END_TIME_RTOL) {
                return Ok(EndTime::Bin(t));
            }
        }
        Ok(EndTime::NotReachable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndTime {
    Bin(usize),
    NotReachable,
}

/// `e^μ · (1 − ĉ)`.
pub fn remaining_volume(mu: f64, c_hat: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&c_hat) {
        return Err(Error::InvalidArgument(format!("cumulative fraction {c_hat} outside [0, 1]")));
    }
    Ok(mu.exp() * (1.0 - c_hat))
}

/// Combines the current posterior, curve and auction estimate.
pub fn assemble(state: &IntradayState, c_hat: Curve, auction: f64) -> Result<Forecast> {
    let n = state.bins_seen;
    let post = state.posterior();
    let total = post.mu_p.exp();
    let remaining = remaining_volume(post.mu_p, c_hat.c_at(n)).map_err(|e| e.in_module("forecast"))?;
    Ok(Forecast {
        as_of_bin: n,
        total_log: post.mu_p,
        total,
        traded: state.cum_volume,
        remaining,
        c_hat,
        auction,
        route: state.route,
        posterior_var: post.sigma_p_sq,
        deficit: total < state.cum_volume,
    })
}

/// Everything known about a session before its first bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DayContext {
    pub prior: GaussianPosterior,
    pub route: Route,
    pub base_curve: Curve,
    pub betas: FunctionalBetas,
    /// Raw predictor values for the curve regression, in `betas` order.
    pub predictors: Vec<f64>,
    /// Trailing daily continuous volumes for the percentile predictor.
    pub volume_history: Vec<f64>,
    /// Dispersion of the cumulative observation per bin.
    pub omega_sq: Vec<f64>,
    pub auction: f64,
    pub intraday: IntradayConfig,
    /// Refresh the curve each bin from the posterior volume percentile.
    pub refresh_curve: bool,
}

impl DayContext {
    pub fn bin_count(&self) -> usize {
        self.base_curve.len()
    }

    fn curve_for(&self, mu: f64) -> Result<Curve> {
        if self.refresh_curve && !self.volume_history.is_empty() {
            let pct = volume_percentile(mu.exp(), &self.volume_history)?;
            ucurve::update_curve_for_volume(&self.base_curve, &self.betas, &self.predictors, pct)
        } else {
            ucurve::predict_curve(&self.base_curve, &self.betas, &self.predictors)
        }
        .map_err(|e| e.in_module("ucurve"))
    }
}

/// Forecasts at every time point of a session. The forecast at time point
/// n reads only `bins[..n]`; `bins` may be shorter than the session.
pub fn replay_day(ctx: &DayContext, bins: &[f64]) -> Result<Vec<Forecast>> {
    let count = ctx.bin_count();
    if bins.len() > count {
        return Err(Error::LengthMismatch { left: bins.len(), right: count });
    }
    if ctx.omega_sq.len() != count {
        return Err(Error::LengthMismatch { left: ctx.omega_sq.len(), right: count });
    }
    let mut state = IntradayState::new(ctx.prior, ctx.intraday, ctx.route, count);
    let mut out = Vec::with_capacity(bins.len() + 1);
    for n in 0..=bins.len() {
        let curve = ctx.curve_for(state.posterior().mu_p)?;
        let (u_hat, c_next) = if n < count { (curve.u_at(n), curve.c_at(n + 1)) } else { (0.0, 1.0) };
        out.push(assemble(&state, curve, ctx.auction)?);
        if n < bins.len() {
            state
                .observe_bin(bins[n], u_hat, c_next, ctx.omega_sq[n])
                .map_err(|e| e.in_module("bayes"))?;
        }
    }
    Ok(out)
}
