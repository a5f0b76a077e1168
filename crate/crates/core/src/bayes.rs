//! Conjugate updating of today's log volume from intraday prints.
//!
//! Liquid symbols use per-bin observations `x(j) = ln(v_j / û_j)`; the
//! posterior mean starts as a κ₀-weighted average with the prior and switches
//! to a precision-weighted Gaussian update once enough bins have printed to
//! estimate their dispersion. Illiquid symbols use a single cumulative
//! observation `z(n) = ln(V(n) / ĉ(n))` with a historical dispersion profile.

use serde::{Deserialize, Serialize};
use statrs::distribution::StudentsT;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::marketdata::BinSeries;
use crate::prior::VolumePrior;
use crate::stats;
use crate::ucurve::Curve;

pub const SAMPLE_VAR_FLOOR: f64 = 0.05 * 0.05;
pub const OMEGA_SQ_FLOOR: f64 = 0.01 * 0.01;
pub const MIN_ROUTING_DAYS: usize = 20;
pub const MIN_DISPERSION_DAYS: usize = 20;
pub const INTRADAY_GRUBBS_CAP: usize = 2;

/// Normal belief about today's log volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu_p: f64,
    pub sigma_p_sq: f64,
}

impl GaussianPosterior {
    pub fn from_prior(prior: &VolumePrior) -> Self {
        Self { mu_p: prior.log_mean(), sigma_p_sq: prior.sigma0_sq }
    }
}

/// Normal-gamma belief over (mean, precision).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaParams {
    pub mu: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NormalGammaParams {
    pub fn new(mu: f64, kappa: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(kappa > 0.0 && alpha > 0.0 && beta > 0.0) || !mu.is_finite() {
            return Err(Error::InvalidArgument("normal-gamma parameters must be positive".into()));
        }
        Ok(Self { mu, kappa, alpha, beta })
    }

    /// Scale of the Student-t marginal of the mean.
    pub fn marginal_scale(&self) -> f64 {
        (self.beta / (self.alpha * self.kappa)).sqrt()
    }

    /// Marginal of the mean: Student-t with `2α` degrees of freedom.
    pub fn marginal(&self) -> Result<StudentsT> {
        StudentsT::new(self.mu, self.marginal_scale(), 2.0 * self.alpha)
            .map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    /// Variance of the mean's marginal; infinite for `α ≤ 1`.
    pub fn marginal_variance(&self) -> f64 {
        if self.alpha > 1.0 {
            self.beta / (self.kappa * (self.alpha - 1.0))
        } else {
            f64::INFINITY
        }
    }

    /// Normalized log density at `(mu, lambda)`.
    pub fn log_density(&self, mu: f64, lambda: f64) -> f64 {
        if !(lambda > 0.0) {
            return f64::NEG_INFINITY;
        }
        let log_z = ln_gamma(self.alpha) - self.alpha * self.beta.ln()
            + 0.5 * (2.0 * std::f64::consts::PI / self.kappa).ln();
        (self.alpha - 0.5) * lambda.ln() - self.beta * lambda
            - 0.5 * self.kappa * lambda * (mu - self.mu).powi(2)
            - log_z
    }
}

/// Gaussian log likelihood of `obs` at mean `mu` and precision `lambda`.
pub fn normal_log_likelihood(obs: &[f64], mu: f64, lambda: f64) -> f64 {
    let n = obs.len() as f64;
    let ss: f64 = obs.iter().map(|x| (x - mu).powi(2)).sum();
    -0.5 * n * (2.0 * std::f64::consts::PI).ln() + 0.5 * n * lambda.ln() - 0.5 * lambda * ss
}

/// Exact conjugate update.
pub fn normal_gamma_update(prior: &NormalGammaParams, obs: &[f64]) -> NormalGammaParams {
    if obs.is_empty() {
        return *prior;
    }
    let n = obs.len() as f64;
    let xbar = stats::mean(obs);
    let ss = stats::sum_sq_about(obs, xbar);
    let k0 = prior.kappa;
    NormalGammaParams {
        mu: prior.mu + n * (xbar - prior.mu) / (k0 + n),
        kappa: k0 + n,
        alpha: prior.alpha + 0.5 * n,
        beta: prior.beta + 0.5 * ss + k0 * n * (xbar - prior.mu).powi(2) / (2.0 * (k0 + n)),
    }
}

/// `ln(v / û)`; `None` for an empty bin.
pub fn bin_observation(volume: f64, u_hat: f64) -> Result<Option<f64>> {
    if !(u_hat > 0.0) {
        return Err(Error::NonPositive(u_hat));
    }
    if volume < 0.0 || !volume.is_finite() {
        return Err(Error::InvalidArgument(format!("bin volume {volume}")));
    }
    Ok((volume > 0.0).then(|| (volume / u_hat).ln()))
}

/// `(μ₀κ₀ + n x̄) / (κ₀ + n)`.
pub fn update_unknown_variance(prior_mu: f64, kappa0: f64, obs: &[f64]) -> f64 {
    if obs.is_empty() {
        return prior_mu;
    }
    let n = obs.len() as f64;
    prior_mu + n * (stats::mean(obs) - prior_mu) / (kappa0 + n)
}

/// Precision-weighted update treating `sample_var` as the known observation
/// variance. The variance is floored at [`SAMPLE_VAR_FLOOR`].
pub fn update_known_variance(prior: GaussianPosterior, obs: &[f64], sample_var: f64) -> GaussianPosterior {
    if obs.is_empty() {
        return prior;
    }
    let var = sample_var.max(SAMPLE_VAR_FLOOR);
    let data_precision = obs.len() as f64 / var;
    let precision = data_precision + 1.0 / prior.sigma_p_sq;
    GaussianPosterior {
        mu_p: prior.mu_p + data_precision / precision * (stats::mean(obs) - prior.mu_p),
        sigma_p_sq: 1.0 / precision,
    }
}

/// `ln(V(n) / ĉ(n))`; `None` until the first print.
pub fn cumulative_observation(cum_volume: f64, c_hat: f64) -> Result<Option<f64>> {
    if !(c_hat > 0.0) {
        return Err(Error::NonPositive(c_hat));
    }
    Ok((cum_volume > 0.0).then(|| (cum_volume / c_hat).ln()))
}

/// Blend of the prior with one cumulative observation of variance
/// `omega_sq` (floored at [`OMEGA_SQ_FLOOR`]).
pub fn update_cumulative(prior: GaussianPosterior, z: f64, omega_sq: f64) -> GaussianPosterior {
    let omega_sq = omega_sq.max(OMEGA_SQ_FLOOR);
    let precision = 1.0 / prior.sigma_p_sq + 1.0 / omega_sq;
    GaussianPosterior {
        mu_p: prior.mu_p + (1.0 / omega_sq) / precision * (z - prior.mu_p),
        sigma_p_sq: 1.0 / precision,
    }
}

/// Population variance across days of `z(n) − X` for each bin, where X is
/// the day's log volume and ĉ is `curve`. Days without volume by bin n are
/// left out of that bin.
pub fn dispersion_profile(history: &[BinSeries], curve: &Curve) -> Result<Vec<f64>> {
    let days: Vec<&BinSeries> = history.iter().filter(|b| b.total() > 0.0).collect();
    if days.len() < MIN_DISPERSION_DAYS {
        return Err(Error::InsufficientHistory { needed: MIN_DISPERSION_DAYS, got: days.len() });
    }
    let bins = curve.len();
    let mut deviations: Vec<Vec<f64>> = vec![Vec::with_capacity(days.len()); bins];
    for day in days {
        if day.volumes.len() != bins {
            return Err(Error::LengthMismatch { left: day.volumes.len(), right: bins });
        }
        let x = day.total().ln();
        let mut cum = 0.0;
        for (j, v) in day.volumes.iter().enumerate() {
            cum += v;
            if let Some(z) = cumulative_observation(cum, curve.c_at(j + 1))? {
                deviations[j].push(z - x);
            }
        }
    }
    Ok(deviations
        .iter()
        .map(|d| if d.len() < 2 { f64::INFINITY } else { stats::population_variance(d) })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    BinModel,
    CumulativeModel,
}

/// Cumulative model iff the zero-bin fraction over the window exceeds
/// `threshold`; short histories go to the cumulative model.
pub fn route_symbol(history: &[BinSeries], threshold: f64) -> Route {
    if history.len() < MIN_ROUTING_DAYS {
        return Route::CumulativeModel;
    }
    let zeros: usize = history.iter().map(BinSeries::zero_bins).sum();
    let total: usize = history.iter().map(|b| b.volumes.len()).sum();
    if total == 0 || zeros as f64 / total as f64 > threshold {
        Route::CumulativeModel
    } else {
        Route::BinModel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntradayConfig {
    /// Prior sample size as a fraction of the prior window.
    pub kappa_fraction: f64,
    pub prior_window: usize,
    pub min_bins_for_variance: usize,
    pub zero_bin_threshold: f64,
    pub grubbs_alpha: f64,
}

impl Default for IntradayConfig {
    fn default() -> Self {
        Self {
            kappa_fraction: 0.5,
            prior_window: 20,
            min_bins_for_variance: 6,
            zero_bin_threshold: 0.05,
            grubbs_alpha: 0.05,
        }
    }
}

impl IntradayConfig {
    pub fn kappa0(&self) -> f64 {
        self.kappa_fraction * self.prior_window as f64
    }
}

/// Per-symbol, per-day update state. Bins must be fed in session order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntradayState {
    pub prior: GaussianPosterior,
    pub config: IntradayConfig,
    pub route: Route,
    pub bin_count: usize,
    pub bin_estimates: Vec<f64>,
    pub cum_volume: f64,
    pub bins_seen: usize,
    pub zero_bins: usize,
    /// Switched from the bin model to the cumulative model during the day.
    pub rerouted: bool,
    /// `(z, Ω²)` of the latest cumulative observation.
    last_cumulative: Option<(f64, f64)>,
}

impl IntradayState {
    pub fn new(prior: GaussianPosterior, config: IntradayConfig, route: Route, bin_count: usize) -> Self {
        Self {
            prior,
            config,
            route,
            bin_count,
            bin_estimates: Vec::new(),
            cum_volume: 0.0,
            bins_seen: 0,
            zero_bins: 0,
            rerouted: false,
            last_cumulative: None,
        }
    }

    /// Feeds one bin. `u_hat` is the predicted fraction for this bin,
    /// `c_hat` the predicted cumulative fraction at its end and `omega_sq`
    /// the dispersion of the cumulative observation at this bin.
    pub fn observe_bin(&mut self, volume: f64, u_hat: f64, c_hat: f64, omega_sq: f64) -> Result<()> {
        if self.bins_seen >= self.bin_count {
            return Err(Error::InvalidArgument("bin past the session close".into()));
        }
        let x = bin_observation(volume, u_hat.max(f64::MIN_POSITIVE))?;
        self.bins_seen += 1;
        self.cum_volume += volume;
        match x {
            Some(x) => self.bin_estimates.push(x),
            None => self.zero_bins += 1,
        }
        if self.route == Route::BinModel
            && self.zero_bins as f64 / self.bin_count as f64 > self.config.zero_bin_threshold
        {
            self.route = Route::CumulativeModel;
            self.rerouted = true;
        }
        if let Some(z) = cumulative_observation(self.cum_volume, c_hat.max(f64::MIN_POSITIVE))? {
            self.last_cumulative = Some((z, omega_sq));
        }
        Ok(())
    }

    /// Bin estimates after the intraday Grubbs filter.
    pub fn filtered_estimates(&self) -> Vec<f64> {
        stats::grubbs_filter_capped(&self.bin_estimates, self.config.grubbs_alpha, INTRADAY_GRUBBS_CAP).kept
    }

    pub fn posterior(&self) -> GaussianPosterior {
        match self.route {
            Route::BinModel => {
                let obs = self.filtered_estimates();
                let n = obs.len();
                if n == 0 {
                    self.prior
                } else if n < self.config.min_bins_for_variance {
                    let k0 = self.config.kappa0();
                    GaussianPosterior {
                        mu_p: update_unknown_variance(self.prior.mu_p, k0, &obs),
                        sigma_p_sq: self.prior.sigma_p_sq * k0 / (k0 + n as f64),
                    }
                } else {
                    update_known_variance(self.prior, &obs, stats::population_variance(&obs))
                }
            }
            Route::CumulativeModel => match self.last_cumulative {
                Some((z, omega_sq)) => update_cumulative(self.prior, z, omega_sq),
                None => self.prior,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn gp(mu: f64, var: f64) -> GaussianPosterior {
        GaussianPosterior { mu_p: mu, sigma_p_sq: var }
    }

    #[test]
    fn bin_observation_examples() {
        assert!((bin_observation(10_000.0, 0.01).unwrap().unwrap() - 1e6f64.ln()).abs() < 1e-12);
        assert_eq!(bin_observation(0.0, 0.01).unwrap(), None);
        assert!(bin_observation(1.0, 0.0).is_err());
        let v = 3.3e6;
        assert!((bin_observation(0.037 * v, 0.037).unwrap().unwrap() - v.ln()).abs() < 1e-12);
    }

    #[test]
    fn unknown_variance_examples() {
        assert_eq!(update_unknown_variance(10.0, 10.0, &[]), 10.0);
        assert!((update_unknown_variance(10.0, 10.0, &[12.0; 10]) - 11.0).abs() < 1e-12);
        assert_eq!(IntradayConfig::default().kappa0(), 10.0);
    }

    #[test]
    fn known_variance_examples() {
        let p = update_known_variance(gp(10.0, 1.0), &[11.0, 13.0, 12.0, 12.0], 4.0);
        assert!((p.mu_p - 11.0).abs() < 1e-12);
        assert!((p.sigma_p_sq - 0.5).abs() < 1e-12);
        let wide = update_known_variance(gp(10.0, 1e12), &[12.0; 4], 1.0);
        assert!((wide.mu_p - 12.0).abs() < 1e-9);
    }

    #[test]
    fn known_variance_matches_grid() {
        let obs = [11.0, 13.0, 12.0, 12.0];
        let p = update_known_variance(gp(10.0, 1.0), &obs, 4.0);
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        let h = 1e-3;
        let mut mu = 5.0;
        while mu < 17.0 {
            let lp = -(mu - 10.0f64).powi(2) / 2.0 + normal_log_likelihood(&obs, mu, 0.25);
            let d = lp.exp();
            w += d;
            m1 += d * mu;
            m2 += d * mu * mu;
            mu += h;
        }
        let mean = m1 / w;
        let var = m2 / w - mean * mean;
        assert!((mean - p.mu_p).abs() < 1e-6);
        assert!((var - p.sigma_p_sq).abs() < 1e-6);
    }

    #[test]
    fn normal_gamma_examples() {
        let prior = NormalGammaParams::new(2.0, 1.0, 3.0, 1.5).unwrap();
        assert_eq!(normal_gamma_update(&prior, &[]), prior);
        let post = normal_gamma_update(&prior, &[4.0]);
        assert!((post.mu - 3.0).abs() < 1e-12);
        assert_eq!(post.kappa, 2.0);
        assert_eq!(post.alpha, 3.5);
        assert!((post.beta - (1.5 + 4.0 / 4.0)).abs() < 1e-12);
        assert!(NormalGammaParams::new(0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn normal_gamma_density_proportional_to_bayes() {
        let prior = NormalGammaParams::new(0.5, 2.0, 2.5, 1.2).unwrap();
        let obs = [0.9, 1.4, 0.2, 1.1];
        let post = normal_gamma_update(&prior, &obs);
        let offset = |mu: f64, lam: f64| {
            post.log_density(mu, lam) - prior.log_density(mu, lam) - normal_log_likelihood(&obs, mu, lam)
        };
        let base = offset(0.0, 1.0);
        for &mu in &[-1.0, 0.3, 0.8, 2.0] {
            for &lam in &[0.1, 0.7, 3.0, 9.0] {
                assert!((offset(mu, lam) - base).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn marginal_is_student_t() {
        use statrs::distribution::ContinuousCDF;
        let p = NormalGammaParams::new(1.0, 4.0, 3.0, 2.0).unwrap();
        let t = p.marginal().unwrap();
        assert!((t.cdf(1.0) - 0.5).abs() < 1e-12);
        assert!((p.marginal_variance() - 2.0 / (4.0 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn cumulative_examples() {
        assert!((cumulative_observation(40_000.0, 0.04).unwrap().unwrap() - 1e6f64.ln()).abs() < 1e-12);
        assert_eq!(cumulative_observation(0.0, 0.04).unwrap(), None);
        let tight = update_cumulative(gp(10.0, 0.2), 12.0, 1e-12);
        assert!((tight.mu_p - 12.0).abs() < 1e-3);
        let loose = update_cumulative(gp(10.0, 0.2), 12.0, 1e12);
        assert!((loose.mu_p - 10.0).abs() < 1e-9);
        let mid = update_cumulative(gp(10.0, 0.2), 12.0, 0.2);
        assert!((mid.mu_p - 11.0).abs() < 1e-12);
    }

    fn day(i: usize, volumes: Vec<f64>) -> BinSeries {
        BinSeries::new(NaiveDate::from_ymd_opt(2017, 1, 2).unwrap() + chrono::Duration::days(i as i64), volumes)
    }

    #[test]
    fn dispersion_profile_noiseless_is_zero() {
        let curve = Curve::uniform(10);
        let hist: Vec<BinSeries> = (0..30).map(|i| day(i, vec![100.0 * (1 + i) as f64; 10])).collect();
        let omega = dispersion_profile(&hist, &curve).unwrap();
        assert!(omega.iter().all(|w| w.abs() < 1e-20));
        assert!(dispersion_profile(&hist[..5], &curve).is_err());
    }

    #[test]
    fn dispersion_profile_shrinks_with_noise_schedule() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let curve = Curve::uniform(10);
        let hist: Vec<BinSeries> = (0..400)
            .map(|i| {
                let vols = (0..10)
                    .map(|j| {
                        let sd = 0.6 / (1.0 + j as f64);
                        100.0 * Normal::new(0.0, sd).unwrap().sample(&mut rng).exp()
                    })
                    .collect();
                day(i, vols)
            })
            .collect();
        let omega = dispersion_profile(&hist, &curve).unwrap();
        assert!(omega.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{omega:?}");
        assert!(omega[9] < 1e-20);
    }

    #[test]
    fn routing_rules() {
        let liquid: Vec<BinSeries> = (0..30).map(|i| day(i, vec![1.0; 20])).collect();
        assert_eq!(route_symbol(&liquid, 0.05), Route::BinModel);
        let thin: Vec<BinSeries> =
            (0..30).map(|i| day(i, (0..20).map(|j| if j % 10 < 3 { 0.0 } else { 1.0 }).collect())).collect();
        assert_eq!(route_symbol(&thin, 0.05), Route::CumulativeModel);
        let edge: Vec<BinSeries> =
            (0..30).map(|i| day(i, (0..20).map(|j| if j == 0 { 0.0 } else { 1.0 }).collect())).collect();
        assert_eq!(route_symbol(&edge, 0.05), Route::BinModel);
        assert_eq!(route_symbol(&liquid[..10], 0.05), Route::CumulativeModel);
    }

    #[test]
    fn state_reroutes_on_zero_bins() {
        let mut s = IntradayState::new(gp(10.0, 0.1), IntradayConfig::default(), Route::BinModel, 39);
        for _ in 0..2 {
            s.observe_bin(100.0, 0.02, 0.5, 0.01).unwrap();
        }
        s.observe_bin(0.0, 0.02, 0.5, 0.01).unwrap();
        assert_eq!(s.route, Route::BinModel);
        s.observe_bin(0.0, 0.02, 0.5, 0.01).unwrap();
        assert_eq!(s.route, Route::CumulativeModel);
        assert!(s.rerouted);
        assert_eq!(s.bin_estimates.len(), 2);
    }

    #[test]
    fn first_cumulative_print_deferred() {
        let mut s = IntradayState::new(gp(10.0, 0.1), IntradayConfig::default(), Route::CumulativeModel, 39);
        for _ in 0..6 {
            s.observe_bin(0.0, 0.02, 0.1, 0.01).unwrap();
            assert_eq!(s.posterior(), s.prior);
        }
        s.observe_bin(500.0, 0.02, 0.1, 0.01).unwrap();
        assert_ne!(s.posterior(), s.prior);
    }

    #[test]
    fn noiseless_evidence_same_under_both_routes() {
        let v = 2.0e6f64;
        let u = Curve::uniform(39);
        let prior = gp(v.ln(), 0.09);
        let mut a = IntradayState::new(prior, IntradayConfig::default(), Route::BinModel, 39);
        let mut b = IntradayState::new(prior, IntradayConfig::default(), Route::CumulativeModel, 39);
        for j in 0..39 {
            let vol = u.u_at(j) * v;
            a.observe_bin(vol, u.u_at(j), u.c_at(j + 1), 0.0).unwrap();
            b.observe_bin(vol, u.u_at(j), u.c_at(j + 1), 0.0).unwrap();
            assert!((a.posterior().mu_p - b.posterior().mu_p).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn updates_are_convex(mu0 in -5.0f64..20.0, var0 in 0.001f64..4.0,
                              obs in prop::collection::vec(-5.0f64..20.0, 1..30), s2 in 0.0f64..5.0) {
            let xbar = stats::mean(&obs);
            let (lo, hi) = (mu0.min(xbar) - 1e-9, mu0.max(xbar) + 1e-9);
            let k = update_known_variance(gp(mu0, var0), &obs, s2);
            prop_assert!(lo <= k.mu_p && k.mu_p <= hi);
            prop_assert!(k.sigma_p_sq <= var0);
            let var = s2.max(SAMPLE_VAR_FLOOR);
            let expected = obs.len() as f64 / var + 1.0 / var0;
            prop_assert!((1.0 / k.sigma_p_sq - expected).abs() <= 1e-9 * expected);
            let u = update_unknown_variance(mu0, 10.0, &obs);
            prop_assert!(lo <= u && u <= hi);
            let c = update_cumulative(gp(mu0, var0), xbar, s2);
            prop_assert!(lo <= c.mu_p && c.mu_p <= hi && c.sigma_p_sq <= var0);
        }

        #[test]
        fn precision_never_decreases(obs in prop::collection::vec(-5.0f64..5.0, 2..20)) {
            let mut prev = f64::INFINITY;
            for n in 1..=obs.len() {
                let p = update_known_variance(gp(0.0, 1.0), &obs[..n], 0.3);
                prop_assert!(p.sigma_p_sq <= prev);
                prev = p.sigma_p_sq;
            }
        }
    }
}
