//! Shared statistical primitives: geometric mean, log-normal diagnostics,
//! the Grubbs outlier filter, the asymmetric logarithmic error (ALE) and
//! linear regression under that loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Weights and exponent of the asymmetric logarithmic error.
///
/// The error of a single estimate is `w(d) * |d|^exponent` with
/// `d = est - true` in log space, `w = over_weight` when `d > 0` and
/// `under_weight` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub over_weight: f64,
    pub under_weight: f64,
    pub exponent: u8,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { over_weight: 2.0, under_weight: 1.0, exponent: 1 }
    }
}

impl LossSpec {
    pub fn new(over_weight: f64, under_weight: f64, exponent: u8) -> Result<Self> {
        let spec = Self { over_weight, under_weight, exponent };
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric squared loss; ALE regression under it is ordinary least squares.
    pub fn squared() -> Self {
        Self { over_weight: 1.0, under_weight: 1.0, exponent: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.over_weight > 0.0 && self.under_weight > 0.0) {
            return Err(Error::InvalidArgument("loss weights must be positive".into()));
        }
        if self.exponent != 1 && self.exponent != 2 {
            return Err(Error::InvalidArgument("loss exponent must be 1 or 2".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, d: f64) -> f64 {
        if d > 0.0 {
            self.over_weight
        } else {
            self.under_weight
        }
    }

    /// Loss contribution of a single signed error `d = est - true`.
    #[inline]
    pub fn point(&self, d: f64) -> f64 {
        let a = d.abs();
        let p = if self.exponent == 2 { a * a } else { a };
        self.weight(d) * p
    }
}

/// Sample mean/stdev of log volumes with normal QQ points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    /// (theoretical standard-normal quantile, standardized sorted log value)
    pub qq_points: Vec<(f64, f64)>,
}

impl LogNormalFit {
    /// Pearson correlation of the QQ points; 1 for a perfect normal fit.
    pub fn qq_correlation(&self) -> f64 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self.qq_points.iter().copied().unzip();
        pearson(&xs, &ys)
    }

    pub fn median(&self) -> f64 {
        self.mu.exp()
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; 0 for fewer than two points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Variance with divisor n.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

fn check_positive(volumes: &[f64]) -> Result<()> {
    if volumes.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(&v) = volumes.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositive(v));
    }
    Ok(())
}

/// `exp(mean(ln v))`.
pub fn geometric_mean(volumes: &[f64]) -> Result<f64> {
    check_positive(volumes)?;
    Ok(mean(&volumes.iter().map(|v| v.ln()).collect::<Vec<_>>()).exp())
}

pub fn arithmetic_mean(volumes: &[f64]) -> Result<f64> {
    if volumes.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(mean(volumes))
}

pub fn lognormal_fit(volumes: &[f64]) -> Result<LogNormalFit> {
    check_positive(volumes)?;
    let n = volumes.len();
    if n < 3 {
        return Err(Error::InsufficientHistory { needed: 3, got: n });
    }
    let mut logs: Vec<f64> = volumes.iter().map(|v| v.ln()).collect();
    let mu = mean(&logs);
    let sigma = sample_variance(&logs).sqrt();
    logs.sort_by(f64::total_cmp);

    let normal = Normal::standard();
    let nf = n as f64;
    let qq_points = logs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            // Blom plotting positions.
            let p = (i as f64 + 1.0 - 0.375) / (nf + 0.25);
            let z = if sigma > 0.0 { (x - mu) / sigma } else { 0.0 };
            (normal.inverse_cdf(p), z)
        })
        .collect();
    Ok(LogNormalFit { mu, sigma, n, qq_points })
}

/// Result of [`grubbs_filter`]; `kept` preserves input order.
#[derive(Debug, Clone, PartialEq)]
pub struct GrubbsOutcome {
    pub kept: Vec<f64>,
    pub removed: Vec<f64>,
    /// True when the removal cap stopped the filter while the test still rejected.
    pub capped: bool,
}

pub const GRUBBS_MIN_N: usize = 7;

/// Two-sided Grubbs critical value for sample size `n`.
pub fn grubbs_critical(n: usize, alpha: f64) -> f64 {
    let nf = n as f64;
    let df = nf - 2.0;
    if df <= 0.0 {
        return f64::INFINITY;
    }
    let t = match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => dist.inverse_cdf(1.0 - alpha / (2.0 * nf)),
        Err(_) => return f64::INFINITY,
    };
    let t2 = t * t;
    (nf - 1.0) / nf.sqrt() * (t2 / (df + t2)).sqrt()
}

/// Iterative two-sided Grubbs filter, removing at most 10% of the sample.
pub fn grubbs_filter(values: &[f64], alpha: f64) -> GrubbsOutcome {
    grubbs_filter_capped(values, alpha, values.len() / 10)
}

/// [`grubbs_filter`] with an explicit removal cap.
pub fn grubbs_filter_capped(values: &[f64], alpha: f64, max_removed: usize) -> GrubbsOutcome {
    let mut kept = values.to_vec();
    let mut removed = Vec::new();
    let mut capped = false;
    if values.len() < GRUBBS_MIN_N {
        return GrubbsOutcome { kept, removed, capped };
    }
    loop {
        let n = kept.len();
        if n < GRUBBS_MIN_N {
            break;
        }
        let m = mean(&kept);
        let sd = sample_variance(&kept).sqrt();
        if !(sd > 0.0) {
            break;
        }
        let (idx, g) = kept
            .iter()
            .enumerate()
            .map(|(i, x)| (i, (x - m).abs() / sd))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if g <= grubbs_critical(n, alpha) {
            break;
        }
        if removed.len() >= max_removed {
            capped = true;
            break;
        }
        removed.push(kept.remove(idx));
    }
    GrubbsOutcome { kept, removed, capped }
}

/// Asymmetric logarithmic error, summed over observations.
pub fn ale(est_log: &[f64], true_log: &[f64], spec: &LossSpec) -> Result<f64> {
    if est_log.len() != true_log.len() {
        return Err(Error::LengthMismatch { left: est_log.len(), right: true_log.len() });
    }
    if est_log.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(est_log.iter().zip(true_log).map(|(e, t)| spec.point(e - t)).sum())
}

/// Comparison metrics for a set of log-space estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean ALE per observation, in log space.
    pub ale: f64,
    /// Root mean square error in shares.
    pub rmse: f64,
    /// Mean absolute percentage error as a fraction (1.0 = 100%).
    pub mape: f64,
    pub n: usize,
}

pub fn report_metrics(est_log: &[f64], true_log: &[f64], spec: &LossSpec) -> Result<Metrics> {
    let total = ale(est_log, true_log, spec)?;
    let n = est_log.len();
    let mut sq = 0.0;
    let mut ape = 0.0;
    for (e, t) in est_log.iter().zip(true_log) {
        let (ev, tv) = (e.exp(), t.exp());
        sq += (ev - tv) * (ev - tv);
        ape += (ev - tv).abs() / tv;
    }
    Ok(Metrics { ale: total / n as f64, rmse: (sq / n as f64).sqrt(), mape: ape / n as f64, n })
}

/// `Σ (x_i - μ)²` evaluated directly.
pub fn sum_sq_about(xs: &[f64], mu: f64) -> f64 {
    xs.iter().map(|x| (x - mu) * (x - mu)).sum()
}

/// `n Σ² + n (x̄ - μ)²` with `Σ²` the divisor-n sample variance.
pub fn sum_sq_decomposed(xs: &[f64], mu: f64) -> f64 {
    let n = xs.len() as f64;
    let xbar = mean(xs);
    n * population_variance(xs) + n * (xbar - mu) * (xbar - mu)
}

/// Ordinary least squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub rss: f64,
}

fn design_matrix(y: &[f64], design: &[Vec<f64>]) -> Result<(DMatrix<f64>, usize)> {
    if design.len() != y.len() {
        return Err(Error::LengthMismatch { left: design.len(), right: y.len() });
    }
    let k = design.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(row) = design.iter().find(|r| r.len() != k) {
        return Err(Error::LengthMismatch { left: row.len(), right: k });
    }
    Ok((DMatrix::from_fn(y.len(), k, |i, j| design[i][j]), k))
}

fn weighted_solve(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    let n = x.nrows();
    let sw: Vec<f64> = w.iter().map(|w| w.sqrt()).collect();
    let xw = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_fn(n, |i, _| y[i] * sw[i]);
    let svd = xw.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= smax * 1e-10 {
        return Err(Error::RankDeficient);
    }
    svd.solve(&yw, 0.0).map_err(|_| Error::RankDeficient)
}

/// Least squares with coefficient standard errors.
pub fn ols(y: &[f64], design: &[Vec<f64>]) -> Result<OlsFit> {
    let (x, k) = design_matrix(y, design)?;
    let n = y.len();
    if n < k {
        return Err(Error::RankDeficient);
    }
    let beta = weighted_solve(&x, y, &vec![1.0; n])?;
    let resid = DVector::from_column_slice(y) - &x * &beta;
    let rss = resid.norm_squared();
    let dof = n.saturating_sub(k);
    let s2 = if dof > 0 { rss / dof as f64 } else { f64::NAN };
    let xtx_inv = (x.transpose() * &x).try_inverse().ok_or(Error::RankDeficient)?;
    let std_errors = (0..k).map(|j| (s2 * xtx_inv[(j, j)]).max(0.0).sqrt()).collect();
    Ok(OlsFit { coef: beta.iter().copied().collect(), std_errors, rss })
}

const MAX_ITER: usize = 200;
const COEF_TOL: f64 = 1e-8;

/// Total loss of coefficients `beta` on `(y, x)`.
fn regression_loss(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, spec: &LossSpec) -> f64 {
    let fitted = x * beta;
    fitted.iter().zip(y).map(|(f, t)| spec.point(f - t)).sum()
}

/// Linear regression minimizing `Σ w(r)·|r|^p` with `r = fitted - y`.
///
/// p = 2 is solved by iteratively reweighted least squares (asymmetric
/// weights only change with the residual signs). p = 1 uses IRLS with
/// weights `w / |r|` from the OLS start, followed by a vertex polish that
/// interpolates the `k` best-fitting points.
pub fn ale_regression(y: &[f64], design: &[Vec<f64>], spec: &LossSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let (x, k) = design_matrix(y, design)?;
    let n = y.len();
    if n < k + 2 {
        return Err(Error::InsufficientHistory { needed: k + 2, got: n });
    }
    let mut beta = weighted_solve(&x, y, &vec![1.0; n])?;
    let symmetric = spec.over_weight == spec.under_weight;
    if spec.exponent == 2 && symmetric {
        return Ok(beta.iter().copied().collect());
    }

    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let floor = 1e-9 * scale;
    let mut converged = false;
    for _ in 0..MAX_ITER {
        let fitted = &x * &beta;
        let w: Vec<f64> = fitted
            .iter()
            .zip(y)
            .map(|(f, t)| {
                let r = f - t;
                let base = spec.weight(r);
                if spec.exponent == 2 {
                    base
                } else {
                    base / r.abs().max(floor)
                }
            })
            .collect();
        let next = weighted_solve(&x, y, &w)?;
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < COEF_TOL * (1.0 + beta.amax()) {
            converged = true;
            break;
        }
    }

    if spec.exponent == 1 {
        beta = polish_vertex(&x, y, beta, spec);
        // The L1 objective is flat near its optimum; IRLS stalling there is
        // not a failure once the vertex polish has run.
        converged = true;
    }
    if !converged {
        return Err(Error::NonConvergence(MAX_ITER));
    }
    Ok(beta.iter().copied().collect())
}

/// Move an approximate asymmetric-L1 solution onto the exact vertex through
/// its `k` smallest residuals, if that lowers the loss.
fn polish_vertex(x: &DMatrix<f64>, y: &[f64], beta: DVector<f64>, spec: &LossSpec) -> DVector<f64> {
    let k = x.ncols();
    let fitted = x * &beta;
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| (fitted[a] - y[a]).abs().total_cmp(&(fitted[b] - y[b]).abs()));
    let rows = &order[..k];
    let sub = DMatrix::from_fn(k, k, |i, j| x[(rows[i], j)]);
    let rhs = DVector::from_fn(k, |i, _| y[rows[i]]);
    let Some(candidate) = sub.lu().solve(&rhs) else {
        return beta;
    };
    if regression_loss(x, y, &candidate, spec) <= regression_loss(x, y, &beta, spec) {
        candidate
    } else {
        beta
    }
}
