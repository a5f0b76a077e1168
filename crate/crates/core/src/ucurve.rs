//! Intraday volume profile.
//!
//! A u-curve holds the fraction of the continuous-session volume traded in
//! each bin; its cumulative sum, the c-curve, reaches 1 at the close. The
//! base profile is the average c-curve over a long window. Functional
//! regression shifts it bin by bin on scalar predictors (overnight gap,
//! volume percentile).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{write_string, BinSeries};
use crate::stats;

pub const GAP_PREDICTOR: &str = "gap_ratio";
pub const VOLUME_PERCENTILE_PREDICTOR: &str = "volume_percentile";

pub const CURVE_TOL: f64 = 1e-9;
pub const MIN_CURVE_DAYS: usize = 20;
pub const MIN_REGRESSION_DAYS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    U,
    C,
}

/// A validated u- or c-curve over the session bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    kind: CurveKind,
    values: Vec<f64>,
}

impl Curve {
    pub fn from_c(values: Vec<f64>) -> Result<Self> {
        let ok = !values.is_empty()
            && values.iter().all(|v| v.is_finite() && *v >= 0.0)
            && values.windows(2).all(|w| w[1] >= w[0])
            && (values[values.len() - 1] - 1.0).abs() <= CURVE_TOL;
        if !ok {
            return Err(Error::InvalidArgument("not a valid c-curve".into()));
        }
        Ok(Self { kind: CurveKind::C, values })
    }

    pub fn from_u(values: Vec<f64>) -> Result<Self> {
        let ok = !values.is_empty()
            && values.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (values.iter().sum::<f64>() - 1.0).abs() <= CURVE_TOL;
        if !ok {
            return Err(Error::InvalidArgument("not a valid u-curve".into()));
        }
        Ok(Self { kind: CurveKind::U, values })
    }

    /// Uniform c-curve: `c(t) = (t + 1) / bins` at the end of bin t.
    pub fn uniform(bins: usize) -> Self {
        let n = bins as f64;
        Self { kind: CurveKind::C, values: (1..=bins).map(|t| t as f64 / n).collect() }
    }

    /// Cumulative fractions of a day's bins; `None` when the day has no volume.
    pub fn from_bins(bins: &BinSeries) -> Option<Self> {
        let total = bins.total();
        if !(total > 0.0) {
            return None;
        }
        let mut acc = 0.0;
        let values = bins
            .volumes
            .iter()
            .map(|v| {
                acc += v;
                acc / total
            })
            .collect();
        Some(Self { kind: CurveKind::C, values: repair(values) })
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_c(&self) -> Curve {
        match self.kind {
            CurveKind::C => self.clone(),
            CurveKind::U => {
                let mut acc = 0.0;
                let values = self
                    .values
                    .iter()
                    .map(|u| {
                        acc += u;
                        acc
                    })
                    .collect();
                Curve { kind: CurveKind::C, values: repair(values) }
            }
        }
    }

    pub fn to_u(&self) -> Curve {
        match self.kind {
            CurveKind::U => self.clone(),
            CurveKind::C => Curve { kind: CurveKind::U, values: differences(&self.values) },
        }
    }

    /// Cumulative fraction at session time point `t ∈ 0..=bins`
    /// (0 at the open, 1 at the close).
    pub fn c_at(&self, t: usize) -> f64 {
        let c = self.to_c();
        if t == 0 {
            0.0
        } else {
            c.values[(t - 1).min(c.values.len() - 1)]
        }
    }

    /// Fraction traded in bin `j`.
    pub fn u_at(&self, j: usize) -> f64 {
        match self.kind {
            CurveKind::U => self.values[j],
            CurveKind::C => self.values[j] - if j == 0 { 0.0 } else { self.values[j - 1] },
        }
    }
}

fn differences(c: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    c.iter()
        .map(|v| {
            let d = v - prev;
            prev = *v;
            d
        })
        .collect()
}

/// Monotone repair: clip to [0, 1], running maximum, renormalize by the
/// last value and pin it to exactly 1. A curve that clips to all zeros puts
/// the whole day in the last bin.
pub fn repair(mut values: Vec<f64>) -> Vec<f64> {
    let mut running = 0.0f64;
    for v in values.iter_mut() {
        let clipped = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        running = running.max(clipped);
        *v = running;
    }
    if let Some(&last) = values.last() {
        if last > 0.0 {
            for v in values.iter_mut() {
                *v = (*v / last).min(1.0);
            }
        }
        *values.last_mut().unwrap() = 1.0;
    }
    values
}

/// Days eligible for curve fitting: positive volume and at most half the bins empty.
pub fn usable_day(bins: &BinSeries) -> bool {
    bins.total() > 0.0 && 2 * bins.zero_bins() <= bins.volumes.len()
}

/// Pointwise mean of the day c-curves, repaired.
pub fn average_curve(curves: &[Curve]) -> Result<Curve> {
    let first = curves.first().ok_or(Error::EmptyInput)?;
    let n = first.len();
    let mut sum = vec![0.0; n];
    for c in curves {
        let c = c.to_c();
        if c.len() != n {
            return Err(Error::LengthMismatch { left: c.len(), right: n });
        }
        for (s, v) in sum.iter_mut().zip(c.values()) {
            *s += v;
        }
    }
    let k = curves.len() as f64;
    Ok(Curve { kind: CurveKind::C, values: repair(sum.into_iter().map(|s| s / k).collect()) })
}

/// Average c-curve over the usable days among the last `window` days.
pub fn historical_curve(bins: &[BinSeries], window: usize) -> Result<Curve> {
    let start = bins.len().saturating_sub(window);
    let curves: Vec<Curve> =
        bins[start..].iter().filter(|b| usable_day(b)).filter_map(Curve::from_bins).collect();
    if curves.len() < MIN_CURVE_DAYS {
        return Err(Error::InsufficientHistory { needed: MIN_CURVE_DAYS, got: curves.len() });
    }
    average_curve(&curves)
}

/// Bin-wise regression coefficients on standardized predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBetas {
    pub predictor_names: Vec<String>,
    /// Calibration-sample mean of each predictor.
    pub centers: Vec<f64>,
    /// Calibration-sample stdev of each predictor; 0 marks an unusable predictor.
    pub scales: Vec<f64>,
    /// Intercept curve: the average c-curve of the calibration sample.
    pub beta0: Vec<f64>,
    /// `betas[k][t]`, per unit of standardized predictor k.
    pub betas: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    pub n_days: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FunctionalBetas {
    /// No predictor effects over `bins` bins.
    pub fn zeros(names: &[&str], bins: usize) -> Self {
        let k = names.len();
        Self {
            predictor_names: names.iter().map(|s| s.to_string()).collect(),
            centers: vec![0.0; k],
            scales: vec![0.0; k],
            beta0: Curve::uniform(bins).values,
            betas: vec![vec![0.0; bins]; k],
            std_errors: vec![vec![0.0; bins]; k],
            n_days: 0,
            warnings: Vec::new(),
        }
    }

    pub fn bins(&self) -> usize {
        self.beta0.len()
    }

    /// Coefficients per raw predictor unit.
    pub fn raw_unit_betas(&self) -> Vec<Vec<f64>> {
        self.betas
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| b.iter().map(|v| if *s > 0.0 { v / s } else { 0.0 }).collect())
            .collect()
    }

    /// Centred moving average (window 3) over bins.
    pub fn smoothed(&self) -> Self {
        let smooth = |v: &Vec<f64>| -> Vec<f64> {
            (0..v.len())
                .map(|t| {
                    let lo = t.saturating_sub(1);
                    let hi = (t + 1).min(v.len() - 1);
                    v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect()
        };
        Self { betas: self.betas.iter().map(smooth).collect(), ..self.clone() }
    }

    /// Shift at each bin for raw predictor values `x`.
    fn shift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bins()];
        for (k, b) in self.betas.iter().enumerate() {
            let s = self.scales[k];
            if !(s > 0.0) {
                continue;
            }
            let z = (x[k] - self.centers[k]) / s;
            for (o, bt) in out.iter_mut().zip(b) {
                *o += bt * z;
            }
        }
        out
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.predictor_names.iter().position(|n| n == name)
    }
}

/// Per-bin least squares `c_i(t) = β₀(t) + Σ β_k(t) z_{k,i}` with `z` the
/// standardized predictors.
pub fn fit_functional_regression(
    curves: &[Curve],
    predictors: &[Vec<f64>],
    names: &[&str],
) -> Result<FunctionalBetas> {
    let n = curves.len();
    if n != predictors.len() {
        return Err(Error::LengthMismatch { left: n, right: predictors.len() });
    }
    if n < MIN_REGRESSION_DAYS {
        return Err(Error::InsufficientHistory { needed: MIN_REGRESSION_DAYS, got: n });
    }
    let k = names.len();
    if let Some(row) = predictors.iter().find(|r| r.len() != k) {
        return Err(Error::LengthMismatch { left: row.len(), right: k });
    }
    let bins = curves[0].len();
    let cs: Vec<Curve> = curves.iter().map(Curve::to_c).collect();
    if let Some(c) = cs.iter().find(|c| c.len() != bins) {
        return Err(Error::LengthMismatch { left: c.len(), right: bins });
    }

    let mut warnings = Vec::new();
    let mut centers = vec![0.0; k];
    let mut scales = vec![0.0; k];
    for j in 0..k {
        let col: Vec<f64> = predictors.iter().map(|r| r[j]).collect();
        centers[j] = stats::mean(&col);
        scales[j] = stats::sample_variance(&col).sqrt();
        if !(scales[j] > 0.0) || !scales[j].is_finite() {
            scales[j] = 0.0;
            warnings.push(format!("predictor {} is constant; betas set to 0", names[j]));
        }
    }
    let active: Vec<usize> = (0..k).filter(|&j| scales[j] > 0.0).collect();
    let design: Vec<Vec<f64>> = predictors
        .iter()
        .map(|r| {
            std::iter::once(1.0)
                .chain(active.iter().map(|&j| (r[j] - centers[j]) / scales[j]))
                .collect()
        })
        .collect();

    let mut beta0 = vec![0.0; bins];
    let mut betas = vec![vec![0.0; bins]; k];
    let mut std_errors = vec![vec![0.0; bins]; k];
    for t in 0..bins {
        let y: Vec<f64> = cs.iter().map(|c| c.values[t]).collect();
        match stats::ols(&y, &design) {
            Ok(fit) => {
                beta0[t] = fit.coef[0];
                for (slot, &j) in active.iter().enumerate() {
                    betas[j][t] = fit.coef[slot + 1];
                    std_errors[j][t] = fit.std_errors[slot + 1];
                }
            }
            Err(Error::RankDeficient) => {
                beta0[t] = stats::mean(&y);
                warnings.push(format!("bin {t}: rank-deficient design; betas set to 0"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FunctionalBetas {
        predictor_names: names.iter().map(|s| s.to_string()).collect(),
        centers,
        scales,
        beta0,
        betas,
        std_errors,
        n_days: n,
        warnings,
    })
}

/// `ĉ(t) = base(t) + Σ β_k(t)·z_k`, repaired to a valid c-curve.
pub fn predict_curve(base: &Curve, betas: &FunctionalBetas, today: &[f64]) -> Result<Curve> {
    if today.len() != betas.predictor_names.len() {
        return Err(Error::LengthMismatch { left: today.len(), right: betas.predictor_names.len() });
    }
    let base = base.to_c();
    if base.len() != betas.bins() {
        return Err(Error::LengthMismatch { left: base.len(), right: betas.bins() });
    }
    let shift = betas.shift(today);
    let values = base.values.iter().zip(&shift).map(|(b, s)| b + s).collect();
    Ok(Curve { kind: CurveKind::C, values: repair(values) })
}

/// [`predict_curve`] with the volume-percentile predictor replaced by
/// `percentile` (no-op on fits without that predictor).
pub fn update_curve_for_volume(
    base: &Curve,
    betas: &FunctionalBetas,
    today: &[f64],
    percentile: f64,
) -> Result<Curve> {
    if !(0.0..=1.0).contains(&percentile) {
        return Err(Error::InvalidArgument(format!("percentile {percentile} outside [0, 1]")));
    }
    let mut x = today.to_vec();
    if let Some(i) = betas.index_of(VOLUME_PERCENTILE_PREDICTOR) {
        if i < x.len() {
            x[i] = percentile;
        }
    }
    predict_curve(base, betas, &x)
}

/// CSV `bin_index,c_value,u_value`.
pub fn curve_csv(curve: &Curve) -> String {
    let c = curve.to_c();
    let u = curve.to_u();
    let mut s = String::from("bin_index,c_value,u_value\n");
    for (i, (cv, uv)) in c.values().iter().zip(u.values()).enumerate() {
        let _ = writeln!(s, "{i},{cv},{uv}");
    }
    s
}

pub fn write_curve_csv(path: &Path, curve: &Curve) -> Result<()> {
    write_string(path, &curve_csv(curve))
}
