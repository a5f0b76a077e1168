//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::{Datelike, NaiveDate};
use intravol_core::auction::{auction_allocation, fit_auction_seasonality, is_triple_witching, AuctionConfig};
use intravol_core::bayes::{
    normal_gamma_update, normal_log_likelihood, update_cumulative, update_known_variance, update_unknown_variance,
    IntradayConfig, NormalGammaParams, Route,
};
use intravol_core::forecast::{replay_day, DayContext};
use intravol_core::harness::{self, build_report, calibrate_symbol, curve_days, history_until, replay_symbol, RunConfig};
use intravol_core::prior::{calibrate_arma, ARMA_LOSS};
use intravol_core::stats::{self, LossSpec};
use intravol_core::synth::{generate, ScenarioSpec};
use intravol_core::ucurve::{self, Curve, FunctionalBetas, CURVE_TOL};
use intravol_core::{ExpiryCalendar, GaussianPosterior, SymbolHistory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn history(spec: &ScenarioSpec) -> SymbolHistory {
    let data = generate(spec).expect("scenario");
    SymbolHistory::join(spec.symbol.clone(), data.days, data.bins, 0.005, true)
}

/// Posterior mean and variance of a scalar parameter by trapezoid rule
/// over `log_density` evaluated on `[lo, hi]`.
fn grid_moments(lo: f64, hi: f64, points: usize, log_density: impl Fn(f64) -> f64) -> (f64, f64) {
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
    let lds: Vec<f64> = xs.iter().map(|x| log_density(*x)).collect();
    let peak = lds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut w, mut m1) = (0.0, 0.0);
    for (i, (x, ld)) in xs.iter().zip(&lds).enumerate() {
        let d = (ld - peak).exp() * if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        w += d;
        m1 += d * x;
    }
    let mean = m1 / w;
    let m2: f64 = xs
        .iter()
        .zip(&lds)
        .enumerate()
        .map(|(i, (x, ld))| (ld - peak).exp() * if i == 0 || i == points - 1 { 0.5 } else { 1.0 } * (x - mean).powi(2))
        .sum();
    (mean, m2 / w)
}

fn conjugacy_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let mu0: f64 = rng.random_range(10.0..18.0);
        let n = rng.random_range(1..12);
        let obs: Vec<f64> = (0..n).map(|_| mu0 + rng.random_range(-1.0..1.0)).collect();

        // Known observation variance.
        let prior = GaussianPosterior { mu_p: mu0, sigma_p_sq: rng.random_range(0.01..0.5) };
        let var = rng.random_range(0.01..1.0);
        let post = update_known_variance(prior, &obs, var);
        let sd = prior.sigma_p_sq.sqrt();
        let (m, v) = grid_moments(mu0 - 15.0 * sd, mu0 + 15.0 * sd, 20_001, |mu| {
            -(mu - mu0).powi(2) / (2.0 * prior.sigma_p_sq) + normal_log_likelihood(&obs, mu, 1.0 / var)
        });
        worst_mean = worst_mean.max(rel(post.mu_p, m));
        worst_var = worst_var.max(rel(post.sigma_p_sq, v));

        // Cumulative observation.
        let omega_sq = rng.random_range(0.001..0.5);
        let z = obs[0];
        let post = update_cumulative(prior, z, omega_sq);
        let (m, v) = grid_moments(mu0 - 15.0 * sd, mu0 + 15.0 * sd, 20_001, |mu| {
            -(mu - mu0).powi(2) / (2.0 * prior.sigma_p_sq) - (z - mu).powi(2) / (2.0 * omega_sq)
        });
        worst_mean = worst_mean.max(rel(post.mu_p, m));
        worst_var = worst_var.max(rel(post.sigma_p_sq, v));

        // Unknown variance: normal-gamma prior over (mean, precision).
        let ng = NormalGammaParams::new(mu0, rng.random_range(0.5..10.0), rng.random_range(3.0..6.0), rng.random_range(0.05..1.0))
            .unwrap();
        let post = normal_gamma_update(&ng, &obs);
        let mean_only = update_unknown_variance(mu0, ng.kappa, &obs);
        worst_mean = worst_mean.max(rel(mean_only, post.mu));
        let scale = post.marginal_scale();
        let (lo, hi) = (post.mu - 80.0 * scale, post.mu + 80.0 * scale);
        let lam_mode = (post.alpha / post.beta).ln();
        let (lam_pts, mu_pts) = (200usize, 3201usize);
        let (hl, hm) = (12.0 / (lam_pts - 1) as f64, (hi - lo) / (mu_pts - 1) as f64);
        let mut cells = Vec::with_capacity(lam_pts * mu_pts);
        for i in 0..lam_pts {
            let lam = (lam_mode - 8.0 + hl * i as f64).exp();
            for j in 0..mu_pts {
                let mu = lo + hm * j as f64;
                // Jacobian of the log-precision grid.
                let ld = ng.log_density(mu, lam) + normal_log_likelihood(&obs, mu, lam) + lam.ln();
                cells.push((mu, ld));
            }
        }
        let peak = cells.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        let (mut w, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (mu, ld) in &cells {
            let d = (ld - peak).exp();
            w += d;
            m1 += d * mu;
            m2 += d * (mu - post.mu).powi(2);
        }
        let m = m1 / w;
        let v = m2 / w - (m - post.mu).powi(2);
        worst_mean = worst_mean.max(rel(post.mu, m));
        worst_var = worst_var.max(rel(post.marginal_variance(), v));
    }
    let elapsed = start.elapsed();
    check(
        worst_mean <= 1e-6 && worst_var <= 1e-5 && elapsed < Duration::from_secs(10),
        format!("worst relative error mean {worst_mean:.2e}, variance {worst_var:.2e}; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn sum_of_squares_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let center: f64 = rng.random_range(-20.0..20.0);
        let xs: Vec<f64> = (0..n).map(|_| center + rng.random_range(-5.0..5.0)).collect();
        let mu = rng.random_range(-20.0..20.0);
        let direct = stats::sum_sq_about(&xs, mu);
        let split = stats::sum_sq_decomposed(&xs, mu);
        worst = worst.max(rel(split, direct));
    }
    check(worst <= 1e-10, format!("worst relative error {worst:.2e} over 1000 samples"))
}

fn ale_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ratio_ok = true;
    for spec in [LossSpec::default(), ARMA_LOSS] {
        for _ in 0..100 {
            let d: f64 = rng.random_range(1e-3..3.0);
            ratio_ok &= spec.point(d) / spec.point(-d) == 2.0;
        }
    }
    let mut worst_shift = 0.0f64;
    for _ in 0..100 {
        let truth: Vec<f64> = (0..50).map(|_| rng.random_range(10.0..18.0)).collect();
        let est: Vec<f64> = truth.iter().map(|t| t + rng.random_range(-1.0..1.0)).collect();
        let c = rng.random_range(-5.0..5.0);
        let shifted = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let base = stats::ale(&est, &truth, &LossSpec::default()).unwrap();
        let moved = stats::ale(&shifted(&est), &shifted(&truth), &LossSpec::default()).unwrap();
        worst_shift = worst_shift.max((base - moved).abs() / base.max(1.0));
    }
    let mut worst_ols = 0.0f64;
    for _ in 0..20 {
        let n = 200;
        let design: Vec<Vec<f64>> =
            (0..n).map(|_| vec![1.0, rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0)]).collect();
        let y: Vec<f64> = design.iter().map(|r| 0.5 + 0.3 * r[1] - 0.2 * r[2] + rng.random_range(-0.3..0.3)).collect();
        let fit = stats::ale_regression(&y, &design, &LossSpec::squared()).unwrap();
        let oracle = stats::ols(&y, &design).unwrap();
        for (a, b) in fit.iter().zip(&oracle.coef) {
            worst_ols = worst_ols.max((a - b).abs());
        }
    }
    check(
        ratio_ok && worst_shift <= 1e-12 && worst_ols <= 1e-8,
        format!("penalty ratio exactly 2: {ratio_ok}; translation {worst_shift:.2e}; vs OLS {worst_ols:.2e}"),
    )
}

fn arma_series(seed: u64, n: usize, phi: f64, theta: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.25).unwrap();
    let (mut y, mut e) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for t in 0..n + 200 {
        let eps = noise.sample(&mut rng);
        y = phi * y + eps + theta * e;
        e = eps;
        if t >= 200 {
            out.push(y);
        }
    }
    out
}

fn arma_recovery() -> Outcome {
    let start = Instant::now();
    let hits = (0..100u64)
        .filter(|seed| {
            let fit = calibrate_arma(&arma_series(1000 + seed, 2000, 0.7, -0.3), &ARMA_LOSS);
            (fit.params.phi - 0.7).abs() <= 0.1 && (fit.params.theta + 0.3).abs() <= 0.15
        })
        .count();
    let elapsed = start.elapsed();
    check(
        hits >= 90 && elapsed < Duration::from_secs(60),
        format!("{hits}/100 seeds within tolerance; {:.2}s", elapsed.as_secs_f64()),
    )
}

fn curve_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bins = 39;
    let mut failures = 0usize;
    let mut worst_sum = 0.0f64;
    for draw in 0..10_000 {
        let u: Vec<f64> = (0..bins)
            .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0f64).powi(3) })
            .collect();
        let base = Curve::from_u(if u.iter().sum::<f64>() > 0.0 { u } else { vec![1.0; bins] })
            .map(|c| c.to_c())
            .unwrap_or_else(|_| Curve::uniform(bins));
        let mut betas = FunctionalBetas::zeros(&["gap_ratio", "volume_percentile"], bins);
        betas.beta0 = base.values().to_vec();
        betas.scales = vec![rng.random_range(0.01..3.0), rng.random_range(0.01..3.0)];
        betas.centers = vec![rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0)];
        let magnitude = 10f64.powi(rng.random_range(-3..3));
        for row in betas.betas.iter_mut() {
            for b in row.iter_mut() {
                *b = magnitude * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let extreme = |rng: &mut ChaCha8Rng| match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(-1e6..1e6),
            2 => rng.random_range(-5.0..5.0),
            _ => f64::MAX.sqrt() * rng.random_range(-1.0..1.0),
        };
        let today = vec![extreme(&mut rng), extreme(&mut rng)];
        let curve = if draw % 2 == 0 {
            ucurve::predict_curve(&base, &betas, &today)
        } else {
            ucurve::update_curve_for_volume(&base, &betas, &today, rng.random_range(0.0..1.0))
        };
        let Ok(curve) = curve else {
            failures += 1;
            continue;
        };
        let c = curve.to_c();
        let vals = c.values();
        let monotone = vals.windows(2).all(|w| w[1] >= w[0]);
        let bounded = vals.iter().all(|v| (0.0..=1.0).contains(v));
        let sum: f64 = curve.to_u().values().iter().sum();
        worst_sum = worst_sum.max((sum - 1.0).abs());
        if !(monotone && bounded && *vals.last().unwrap() == 1.0 && (sum - 1.0).abs() <= CURVE_TOL) {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} invalid curves of 10000; worst |Σu − 1| {worst_sum:.2e}"))
}

fn functional_recovery() -> Outcome {
    let spec = ScenarioSpec {
        n_days: 530,
        curve_gap_beta: 0.05,
        curve_volume_beta: 0.0,
        seed: 6,
        ..Default::default()
    };
    let h = history(&spec);
    let cfg = RunConfig { curve_window: 530, ..Default::default() };
    let days = curve_days(&h, &cfg);
    let days = &days[days.len().saturating_sub(500)..];
    let curves: Vec<Curve> = days.iter().map(|d| d.curve.clone()).collect();
    let preds: Vec<Vec<f64>> = days.iter().map(|d| vec![d.gap, d.percentile]).collect();
    let fit = ucurve::fit_functional_regression(&curves, &preds, &["gap_ratio", "volume_percentile"]).unwrap();
    let raw = fit.raw_unit_betas();
    let last = (raw[0].len() - 1) as f64;
    let worst = raw[0]
        .iter()
        .enumerate()
        .map(|(t, b)| (b - 0.05 * (last - t as f64) / last).abs())
        .fold(0.0, f64::max);
    let early: f64 = raw[0][..5].iter().sum::<f64>() / 5.0;
    let late: f64 = raw[0][raw[0].len() - 5..].iter().sum::<f64>() / 5.0;
    check(
        days.len() == 500 && worst <= 0.01 && early > late,
        format!("{} days; worst pointwise error {worst:.4}; early {early:.4} > late {late:.4}", days.len()),
    )
}

fn replayed(spec: &ScenarioSpec, calib_days: usize, cfg: &RunConfig) -> Vec<harness::DayReplay> {
    let h = history(spec);
    let cal = ExpiryCalendar::default();
    let (params, _) = calibrate_symbol(&history_until(&h, h.days[calib_days - 1].date), cfg, &cal).unwrap();
    let (r, _) = replay_symbol(&h, &params, cfg, &cal, h.days[calib_days].date, h.days.last().unwrap().date).unwrap();
    r
}

fn bayesian_convergence() -> Outcome {
    let spec = ScenarioSpec { n_days: 450, bin_noise: 0.1, seed: 7, ..Default::default() };
    let r = replayed(&spec, 250, &RunConfig::default());
    let improved = r
        .iter()
        .filter(|d| (d.forecasts[39].total_log - d.true_log).abs() < (d.forecasts[5].total_log - d.true_log).abs())
        .count();
    let frac = improved as f64 / r.len() as f64;

    let noiseless = ScenarioSpec {
        n_days: 40,
        bin_noise: 0.0,
        curve_gap_beta: 0.0,
        curve_volume_beta: 0.0,
        seed: 8,
        ..Default::default()
    };
    let h = history(&noiseless);
    let bins = 39;
    let mut worst = 0.0f64;
    for day in &h.days {
        let series = &h.bins[&day.date].volumes;
        let truth = series.iter().sum::<f64>().ln();
        let ctx = |route| DayContext {
            prior: GaussianPosterior { mu_p: truth, sigma_p_sq: 0.04 },
            route,
            base_curve: noiseless.curve_shape.c_curve(bins),
            betas: FunctionalBetas::zeros(&["gap_ratio", "volume_percentile"], bins),
            predictors: vec![0.0, 0.0],
            volume_history: Vec::new(),
            omega_sq: vec![0.01; bins],
            auction: 0.0,
            intraday: IntradayConfig::default(),
            refresh_curve: false,
        };
        let a = replay_day(&ctx(Route::BinModel), series).unwrap();
        let b = replay_day(&ctx(Route::CumulativeModel), series).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x.total_log - y.total_log).abs());
        }
    }
    check(
        r.len() == 200 && frac >= 0.95 && worst <= 1e-12,
        format!("{improved}/{} days closer at 39 bins than at 5 ({:.1}%); noiseless route gap {worst:.1e}", r.len(), 100.0 * frac),
    )
}

fn ensemble_dominance() -> Outcome {
    let spec = ScenarioSpec { n_days: 350, seed: 9, ..Default::default() };
    let cfg = RunConfig::default();
    let r = replayed(&spec, 300, &cfg);
    let rep = build_report(&r, Vec::new(), &cfg.loss());
    let ale = |name: &str| rep.total_volume.iter().find(|m| m.model == name).unwrap().metrics.ale;
    let (q, a, g) = (ale("quintet"), ale("gm_arma"), ale("gm_only"));
    check(
        r.len() == 50 && q <= a && a <= g,
        format!("{} days; ALE quintet {q:.4} ≤ GM+ARMA {a:.4} ≤ GM-only {g:.4}", r.len()),
    )
}

fn auction_seasonality() -> Outcome {
    let spec = ScenarioSpec {
        n_days: 2000,
        sigma_log: 0.05,
        beta_gap: 0.0,
        auction_noise: 0.05,
        expiry_multiplier: 3.0,
        seed: 10,
        ..Default::default()
    };
    let data = generate(&spec).unwrap();
    let model = fit_auction_seasonality(&data.days, &ExpiryCalendar::default(), AuctionConfig::default()).unwrap();
    let eta = model.expiry_multiplier();
    let per_year_ok = (2010..=2030).all(|y| {
        let mut d = NaiveDate::from_ymd_opt(y, 1, 1).unwrap();
        let mut count = 0;
        while d.year() == y {
            count += is_triple_witching(d) as usize;
            d = d.succ_opt().unwrap();
        }
        count == 4
    });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let alloc_ok = (0..10_000).all(|_| {
        let order: f64 = 10f64.powf(rng.random_range(0.0..8.0));
        let pred: f64 = if rng.random_bool(0.1) { 0.0 } else { 10f64.powf(rng.random_range(0.0..8.0)) };
        auction_allocation(order, pred).unwrap() <= 0.12 * order
    });
    check(
        (eta - 3.0).abs() <= 0.15 && per_year_ok && alloc_ok,
        format!(
            "multiplier {eta:.4} from {} expiry days; 4 dates every year: {per_year_ok}; allocation ≤ 12%: {alloc_ok}",
            model.expiry_days
        ),
    )
}

fn gm_am_relation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for sigma in [0.1, 0.25, 0.5, 1.0] {
        let dist = rand_distr::LogNormal::new(14.0, sigma).unwrap();
        let sample: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
        let ratio = stats::arithmetic_mean(&sample).unwrap() / stats::geometric_mean(&sample).unwrap();
        worst = worst.max(rel(ratio, (sigma * sigma / 2.0f64).exp()));
    }
    check(worst <= 0.05, format!("worst relative deviation {:.2}%", 100.0 * worst))
}

fn no_lookahead() -> Outcome {
    let spec = ScenarioSpec { n_days: 260, seed: 13, ..Default::default() };
    let clean = history(&spec);
    let cfg = RunConfig::default();
    let cal = ExpiryCalendar::default();
    let split = 230;
    let (params, _) = calibrate_symbol(&history_until(&clean, clean.days[split - 1].date), &cfg, &cal).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut compared = 0usize;
    for offset in [0usize, 7, 29] {
        let target = clean.days[split + offset].date;
        for n in [0usize, 1, 5, 6, 20, 38, 39] {
            let mut dirty = clean.clone();
            let i = dirty.index_of(target).unwrap();
            for (k, day) in dirty.days.iter_mut().enumerate().skip(i) {
                if k > i {
                    day.open_price *= rng.random_range(0.5..2.0);
                    day.flags.earnings = rng.random_bool(0.5);
                }
                day.close_price *= rng.random_range(0.5..2.0);
                day.total_volume *= rng.random_range(0.1..10.0);
                day.auction_volume = day.total_volume * rng.random_range(0.0..0.5);
            }
            for (date, bins) in dirty.bins.range_mut(target..) {
                let from = if *date == target { n } else { 0 };
                for v in bins.volumes.iter_mut().skip(from) {
                    *v = (*v * rng.random_range(0.0..50.0)).round();
                }
            }
            let (a, _) = replay_symbol(&clean, &params, &cfg, &cal, target, target).unwrap();
            let (b, _) = replay_symbol(&dirty, &params, &cfg, &cal, target, target).unwrap();
            if a.len() != 1 || b.len() != 1 {
                return Err(format!("{target} not replayed"));
            }
            let bytes = |r: &[harness::DayReplay]| serde_json::to_string(&r[0].forecasts[..=n]).unwrap();
            if bytes(&a) != bytes(&b) {
                return Err(format!("forecast at or before bin {n} changed on {target}"));
            }
            compared += n + 1;
        }
    }
    check(true, format!("{compared} forecasts byte-identical under corruption of later data"))
}

fn run_bundled(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let scenario = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/bundled.toml");
    let spec = harness::cmd_synth(&scenario, dir, None).unwrap();
    let cfg = RunConfig::default();
    let (days, bins, params) = (dir.join("days.csv"), dir.join("bins.csv"), dir.join("params"));
    let last = spec.start_date + chrono::Days::new(2 * spec.n_days as u64);
    let until = NaiveDate::from_ymd_opt(2016, 6, 30).unwrap();
    harness::cmd_calibrate(&days, &bins, &params, Some(until), &cfg).unwrap();
    harness::cmd_replay(
        &params,
        &days,
        &bins,
        until.succ_opt().unwrap(),
        last,
        &dir.join("report.txt"),
        Some(&dir.join("forecasts.jsonl")),
        &cfg,
    )
    .unwrap();
    let mut files = Vec::new();
    for name in ["days.csv", "bins.csv", "truth.json", "params/SYN.params.json", "report.txt", "forecasts.jsonl"] {
        files.push((PathBuf::from(name), std::fs::read(dir.join(name)).unwrap()));
    }
    files
}

fn end_to_end_determinism() -> Outcome {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = run_bundled(a.path());
    let second = run_bundled(b.path());
    let elapsed = start.elapsed();
    let differing: Vec<String> =
        first.iter().zip(&second).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.display().to_string()).collect();
    let bytes: usize = first.iter().map(|f| f.1.len()).sum();
    check(
        differing.is_empty() && elapsed < Duration::from_secs(120),
        format!("{} files, {bytes} bytes, differing {differing:?}; two runs in {:.2}s", first.len(), elapsed.as_secs_f64()),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("conjugate posteriors match grid integration", conjugacy_oracle),
        ("sum-of-squares decomposition identity", sum_of_squares_identity),
        ("asymmetric log error properties", ale_properties),
        ("ARMA(1,1) parameter recovery", arma_recovery),
        ("curve validity under adversarial predictors", curve_validity),
        ("functional regression recovery", functional_recovery),
        ("Bayesian convergence and route agreement", bayesian_convergence),
        ("ensemble dominance out of sample", ensemble_dominance),
        ("auction seasonality, calendar and allocation", auction_seasonality),
        ("geometric and arithmetic mean relation", gm_am_relation),
        ("no-lookahead canary", no_lookahead),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
