//! Shared fixtures for the engine benchmarks.

use intravol_core::harness::{self, CalibratedParams, RunConfig};
use intravol_core::synth::{generate, ScenarioSpec};
use intravol_core::{ExpiryCalendar, SymbolHistory};

/// A calibrated synthetic symbol ready for replay.
pub struct Fixture {
    pub history: SymbolHistory,
    pub params: CalibratedParams,
    pub config: RunConfig,
    pub calendar: ExpiryCalendar,
    pub excess: Vec<f64>,
}

pub fn fixture(n_days: usize) -> Fixture {
    let spec = ScenarioSpec { n_days, ..Default::default() };
    let data = generate(&spec).expect("scenario");
    let history = SymbolHistory::join(spec.symbol.clone(), data.days, data.bins, 0.005, true);
    let config = RunConfig::default();
    let calendar = ExpiryCalendar::default();
    let (params, _) = harness::calibrate_symbol(&history, &config, &calendar).expect("calibration");
    let logs: Vec<f64> = data.log_volumes.clone();
    let excess = intravol_core::prior::excess_series(&logs, config.prior_window, config.grubbs_alpha);
    Fixture { history, params, config, calendar, excess }
}
