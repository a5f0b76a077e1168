//! Input data: daily records, binned intraday volumes, and the per-day
//! features derived from them (overnight gap, volume percentile).
//!
//! Days file: `symbol,date,open,close,total_volume,auction_volume,flags`
//! with `flags` a `|`-separated subset of `earnings`, `optexp`, `rebalance`.
//! Bins file: `symbol,date,bin_start,volume` with `bin_start` as `HH:MM`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

pub const DAYS_HEADER: [&str; 7] =
    ["symbol", "date", "open", "close", "total_volume", "auction_volume", "flags"];
pub const BINS_HEADER: [&str; 4] = ["symbol", "date", "bin_start", "volume"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayFlags {
    pub earnings: bool,
    pub option_expiry: bool,
    pub index_rebalance: bool,
}

impl DayFlags {
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let mut flags = DayFlags::default();
        for tok in s.split('|').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "earnings" => flags.earnings = true,
                "optexp" => flags.option_expiry = true,
                "rebalance" => flags.index_rebalance = true,
                other => return Err(format!("unknown flag '{other}'")),
            }
        }
        Ok(flags)
    }

    pub fn is_empty(&self) -> bool {
        !(self.earnings || self.option_expiry || self.index_rebalance)
    }
}

impl std::fmt::Display for DayFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names = [
            (self.earnings, "earnings"),
            (self.option_expiry, "optexp"),
            (self.index_rebalance, "rebalance"),
        ];
        let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
        f.write_str(&on.join("|"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub open_price: f64,
    pub close_price: f64,
    pub total_volume: f64,
    pub auction_volume: f64,
    pub flags: DayFlags,
}

impl DayRecord {
    /// Continuous-session volume, given whether `total_volume` includes the auction.
    pub fn continuous_volume(&self, total_includes_auction: bool) -> f64 {
        if total_includes_auction {
            self.total_volume - self.auction_volume
        } else {
            self.total_volume
        }
    }
}

/// Regular session split into equal bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinGrid {
    pub session_open: NaiveTime,
    pub session_close: NaiveTime,
    pub bin_minutes: u32,
}

impl Default for BinGrid {
    fn default() -> Self {
        Self {
            session_open: NaiveTime::from_hms_opt(9, 30, 0).unwrap(),
            session_close: NaiveTime::from_hms_opt(16, 0, 0).unwrap(),
            bin_minutes: 10,
        }
    }
}

impl BinGrid {
    pub fn new(session_open: NaiveTime, session_close: NaiveTime, bin_minutes: u32) -> Result<Self> {
        if bin_minutes == 0 {
            return Err(Error::Config("bin_minutes must be positive".into()));
        }
        if session_close <= session_open {
            return Err(Error::Config("session close must follow open".into()));
        }
        let len = (session_close - session_open).num_minutes();
        if len % i64::from(bin_minutes) != 0 {
            return Err(Error::Config(format!(
                "{bin_minutes}-minute bins do not divide a {len}-minute session"
            )));
        }
        Ok(Self { session_open, session_close, bin_minutes })
    }

    /// Parse `HH:MM-HH:MM`.
    pub fn from_session(session: &str, bin_minutes: u32) -> Result<Self> {
        let (a, b) = session
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("bad session '{session}'")))?;
        let parse = |s: &str| {
            NaiveTime::parse_from_str(s.trim(), "%H:%M")
                .map_err(|_| Error::Config(format!("bad session time '{s}'")))
        };
        Self::new(parse(a)?, parse(b)?, bin_minutes)
    }

    pub fn bin_count(&self) -> usize {
        ((self.session_close - self.session_open).num_minutes() / i64::from(self.bin_minutes)) as usize
    }

    pub fn bin_start(&self, index: usize) -> NaiveTime {
        self.session_open + chrono::Duration::minutes(index as i64 * i64::from(self.bin_minutes))
    }

    pub fn session_string(&self) -> String {
        format!("{}-{}", self.session_open.format("%H:%M"), self.session_close.format("%H:%M"))
    }

    fn index_of(&self, time: NaiveTime, line: u64, raw: &str) -> Result<usize> {
        if time < self.session_open || time >= self.session_close {
            return Err(Error::OutsideSession { line, time: raw.to_string() });
        }
        let offset = (time - self.session_open).num_minutes();
        if time.second() != 0 || offset % i64::from(self.bin_minutes) != 0 {
            return Err(Error::OffGrid { line, time: raw.to_string(), minutes: self.bin_minutes });
        }
        Ok((offset / i64::from(self.bin_minutes)) as usize)
    }
}

/// Continuous-session volumes for one day on a [`BinGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSeries {
    pub date: NaiveDate,
    pub volumes: Vec<f64>,
    /// Bins absent from the input and zero-filled.
    pub filled: usize,
}

impl BinSeries {
    pub fn new(date: NaiveDate, volumes: Vec<f64>) -> Self {
        Self { date, volumes, filled: 0 }
    }

    pub fn total(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn zero_bins(&self) -> usize {
        self.volumes.iter().filter(|v| **v == 0.0).count()
    }
}

/// Overnight gap scaled by trailing daily volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapObservation {
    pub raw_gap: f64,
    pub vol20: f64,
    pub gap_ratio: f64,
    /// Fewer than 20 returns were available for the volatility.
    pub short_window: bool,
}

pub type DaysBySymbol = BTreeMap<String, Vec<DayRecord>>;
pub type BinsBySymbol = BTreeMap<String, Vec<BinSeries>>;

fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn check_header(path: &Path, rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| parse_err(path, 1, e.to_string()))?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_err(path, 1, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| parse_err(path, line, format!("bad {name} '{raw}'")))
}

fn parse_date(path: &Path, line: u64, raw: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d")
        .map_err(|_| parse_err(path, line, format!("bad date '{raw}'")))
}

pub fn load_days(path: &Path) -> Result<DaysBySymbol> {
    read_days(open_file(path)?, path)
}

/// Parse a days file; records come back sorted by date per symbol.
pub fn read_days(reader: impl Read, path: &Path) -> Result<DaysBySymbol> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(path, &mut rdr, &DAYS_HEADER)?;
    let mut out: BTreeMap<String, BTreeMap<NaiveDate, DayRecord>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != DAYS_HEADER.len() {
            return Err(parse_err(path, line, "wrong number of fields"));
        }
        let symbol = rec[0].to_string();
        let date = parse_date(path, line, &rec[1])?;
        let open_price: f64 = parse_field(path, line, "open", &rec[2])?;
        let close_price: f64 = parse_field(path, line, "close", &rec[3])?;
        let total_volume: f64 = parse_field(path, line, "total_volume", &rec[4])?;
        let auction_volume: f64 = parse_field(path, line, "auction_volume", &rec[5])?;
        let flags = DayFlags::parse(&rec[6]).map_err(|m| parse_err(path, line, m))?;
        if !(open_price > 0.0 && close_price > 0.0) {
            return Err(Error::NonPositivePrice { line });
        }
        if !(total_volume >= 0.0 && auction_volume >= 0.0) {
            return Err(parse_err(path, line, "negative volume"));
        }
        if auction_volume > total_volume {
            return Err(Error::AuctionExceedsTotal { line, auction: auction_volume, total: total_volume });
        }
        let day = DayRecord { date, open_price, close_price, total_volume, auction_volume, flags };
        let per_symbol = out.entry(symbol.clone()).or_default();
        if per_symbol.insert(date, day).is_some() {
            return Err(Error::DuplicateDate { symbol, date });
        }
    }
    Ok(out.into_iter().map(|(s, days)| (s, days.into_values().collect())).collect())
}

pub fn load_bins(path: &Path, grid: &BinGrid) -> Result<BinsBySymbol> {
    read_bins(open_file(path)?, path, grid)
}

/// Per-bin volumes and whether each bin was present in the file.
type PartialDay = (Vec<f64>, Vec<bool>);

/// Parse a bins file onto `grid`. Missing bins are zero-filled and counted;
/// repeated rows for the same bin are summed.
pub fn read_bins(reader: impl Read, path: &Path, grid: &BinGrid) -> Result<BinsBySymbol> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(path, &mut rdr, &BINS_HEADER)?;
    let n = grid.bin_count();
    let mut acc: BTreeMap<String, BTreeMap<NaiveDate, PartialDay>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != BINS_HEADER.len() {
            return Err(parse_err(path, line, "wrong number of fields"));
        }
        let date = parse_date(path, line, &rec[1])?;
        let time = NaiveTime::parse_from_str(rec[2].trim(), "%H:%M")
            .map_err(|_| parse_err(path, line, format!("bad bin_start '{}'", &rec[2])))?;
        let idx = grid.index_of(time, line, &rec[2])?;
        let volume: f64 = parse_field(path, line, "volume", &rec[3])?;
        if !(volume >= 0.0) {
            return Err(parse_err(path, line, "negative volume"));
        }
        let (vols, seen) = acc
            .entry(rec[0].to_string())
            .or_default()
            .entry(date)
            .or_insert_with(|| (vec![0.0; n], vec![false; n]));
        vols[idx] += volume;
        seen[idx] = true;
    }
    Ok(acc
        .into_iter()
        .map(|(sym, days)| {
            let series = days
                .into_iter()
                .map(|(date, (volumes, seen))| BinSeries {
                    date,
                    volumes,
                    filled: seen.iter().filter(|s| !**s).count(),
                })
                .collect();
            (sym, series)
        })
        .collect())
}

pub fn write_days(path: &Path, days: &DaysBySymbol) -> Result<()> {
    let mut s = DAYS_HEADER.join(",");
    s.push('\n');
    for (sym, recs) in days {
        for d in recs {
            let _ = writeln!(
                s,
                "{sym},{},{},{},{},{},{}",
                d.date, d.open_price, d.close_price, d.total_volume, d.auction_volume, d.flags
            );
        }
    }
    write_string(path, &s)
}

pub fn write_bins(path: &Path, bins: &BinsBySymbol, grid: &BinGrid) -> Result<()> {
    let mut s = BINS_HEADER.join(",");
    s.push('\n');
    for (sym, series) in bins {
        for b in series {
            for (i, v) in b.volumes.iter().enumerate() {
                let _ = writeln!(s, "{sym},{},{},{v}", b.date, grid.bin_start(i).format("%H:%M"));
            }
        }
    }
    write_string(path, &s)
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One symbol's days joined with its bins.
#[derive(Debug, Clone)]
pub struct SymbolHistory {
    pub symbol: String,
    pub days: Vec<DayRecord>,
    pub bins: BTreeMap<NaiveDate, BinSeries>,
    /// Days whose bins plus auction fail to reconcile with the daily total.
    pub unreconciled: BTreeSet<NaiveDate>,
    pub total_includes_auction: bool,
}

impl SymbolHistory {
    pub fn join(
        symbol: impl Into<String>,
        days: Vec<DayRecord>,
        bins: Vec<BinSeries>,
        tolerance: f64,
        total_includes_auction: bool,
    ) -> Self {
        let bins: BTreeMap<NaiveDate, BinSeries> = bins.into_iter().map(|b| (b.date, b)).collect();
        let unreconciled = days
            .iter()
            .filter_map(|d| {
                let b = bins.get(&d.date)?;
                (!reconciles(d, b, tolerance, total_includes_auction)).then_some(d.date)
            })
            .collect();
        Self { symbol: symbol.into(), days, bins, unreconciled, total_includes_auction }
    }

    pub fn continuous_volume(&self, day: &DayRecord) -> f64 {
        day.continuous_volume(self.total_includes_auction)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.days.binary_search_by_key(&date, |d| d.date).ok()
    }
}

/// `|sum(bins) (+ auction) − total| / total ≤ tolerance`.
pub fn reconciles(day: &DayRecord, bins: &BinSeries, tolerance: f64, total_includes_auction: bool) -> bool {
    let mut sum = bins.total();
    if total_includes_auction {
        sum += day.auction_volume;
    }
    if day.total_volume == 0.0 {
        return sum == 0.0;
    }
    ((sum - day.total_volume) / day.total_volume).abs() <= tolerance
}

/// Gap of `today`'s open over `prev`'s close, scaled by the stdev of up to
/// 20 trailing close-to-close log returns. `history` ends with `prev`.
pub fn overnight_gap(prev: &DayRecord, today: &DayRecord, history: &[DayRecord]) -> Result<GapObservation> {
    if history.len() < 3 {
        return Err(Error::InsufficientHistory { needed: 3, got: history.len() });
    }
    let start = history.len().saturating_sub(21);
    let returns: Vec<f64> = history[start..]
        .windows(2)
        .map(|w| (w[1].close_price / w[0].close_price).ln())
        .collect();
    let vol20 = stats::sample_variance(&returns).sqrt();
    // Relative threshold: floating noise on identical returns is not volatility.
    let scale = returns.iter().map(|r| r.abs()).fold(0.0, f64::max);
    if !(vol20 > 1e-10 * scale) {
        return Err(Error::DegenerateVolatility);
    }
    let raw_gap = today.open_price / prev.close_price - 1.0;
    Ok(GapObservation { raw_gap, vol20, gap_ratio: raw_gap / vol20, short_window: returns.len() < 20 })
}

/// Share of `history` strictly below `current`.
pub fn volume_percentile(current: f64, history: &[f64]) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(history.iter().filter(|h| **h < current).count() as f64 / history.len() as f64)
}
