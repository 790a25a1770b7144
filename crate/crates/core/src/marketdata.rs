//! Price, funding and exogenous time series: validation, CSV ingestion and
//! emission, inner-join alignment, trailing moving averages, and the
//! annualized futures-spot deviation.
//!
//! All timestamps are UTC. Gaps in a price series are kept as-is and
//! reported through [`MarketSeries::gaps`]; nothing is interpolated.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RowLocation};
use crate::time::{Timestamp, SECONDS_PER_HOUR};

/// Number of 8-hour funding periods in a year. The deviation is expressed
/// per year by scaling the per-period log gap with this factor.
pub const PERIODS_PER_YEAR: f64 = 1095.0;

/// Annualized deviation of the futures from the spot,
/// `1095 · (ln F − ln S)`.
pub fn deviation(futures_price: f64, spot_price: f64) -> Result<f64> {
    check_price(futures_price)?;
    check_price(spot_price)?;
    Ok(PERIODS_PER_YEAR * (futures_price.ln() - spot_price.ln()))
}

fn check_price(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositivePrice(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub timestamp: Timestamp,
    pub futures: f64,
    pub spot: f64,
}

impl Observation {
    pub fn new(timestamp: Timestamp, futures: f64, spot: f64) -> Self {
        Observation {
            timestamp,
            futures,
            spot,
        }
    }

    /// Annualized deviation at this observation. Prices are validated on
    /// construction of the owning series, so this cannot fail there.
    pub fn rho(&self) -> f64 {
        PERIODS_PER_YEAR * (self.futures.ln() - self.spot.ln())
    }

    pub fn gap(&self) -> f64 {
        self.futures - self.spot
    }
}

/// A stretch of missing observations: `missing` cadence steps are absent
/// between `after` and the next observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub after: Timestamp,
    pub missing: usize,
}

/// Optional tolerances applied while validating a price series.
#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Largest allowed spacing between consecutive observations, in
    /// seconds. `None` accepts any gap that is a whole number of steps.
    pub max_gap: Option<i64>,
}

/// Futures and spot prices of one asset observed at a fixed cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    asset_id: String,
    cadence: i64,
    observations: Vec<Observation>,
    gaps: Vec<Gap>,
}

impl MarketSeries {
    pub fn new(asset_id: impl Into<String>, cadence: i64, observations: Vec<Observation>) -> Result<Self> {
        Self::with_options(asset_id, cadence, observations, IngestOptions::default())
    }

    pub fn with_options(
        asset_id: impl Into<String>,
        cadence: i64,
        observations: Vec<Observation>,
        opts: IngestOptions,
    ) -> Result<Self> {
        let locs: Vec<RowLocation> = (1..=observations.len())
            .map(|row| RowLocation { row, line: None })
            .collect();
        Self::validated(asset_id.into(), cadence, observations, &locs, opts)
    }

    fn validated(
        asset_id: String,
        cadence: i64,
        observations: Vec<Observation>,
        locs: &[RowLocation],
        opts: IngestOptions,
    ) -> Result<Self> {
        if cadence <= 0 {
            return Err(Error::InvalidParameter(format!("cadence must be positive, got {cadence}")));
        }
        let mut gaps = Vec::new();
        for (i, obs) in observations.iter().enumerate() {
            let at = locs[i];
            for p in [obs.futures, obs.spot] {
                if !(p.is_finite() && p > 0.0) {
                    return Err(Error::MalformedRow {
                        at,
                        message: format!("price must be positive and finite, got {p}"),
                    });
                }
            }
            if obs.timestamp.0.rem_euclid(cadence) != 0 {
                return Err(Error::CadenceMismatch {
                    at,
                    message: format!("timestamp {} is not a multiple of the {cadence}s cadence", obs.timestamp),
                });
            }
            if i == 0 {
                continue;
            }
            let prev = observations[i - 1].timestamp;
            let step = obs.timestamp.0 - prev.0;
            if step == 0 {
                return Err(Error::DuplicateTimestamp {
                    at,
                    timestamp: obs.timestamp,
                });
            }
            if step < 0 {
                return Err(Error::OutOfOrder {
                    at,
                    timestamp: obs.timestamp,
                });
            }
            if let Some(max) = opts.max_gap {
                if step > max {
                    return Err(Error::CadenceMismatch {
                        at,
                        message: format!("gap of {step}s after {prev} exceeds tolerance of {max}s"),
                    });
                }
            }
            if step > cadence {
                gaps.push(Gap {
                    after: prev,
                    missing: (step / cadence - 1) as usize,
                });
            }
        }
        Ok(MarketSeries {
            asset_id,
            cadence,
            observations,
            gaps,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn cadence(&self) -> i64 {
        self.cadence
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn gaps(&self) -> &[Gap] {
        &self.gaps
    }

    pub fn has_gaps(&self) -> bool {
        !self.gaps.is_empty()
    }

    /// Total number of missing cadence steps.
    pub fn missing_count(&self) -> usize {
        self.gaps.iter().map(|g| g.missing).sum()
    }

    pub fn is_hourly(&self) -> bool {
        self.cadence == SECONDS_PER_HOUR
    }

    /// Index of the observation at exactly `t`.
    pub fn index_of(&self, t: Timestamp) -> Option<usize> {
        self.observations.binary_search_by_key(&t, |o| o.timestamp).ok()
    }

    /// Deviation series `(t, ρ_t)`.
    pub fn deviation_series(&self) -> Vec<(Timestamp, f64)> {
        self.observations.iter().map(|o| (o.timestamp, o.rho())).collect()
    }

    pub fn spot_series(&self) -> Vec<(Timestamp, f64)> {
        self.observations.iter().map(|o| (o.timestamp, o.spot)).collect()
    }

    /// Observations with timestamps in `[from, to)`, as a new series.
    pub fn slice(&self, from: Timestamp, to: Timestamp) -> MarketSeries {
        let lo = self.observations.partition_point(|o| o.timestamp < from);
        let hi = self.observations.partition_point(|o| o.timestamp < to);
        let observations = self.observations[lo..hi].to_vec();
        let gaps = self
            .gaps
            .iter()
            .filter(|g| g.after >= from && g.after < to)
            .filter(|g| observations.last().is_some_and(|o| o.timestamp > g.after))
            .copied()
            .collect();
        MarketSeries {
            asset_id: self.asset_id.clone(),
            cadence: self.cadence,
            observations,
            gaps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundingEvent {
    pub timestamp: Timestamp,
    /// Fraction of notional paid by longs to shorts for the 8-hour period.
    pub rate: f64,
}

/// Realized (or synthesized) funding rates at 00:00, 08:00 and 16:00 UTC.
#[derive(Debug, Clone, PartialEq)]
pub struct FundingSchedule {
    asset_id: String,
    events: Vec<FundingEvent>,
}

impl FundingSchedule {
    pub fn new(asset_id: impl Into<String>, events: Vec<FundingEvent>) -> Result<Self> {
        let locs: Vec<RowLocation> = (1..=events.len())
            .map(|row| RowLocation { row, line: None })
            .collect();
        Self::validated(asset_id.into(), events, &locs)
    }

    fn validated(asset_id: String, events: Vec<FundingEvent>, locs: &[RowLocation]) -> Result<Self> {
        for (i, ev) in events.iter().enumerate() {
            let at = locs[i];
            if !ev.rate.is_finite() {
                return Err(Error::MalformedRow {
                    at,
                    message: format!("funding rate must be finite, got {}", ev.rate),
                });
            }
            if !ev.timestamp.is_funding_time() {
                return Err(Error::OffScheduleFunding {
                    at,
                    timestamp: ev.timestamp,
                });
            }
            if i > 0 {
                let prev = events[i - 1].timestamp;
                if ev.timestamp == prev {
                    return Err(Error::DuplicateTimestamp {
                        at,
                        timestamp: ev.timestamp,
                    });
                }
                if ev.timestamp < prev {
                    return Err(Error::OutOfOrder {
                        at,
                        timestamp: ev.timestamp,
                    });
                }
            }
        }
        Ok(FundingSchedule { asset_id, events })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn events(&self) -> &[FundingEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn rate_at(&self, t: Timestamp) -> Option<f64> {
        self.events
            .binary_search_by_key(&t, |e| e.timestamp)
            .ok()
            .map(|i| self.events[i].rate)
    }
}

/// An externally supplied series such as a sentiment index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousSeries {
    name: String,
    observations: Vec<(Timestamp, f64)>,
}

impl ExogenousSeries {
    pub fn new(name: impl Into<String>, observations: Vec<(Timestamp, f64)>) -> Result<Self> {
        let locs: Vec<RowLocation> = (1..=observations.len())
            .map(|row| RowLocation { row, line: None })
            .collect();
        Self::validated(name.into(), observations, &locs)
    }

    fn validated(name: String, observations: Vec<(Timestamp, f64)>, locs: &[RowLocation]) -> Result<Self> {
        for (i, &(t, v)) in observations.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::MalformedRow {
                    at: locs[i],
                    message: format!("value must be finite, got {v}"),
                });
            }
            if i > 0 {
                let prev = observations[i - 1].0;
                if t == prev {
                    return Err(Error::DuplicateTimestamp { at: locs[i], timestamp: t });
                }
                if t < prev {
                    return Err(Error::OutOfOrder { at: locs[i], timestamp: t });
                }
            }
        }
        Ok(ExogenousSeries { name, observations })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn observations(&self) -> &[(Timestamp, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

// ---------------------------------------------------------------------------
// CSV ingestion and emission

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::MalformedRow {
            at: RowLocation { row: 0, line: Some(1) },
            message: format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, at: RowLocation) -> Result<T> {
    let raw = rec.get(idx).ok_or_else(|| Error::MalformedRow {
        at,
        message: format!("missing field `{name}`"),
    })?;
    raw.parse::<T>().map_err(|_| Error::MalformedRow {
        at,
        message: format!("cannot parse `{name}` from {raw:?}"),
    })
}

fn location(rec: &csv::StringRecord, row: usize) -> RowLocation {
    RowLocation {
        row,
        line: rec.position().map(|p| p.line()),
    }
}

/// Reads a `timestamp,futures_price,spot_price` CSV.
pub fn read_prices<R: Read>(reader: R, asset_id: &str, cadence: i64, opts: IngestOptions) -> Result<MarketSeries> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &["timestamp", "futures_price", "spot_price"])?;
    let mut obs = Vec::new();
    let mut locs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let at = location(&rec, i + 1);
        if rec.len() != 3 {
            return Err(Error::MalformedRow {
                at,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let timestamp: Timestamp = parse_field(&rec, 0, "timestamp", at)?;
        let futures: f64 = parse_field(&rec, 1, "futures_price", at)?;
        let spot: f64 = parse_field(&rec, 2, "spot_price", at)?;
        obs.push(Observation::new(timestamp, futures, spot));
        locs.push(at);
    }
    MarketSeries::validated(asset_id.to_string(), cadence, obs, &locs, opts)
}

pub fn ingest_prices(path: impl AsRef<Path>, asset_id: &str, cadence: i64) -> Result<MarketSeries> {
    ingest_prices_with(path, asset_id, cadence, IngestOptions::default())
}

pub fn ingest_prices_with(
    path: impl AsRef<Path>,
    asset_id: &str,
    cadence: i64,
    opts: IngestOptions,
) -> Result<MarketSeries> {
    let path = path.as_ref();
    read_prices(open(path)?, asset_id, cadence, opts)
}

/// Reads a `timestamp,funding_rate` CSV.
pub fn read_funding<R: Read>(reader: R, asset_id: &str) -> Result<FundingSchedule> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &["timestamp", "funding_rate"])?;
    let mut events = Vec::new();
    let mut locs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let at = location(&rec, i + 1);
        let timestamp: Timestamp = parse_field(&rec, 0, "timestamp", at)?;
        let rate: f64 = parse_field(&rec, 1, "funding_rate", at)?;
        events.push(FundingEvent { timestamp, rate });
        locs.push(at);
    }
    FundingSchedule::validated(asset_id.to_string(), events, &locs)
}

pub fn ingest_funding(path: impl AsRef<Path>, asset_id: &str) -> Result<FundingSchedule> {
    let path = path.as_ref();
    read_funding(open(path)?, asset_id)
}

/// Reads a `timestamp,value` CSV.
pub fn read_exogenous<R: Read>(reader: R, name: &str) -> Result<ExogenousSeries> {
    let mut rdr = csv_reader(reader);
    check_header(&mut rdr, &["timestamp", "value"])?;
    let mut obs = Vec::new();
    let mut locs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let at = location(&rec, i + 1);
        let t: Timestamp = parse_field(&rec, 0, "timestamp", at)?;
        let v: f64 = parse_field(&rec, 1, "value", at)?;
        obs.push((t, v));
        locs.push(at);
    }
    ExogenousSeries::validated(name.to_string(), obs, &locs)
}

pub fn ingest_exogenous(path: impl AsRef<Path>, name: &str) -> Result<ExogenousSeries> {
    let path = path.as_ref();
    read_exogenous(open(path)?, name)
}

// Floats are written with Rust's shortest round-trip representation, so
// re-reading an emitted file reproduces every value bit for bit.

pub fn write_prices<W: Write>(series: &MarketSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "futures_price", "spot_price"])?;
    for o in series.observations() {
        w.write_record([o.timestamp.to_string(), o.futures.to_string(), o.spot.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn write_funding<W: Write>(schedule: &FundingSchedule, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "funding_rate"])?;
    for e in schedule.events() {
        w.write_record([e.timestamp.to_string(), e.rate.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

pub fn write_exogenous<W: Write>(series: &ExogenousSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "value"])?;
    for (t, v) in series.observations() {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

// ---------------------------------------------------------------------------
// Moving averages and alignment

/// Trailing mean over `(t − window, t]` at every timestamp. Leading windows
/// use whatever observations are available.
pub fn moving_average(series: &[(Timestamp, f64)], window: i64) -> Result<Vec<(Timestamp, f64)>> {
    if window <= 0 {
        return Err(Error::InvalidParameter(format!("window must be positive, got {window}")));
    }
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut out = Vec::with_capacity(series.len());
    let mut lo = 0;
    for (hi, &(t, _)) in series.iter().enumerate() {
        while series[lo].0 .0 <= t.0 - window {
            lo += 1;
        }
        let win = &series[lo..=hi];
        let mean = win.iter().map(|&(_, v)| v).sum::<f64>() / win.len() as f64;
        out.push((t, mean));
    }
    Ok(out)
}

/// A named column of timestamped values.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub points: Vec<(Timestamp, f64)>,
}

impl Column {
    pub fn new(name: impl Into<String>, points: Vec<(Timestamp, f64)>) -> Self {
        Column {
            name: name.into(),
            points,
        }
    }
}

impl From<&ExogenousSeries> for Column {
    fn from(s: &ExogenousSeries) -> Self {
        Column::new(s.name(), s.observations().to_vec())
    }
}

/// Anything that can be joined on timestamps.
#[derive(Debug, Clone, Copy)]
pub enum SeriesRef<'a> {
    Market(&'a MarketSeries),
    Exogenous(&'a ExogenousSeries),
}

impl<'a> From<&'a MarketSeries> for SeriesRef<'a> {
    fn from(s: &'a MarketSeries) -> Self {
        SeriesRef::Market(s)
    }
}

impl<'a> From<&'a ExogenousSeries> for SeriesRef<'a> {
    fn from(s: &'a ExogenousSeries) -> Self {
        SeriesRef::Exogenous(s)
    }
}

impl SeriesRef<'_> {
    fn columns(&self) -> Vec<Column> {
        match self {
            SeriesRef::Market(m) => {
                let id = m.asset_id();
                vec![
                    Column::new(format!("{id}.futures"), m.observations().iter().map(|o| (o.timestamp, o.futures)).collect()),
                    Column::new(format!("{id}.spot"), m.observations().iter().map(|o| (o.timestamp, o.spot)).collect()),
                ]
            }
            SeriesRef::Exogenous(e) => vec![Column::from(*e)],
        }
    }
}

/// Rows common to every input, in timestamp order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTable {
    pub timestamps: Vec<Timestamp>,
    pub names: Vec<String>,
    /// `columns[j][i]` is the value of column `j` at `timestamps[i]`.
    pub columns: Vec<Vec<f64>>,
}

impl AlignedTable {
    pub fn n_rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.columns[j].as_slice())
    }
}

/// Inner join of market and exogenous series on timestamps.
pub fn align(series: &[SeriesRef<'_>]) -> Result<AlignedTable> {
    let cols: Vec<Column> = series.iter().flat_map(|s| s.columns()).collect();
    align_columns(&cols)
}

/// Inner join of arbitrary columns on timestamps.
pub fn align_columns(cols: &[Column]) -> Result<AlignedTable> {
    if cols.is_empty() {
        return Err(Error::InvalidParameter("nothing to align".into()));
    }
    let mut common: Vec<Timestamp> = sorted_unique(&cols[0].points);
    for c in &cols[1..] {
        let other = sorted_unique(&c.points);
        common = intersect_sorted(&common, &other);
    }
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let columns = cols
        .iter()
        .map(|c| {
            let mut pts = c.points.clone();
            pts.sort_by_key(|p| p.0);
            common
                .iter()
                .map(|t| {
                    let i = pts.partition_point(|p| p.0 < *t);
                    pts[i].1
                })
                .collect()
        })
        .collect();
    Ok(AlignedTable {
        timestamps: common,
        names: cols.iter().map(|c| c.name.clone()).collect(),
        columns,
    })
}

fn sorted_unique(points: &[(Timestamp, f64)]) -> Vec<Timestamp> {
    let mut ts: Vec<Timestamp> = points.iter().map(|p| p.0).collect();
    ts.sort_unstable();
    ts.dedup();
    ts
}

fn intersect_sorted(a: &[Timestamp], b: &[Timestamp]) -> Vec<Timestamp> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}
