//! Hour-by-hour simulation of a hedged futures/spot position and the
//! performance accounting reported for it.
//!
//! One unit of spot notional is traded against one unit of futures. While
//! long spot/short futures is held over `(t−1, t]`, the hour earns
//!
//! * price: `ln(S_t/S_{t−1}) − ln(F_t/F_{t−1})`,
//! * funding: `+rate` for every funding event in `(t−1, t]`,
//!
//! and the mirror position earns the negatives. Opening or closing costs
//! `spot_fee + futures_fee`, charged at the hour of the trade. A position
//! opened at an event hour does not receive that event; one closed at an
//! event hour does. Discounting is ignored.
//!
//! Annualization follows the activity-adjusted convention: with `μ` and
//! `σ` the mean and sample standard deviation over active hours and `N_a`
//! the average number of active hours per year,
//! `return = μ·N_a`, `volatility = σ·√N_a`, `SR = μ/σ·√N_a`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{FundingSchedule, MarketSeries};
use crate::noarb::{DeviationBounds, FeeTier, Side};
use crate::strategy::{
    rma_signal, select_thresholds_unchecked, two_threshold_signal, Action, GridSearchConfig, PositionState,
    Restriction, StrategyKind, StrategySpec, ThresholdChoice,
};
use crate::time::{Timestamp, FUNDING_INTERVAL, HOURS_PER_YEAR};

/// One observation prepared for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub timestamp: Timestamp,
    pub futures: f64,
    pub spot: f64,
    pub rho: f64,
    /// `ln(S_t/S_{t−1}) − ln(F_t/F_{t−1})` since the previous bar; 0 on the
    /// first bar.
    pub hedge_return: f64,
    /// Sum of funding rates of events in `(t_{−1}, t]`.
    pub funding_rate: f64,
    /// An 8-hour boundary in `(t_{−1}, t]` that the schedule lacks.
    pub missing_funding: Option<Timestamp>,
}

/// Joins prices with funding events. Each bar carries the funding of every
/// event since the previous bar, so events falling inside a price gap are
/// paid at the first bar after it.
pub fn prepare_bars(series: &MarketSeries, schedule: &FundingSchedule) -> Vec<Bar> {
    let obs = series.observations();
    let mut bars = Vec::with_capacity(obs.len());
    for (i, o) in obs.iter().enumerate() {
        let (hedge_return, funding_rate, missing_funding) = if i == 0 {
            (0.0, 0.0, None)
        } else {
            let p = &obs[i - 1];
            let hedge = (o.spot / p.spot).ln() - (o.futures / p.futures).ln();
            let mut rate = 0.0;
            let mut missing = None;
            let mut e = (p.timestamp.0.div_euclid(FUNDING_INTERVAL) + 1) * FUNDING_INTERVAL;
            while e <= o.timestamp.0 {
                match schedule.rate_at(Timestamp(e)) {
                    Some(r) => rate += r,
                    None => missing = missing.or(Some(Timestamp(e))),
                }
                e += FUNDING_INTERVAL;
            }
            (hedge, rate, missing)
        };
        bars.push(Bar {
            timestamp: o.timestamp,
            futures: o.futures,
            spot: o.spot,
            rho: o.rho(),
            hedge_return,
            funding_rate,
            missing_funding,
        });
    }
    bars
}

/// Return of one hour, as a fraction of spot notional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyReturn {
    pub timestamp: Timestamp,
    /// Always `price + funding + fee`.
    pub total: f64,
    pub price: f64,
    pub funding: f64,
    /// Non-positive.
    pub fee: f64,
    /// A position was held during the hour or traded at its end.
    pub active: bool,
}

impl HourlyReturn {
    fn inactive(timestamp: Timestamp) -> Self {
        HourlyReturn {
            timestamp,
            total: 0.0,
            price: 0.0,
            funding: 0.0,
            fee: 0.0,
            active: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub returns: Vec<HourlyReturn>,
    /// Action taken at each bar, after the final forced close.
    pub actions: Vec<Action>,
    /// A position was still open at the last bar and was closed there.
    pub forced_close: bool,
}

/// Runs `policy` over `bars`. The policy sees each bar and the position
/// carried into it. Opens on the last bar are ignored and any open
/// position is closed there.
pub fn simulate<F>(bars: &[Bar], tier: &FeeTier, mut policy: F) -> Result<SimOutput>
where
    F: FnMut(usize, &Bar, &PositionState) -> Action,
{
    let one_way = tier.one_way_cost();
    let mut state = PositionState::Flat;
    let mut returns = Vec::with_capacity(bars.len());
    let mut actions = Vec::with_capacity(bars.len());
    let mut forced_close = false;
    let last = bars.len().saturating_sub(1);
    for (i, bar) in bars.iter().enumerate() {
        let mut hr = HourlyReturn::inactive(bar.timestamp);
        if let Some(side) = state.side() {
            if let Some(missing) = bar.missing_funding {
                return Err(Error::ScheduleGap(missing));
            }
            let sign = side.sign();
            hr.price = sign * bar.hedge_return;
            hr.funding = sign * bar.funding_rate;
            hr.active = true;
        }
        let mut action = policy(i, bar, &state);
        if i == last {
            action = match (action, state.is_flat()) {
                (_, false) => {
                    if action != Action::Close {
                        forced_close = true;
                    }
                    Action::Close
                }
                (_, true) => Action::Hold,
            };
        }
        match (action, state.side()) {
            (Action::Hold, _) => {}
            (Action::OpenShortFutures | Action::OpenLongFutures, None) => {
                let side = if action == Action::OpenShortFutures {
                    Side::ShortFuturesLongSpot
                } else {
                    Side::LongFuturesShortSpot
                };
                state = PositionState::Open {
                    side,
                    entry_timestamp: bar.timestamp,
                    entry_futures: bar.futures,
                    entry_spot: bar.spot,
                };
                hr.fee = -one_way;
                hr.active = true;
            }
            (Action::Close, Some(_)) => {
                state = PositionState::Flat;
                hr.fee = -one_way;
                hr.active = true;
            }
            (a, _) => {
                return Err(Error::InvalidParameter(format!(
                    "action {a:?} at {} is inconsistent with position {state:?}",
                    bar.timestamp
                )))
            }
        }
        hr.total = hr.price + hr.funding + hr.fee;
        returns.push(hr);
        actions.push(action);
    }
    Ok(SimOutput {
        returns,
        actions,
        forced_close,
    })
}

/// Replays a fixed action sequence, one action per bar.
pub fn replay(bars: &[Bar], actions: &[Action], tier: &FeeTier) -> Result<SimOutput> {
    if actions.len() != bars.len() {
        return Err(Error::InvalidParameter(format!(
            "{} actions for {} bars",
            actions.len(),
            bars.len()
        )));
    }
    simulate(bars, tier, |i, _, _| actions[i])
}

/// Activity-adjusted annualized statistics, as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annualized {
    pub mean: f64,
    pub volatility: f64,
    pub sharpe: f64,
}

fn mean_and_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `μ·N_a`, `σ·√N_a` and `μ/σ·√N_a` from per-hour returns of active hours.
pub fn annualize(active_returns: &[f64], active_hours_per_year: f64) -> Result<Annualized> {
    if active_returns.len() < 2 {
        return Err(Error::InsufficientData("Sharpe ratio needs at least 2 active hours".into()));
    }
    let (mu, sigma) = mean_and_sd(active_returns);
    if !(sigma > 0.0) {
        return Err(Error::ZeroVariance("active returns are constant".into()));
    }
    Ok(Annualized {
        mean: mu * active_hours_per_year,
        volatility: sigma * active_hours_per_year.sqrt(),
        sharpe: mu / sigma * active_hours_per_year.sqrt(),
    })
}

/// Sharpe ratio scaled by the number of active hours per year.
pub fn adjusted_sharpe(active_returns: &[f64], active_hours_per_year: f64) -> Result<f64> {
    annualize(active_returns, active_hours_per_year).map(|a| a.sharpe)
}

/// Average active hours per year when `active` of `total` hours were active.
pub fn active_hours_per_year(active: usize, total: usize, hours_per_year: f64) -> f64 {
    if total == 0 {
        0.0
    } else {
        active as f64 * hours_per_year / total as f64
    }
}

/// Table-ready metrics; everything but `sharpe` and counts in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMetrics {
    pub n: usize,
    pub active_hours: usize,
    pub active_pct: f64,
    pub return_ann: f64,
    pub vol_ann: f64,
    /// `return_ann / vol_ann`; 0 when undefined.
    pub sharpe: f64,
    pub sharpe_defined: bool,
    pub price_ann: f64,
    pub funding_ann: f64,
    pub fee_ann: f64,
}

/// Metrics over a run of hourly returns.
pub fn summarize(returns: &[HourlyReturn]) -> PerformanceMetrics {
    let n = returns.len();
    let active: Vec<&HourlyReturn> = returns.iter().filter(|r| r.active).collect();
    let na = active.len();
    let mut m = PerformanceMetrics {
        n,
        active_hours: na,
        active_pct: if n > 0 { 100.0 * na as f64 / n as f64 } else { 0.0 },
        return_ann: 0.0,
        vol_ann: 0.0,
        sharpe: 0.0,
        sharpe_defined: false,
        price_ann: 0.0,
        funding_ann: 0.0,
        fee_ann: 0.0,
    };
    if na == 0 {
        return m;
    }
    let hours_per_year = active_hours_per_year(na, n, HOURS_PER_YEAR);
    let per_year = |f: fn(&HourlyReturn) -> f64| 100.0 * active.iter().map(|r| f(r)).sum::<f64>() / na as f64 * hours_per_year;
    m.return_ann = per_year(|r| r.total);
    m.price_ann = per_year(|r| r.price);
    m.funding_ann = per_year(|r| r.funding);
    m.fee_ann = per_year(|r| r.fee);
    if na >= 2 {
        let totals: Vec<f64> = active.iter().map(|r| r.total).collect();
        let (_, sigma) = mean_and_sd(&totals);
        m.vol_ann = 100.0 * sigma * hours_per_year.sqrt();
        if m.vol_ann > 0.0 {
            m.sharpe = m.return_ann / m.vol_ann;
            m.sharpe_defined = true;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearMetrics {
    pub year: i32,
    pub metrics: PerformanceMetrics,
}

/// Thresholds in force from `effective_from`; `None` during warm-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub effective_from: Timestamp,
    pub choice: Option<ThresholdChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub asset_id: String,
    pub tier: FeeTier,
    pub spec: StrategySpec,
    pub overall: PerformanceMetrics,
    pub by_year: Vec<YearMetrics>,
    /// The final position was closed by the end of the data, not a signal.
    pub forced_close: bool,
    /// Monthly selections of the adaptive two-threshold rule.
    pub selections: Vec<ThresholdSelection>,
    pub returns: Vec<HourlyReturn>,
}

impl BacktestReport {
    pub fn from_returns(
        asset_id: impl Into<String>,
        tier: FeeTier,
        spec: StrategySpec,
        sim: SimOutput,
        selections: Vec<ThresholdSelection>,
    ) -> Self {
        let mut years: BTreeMap<i32, Vec<HourlyReturn>> = BTreeMap::new();
        for r in &sim.returns {
            years.entry(r.timestamp.year()).or_default().push(*r);
        }
        BacktestReport {
            asset_id: asset_id.into(),
            tier,
            spec,
            overall: summarize(&sim.returns),
            by_year: years
                .into_iter()
                .map(|(year, rs)| YearMetrics {
                    year,
                    metrics: summarize(&rs),
                })
                .collect(),
            forced_close: sim.forced_close,
            selections,
            returns: sim.returns,
        }
    }

    pub fn active_pct(&self) -> f64 {
        self.overall.active_pct
    }

    pub fn return_ann(&self) -> f64 {
        self.overall.return_ann
    }

    pub fn vol_ann(&self) -> f64 {
        self.overall.vol_ann
    }

    pub fn sharpe(&self) -> f64 {
        self.overall.sharpe
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `timestamp,total,price,funding,fee,active` with `active` as 0/1.
    pub fn write_returns_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp", "total", "price", "funding", "fee", "active"])?;
        for r in &self.returns {
            w.write_record([
                r.timestamp.to_string(),
                r.total.to_string(),
                r.price.to_string(),
                r.funding.to_string(),
                r.fee.to_string(),
                u8::from(r.active).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }
}

/// Annualized return split into price convergence, funding and fees, in
/// percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total: f64,
    pub price: f64,
    pub funding: f64,
    pub fee: f64,
}

impl Decomposition {
    fn of(m: &PerformanceMetrics) -> Self {
        Decomposition {
            total: m.return_ann,
            price: m.price_ann,
            funding: m.funding_ann,
            fee: m.fee_ann,
        }
    }
}

pub fn decompose(report: &BacktestReport) -> Result<Decomposition> {
    if report.returns.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(Decomposition::of(&report.overall))
}

pub fn decompose_by_year(report: &BacktestReport) -> Vec<(i32, Decomposition)> {
    report.by_year.iter().map(|y| (y.year, Decomposition::of(&y.metrics))).collect()
}

// ---------------------------------------------------------------------------
// Running strategies

/// Month-start indices: the first bar of every calendar month present.
fn month_anchors(bars: &[Bar]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for (i, b) in bars.iter().enumerate() {
        let ym = b.timestamp.year_month();
        if prev != Some(ym) {
            out.push(i);
            prev = Some(ym);
        }
    }
    out
}

/// Two-threshold rule with `(u, l)` re-selected at each month start from
/// the preceding `lookback_months` of bars. Stays flat until a full
/// lookback window exists.
pub fn run_adaptive(
    bars: &[Bar],
    config: &GridSearchConfig,
    tier: &FeeTier,
    restriction: Restriction,
) -> Result<(SimOutput, Vec<ThresholdSelection>)> {
    config.validate()?;
    let Some(first) = bars.first().map(|b| b.timestamp) else {
        return Err(Error::EmptySeries);
    };
    let anchors = month_anchors(bars);
    let mut per_bar: Vec<Option<ThresholdChoice>> = vec![None; bars.len()];
    let mut selections = Vec::with_capacity(anchors.len());
    for (k, &a) in anchors.iter().enumerate() {
        let end = anchors.get(k + 1).copied().unwrap_or(bars.len());
        let anchor = bars[a].timestamp;
        let window_start = anchor.minus_months(config.lookback_months);
        let choice = if first <= window_start {
            let lo = bars.partition_point(|b| b.timestamp < window_start);
            let history = &bars[lo..a];
            if history.len() >= 2 {
                Some(select_thresholds_unchecked(history, config, tier, restriction)?)
            } else {
                None
            }
        } else {
            None
        };
        per_bar[a..end].fill(choice);
        selections.push(ThresholdSelection {
            effective_from: anchor,
            choice,
        });
    }
    let sim = simulate(bars, tier, |i, bar, state| match per_bar[i] {
        Some(c) => two_threshold_signal(bar.rho, state, c.upper, c.lower, restriction),
        // Warm-up: no selection yet, so no position can be open.
        None => Action::Hold,
    })?;
    Ok((sim, selections))
}

/// Simulates `spec` on an hourly series with its funding schedule.
pub fn run_backtest(
    series: &MarketSeries,
    schedule: &FundingSchedule,
    spec: &StrategySpec,
    tier: &FeeTier,
) -> Result<BacktestReport> {
    if !series.is_hourly() {
        return Err(Error::InvalidParameter(format!(
            "backtests need an hourly series, got cadence {}s",
            series.cadence()
        )));
    }
    if series.len() < 2 {
        return Err(Error::InsufficientData("backtest needs at least 2 observations".into()));
    }
    spec.validate()?;
    let bars = prepare_bars(series, schedule);
    let restriction = spec.restriction;
    let (sim, selections) = match &spec.kind {
        StrategyKind::RandomMaturity {
            open_lower,
            open_upper,
            close_target,
        } => {
            let bounds = DeviationBounds {
                rho_l: *open_lower,
                rho_u: *open_upper,
            };
            let sim = simulate(&bars, tier, |_, bar, state| {
                rma_signal(bar.rho, state, &bounds, *close_target, restriction)
            })?;
            (sim, Vec::new())
        }
        StrategyKind::TwoThreshold { upper, lower } => {
            let sim = simulate(&bars, tier, |_, bar, state| {
                two_threshold_signal(bar.rho, state, *upper, *lower, restriction)
            })?;
            (sim, Vec::new())
        }
        StrategyKind::AdaptiveTwoThreshold(cfg) => run_adaptive(&bars, cfg, tier, restriction)?,
    };
    Ok(BacktestReport::from_returns(series.asset_id(), *tier, spec.clone(), sim, selections))
}

// ---------------------------------------------------------------------------
// Text tables

fn pct(v: f64) -> String {
    format!("{v:.1}")
}

/// Aligned-column summary: N, Active %, Return, Volatility and SR per
/// calendar year and over the whole sample, one block per report.
pub fn summary_table(reports: &[BacktestReport]) -> String {
    let mut years: Vec<i32> = reports.iter().flat_map(|r| r.by_year.iter().map(|y| y.year)).collect();
    years.sort_unstable();
    years.dedup();
    let mut header = vec![String::new(), String::new()];
    header.extend(years.iter().map(|y| y.to_string()));
    header.push("all".into());
    let mut rows = vec![header];
    for rep in reports {
        let cols: Vec<Option<&PerformanceMetrics>> = years
            .iter()
            .map(|y| rep.by_year.iter().find(|m| m.year == *y).map(|m| &m.metrics))
            .chain(std::iter::once(Some(&rep.overall)))
            .collect();
        let metric_rows: [(&str, fn(&PerformanceMetrics) -> String); 5] = [
            ("N", |m| m.n.to_string()),
            ("Active %", |m| pct(m.active_pct)),
            ("Return", |m| pct(m.return_ann)),
            ("Volatility", |m| pct(m.vol_ann)),
            ("SR", |m| format!("{:.2}", m.sharpe)),
        ];
        for (k, (name, f)) in metric_rows.iter().enumerate() {
            let mut row = vec![if k == 0 { rep.asset_id.clone() } else { String::new() }, name.to_string()];
            row.extend(cols.iter().map(|c| c.map(f).unwrap_or_default()));
            rows.push(row);
        }
    }
    render(&rows)
}

/// Return, Price, Funding and Fee rows per asset, by year and overall.
pub fn decomposition_table(reports: &[BacktestReport]) -> String {
    let mut years: Vec<i32> = reports.iter().flat_map(|r| r.by_year.iter().map(|y| y.year)).collect();
    years.sort_unstable();
    years.dedup();
    let mut header = vec![String::new(), String::new()];
    header.extend(years.iter().map(|y| y.to_string()));
    header.push("all".into());
    let mut rows = vec![header];
    for rep in reports {
        let by_year = decompose_by_year(rep);
        let cols: Vec<Option<Decomposition>> = years
            .iter()
            .map(|y| by_year.iter().find(|(yy, _)| yy == y).map(|(_, d)| *d))
            .chain(std::iter::once(Some(Decomposition::of(&rep.overall))))
            .collect();
        let parts: [(&str, fn(&Decomposition) -> f64); 4] = [
            ("Return", |d| d.total),
            ("Price", |d| d.price),
            ("Funding", |d| d.funding),
            ("Fee", |d| d.fee),
        ];
        for (k, (name, f)) in parts.iter().enumerate() {
            let mut row = vec![if k == 0 { rep.asset_id.clone() } else { String::new() }, name.to_string()];
            row.extend(cols.iter().map(|c| c.as_ref().map(|d| pct(f(d))).unwrap_or_default()));
            rows.push(row);
        }
    }
    render(&rows)
}

fn render(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (j, w) in widths.iter().enumerate() {
            let cell = r.get(j).map(String::as_str).unwrap_or("");
            if j < 2 {
                let _ = write!(line, "{cell:<w$}  ");
            } else {
                let _ = write!(line, "{cell:>w$}  ");
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
