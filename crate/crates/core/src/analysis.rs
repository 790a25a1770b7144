//! Empirical analytics: deviation moving averages, cross-asset correlation,
//! past-return regressors, OLS with Newey-West standard errors, and the
//! minute-level study of returns around funding payments.

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{moving_average, AlignedTable, ExogenousSeries, FundingSchedule, MarketSeries, Observation};
use crate::noarb::FeeTier;
use crate::time::{Timestamp, SECONDS_PER_DAY, SECONDS_PER_MINUTE};

/// Seven days in seconds, the smoothing window used for deviation plots.
pub const SEVEN_DAYS: i64 = 7 * SECONDS_PER_DAY;

/// `(timestamp, ρ, trailing mean of ρ)` for every observation.
pub fn deviation_with_ma(series: &MarketSeries, window: i64) -> Result<Vec<(Timestamp, f64, f64)>> {
    let rho = series.deviation_series();
    let ma = moving_average(&rho, window)?;
    Ok(rho.iter().zip(ma).map(|(&(t, r), (_, m))| (t, r, m)).collect())
}

/// `timestamp,rho,rho_ma7d`.
pub fn write_deviation_csv<W: Write>(rows: &[(Timestamp, f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp", "rho", "rho_ma7d"])?;
    for (t, r, m) in rows {
        w.write_record([t.to_string(), r.to_string(), m.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))
}

// ---------------------------------------------------------------------------
// Correlation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub names: Vec<String>,
    /// Row-major, symmetric, unit diagonal.
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == a)?;
        let j = self.names.iter().position(|n| n == b)?;
        Some(self.values[i][j])
    }

    /// Header row of names, then one row per name.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }
}

/// Pearson correlation of every pair of columns.
pub fn correlation_matrix(aligned: &AlignedTable) -> Result<CorrelationMatrix> {
    let k = aligned.n_cols();
    let n = aligned.n_rows();
    if k < 2 {
        return Err(Error::InsufficientData("correlation needs at least 2 columns".into()));
    }
    if n < 3 {
        return Err(Error::InsufficientData("correlation needs at least 3 rows".into()));
    }
    let centered: Vec<(Vec<f64>, f64)> = aligned
        .columns
        .iter()
        .zip(&aligned.names)
        .map(|(c, name)| {
            let mean = c.iter().sum::<f64>() / n as f64;
            let d: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let ss = d.iter().map(|v| v * v).sum::<f64>();
            if ss > 0.0 {
                Ok((d, ss.sqrt()))
            } else {
                Err(Error::ZeroVariance(format!("column {name}")))
            }
        })
        .collect::<Result<_>>()?;
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let (a, na) = &centered[i];
            let (b, nb) = &centered[j];
            let c = (a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    Ok(CorrelationMatrix {
        names: aligned.names.clone(),
        values,
    })
}

// ---------------------------------------------------------------------------
// Past-return regressor

/// Daily annualized log return of spot over the trailing `lookback_months`,
/// sampled at 00:00 UTC. The start of each window uses the last observation
/// at or before it; days whose window starts before the data are omitted.
pub fn past_return_regressor(spot: &MarketSeries, lookback_months: u32) -> Result<ExogenousSeries> {
    if lookback_months == 0 {
        return Err(Error::InvalidParameter("lookback must be at least one month".into()));
    }
    let obs = spot.observations();
    let first = obs.first().ok_or(Error::EmptySeries)?.timestamp;
    let mut out = Vec::new();
    for o in obs.iter().filter(|o| o.timestamp.is_midnight()) {
        let from = o.timestamp.minus_months(lookback_months);
        if from < first {
            continue;
        }
        let i = obs.partition_point(|p| p.timestamp <= from) - 1;
        let base = &obs[i];
        let years = base.timestamp.years_until(o.timestamp);
        out.push((o.timestamp, (o.spot / base.spot).ln() / years));
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!(
            "spot history is shorter than {lookback_months} months"
        )));
    }
    ExogenousSeries::new(format!("ret_{lookback_months}m"), out)
}

// ---------------------------------------------------------------------------
// OLS with HAC errors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    /// Regressor names; the intercept is last and called `const`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub hac_t_stats: Vec<f64>,
    pub r_squared: f64,
    pub n: usize,
    pub lag: usize,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }
}

/// `floor(4·(n/100)^{2/9})`.
pub fn default_hac_lag(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Regresses `y` on the named regressors plus an intercept.
///
/// Standard errors are Newey-West with a Bartlett kernel at `lag` (the
/// default lag when `None`) and no small-sample correction; at lag 0 they
/// are White's heteroskedasticity-robust errors.
pub fn ols_hac(y: &[f64], regressors: &[(&str, &[f64])], lag: Option<usize>) -> Result<RegressionResult> {
    let n = y.len();
    let k = regressors.len() + 1;
    if let Some((name, _)) = regressors.iter().find(|(_, x)| x.len() != n) {
        return Err(Error::InvalidParameter(format!("regressor {name} length differs from y")));
    }
    if n <= k {
        return Err(Error::InsufficientData(format!("{n} observations for {k} coefficients")));
    }
    if y.iter().chain(regressors.iter().flat_map(|(_, x)| x.iter())).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("regression inputs must be finite".into()));
    }
    let x = DMatrix::from_fn(n, k, |i, j| if j + 1 == k { 1.0 } else { regressors[j].1[i] });
    let yv = DVector::from_column_slice(y);

    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| x.column(j).norm()).fold(0.0f64, f64::max);
    if (0..k).any(|j| r[(j, j)].abs() <= 1e-10 * scale) {
        return Err(Error::SingularMatrix);
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r.solve_upper_triangular(&qty).ok_or(Error::SingularMatrix)?;
    let resid = &yv - &x * &beta;

    // (X'X)^{-1} = R^{-1} R^{-T}.
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or(Error::SingularMatrix)?;
    let bread = &r_inv * r_inv.transpose();

    let lag = lag.unwrap_or_else(|| default_hac_lag(n));
    let scores: Vec<DVector<f64>> = (0..n).map(|i| x.row(i).transpose() * resid[i]).collect();
    let mut meat = DMatrix::zeros(k, k);
    for s in &scores {
        meat += s * s.transpose();
    }
    for l in 1..=lag.min(n - 1) {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let mut gamma = DMatrix::zeros(k, k);
        for t in l..n {
            gamma += &scores[t] * scores[t - l].transpose();
        }
        meat += (&gamma + gamma.transpose()) * w;
    }
    let cov = &bread * meat * &bread;

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let sst = y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>();
    let ssr = resid.norm_squared();
    let r_squared = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 1.0 };

    let std_errors: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let hac_t_stats = coefficients.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    let mut names: Vec<String> = regressors.iter().map(|(n, _)| n.to_string()).collect();
    names.push("const".into());
    Ok(RegressionResult {
        names,
        coefficients,
        std_errors,
        hac_t_stats,
        r_squared,
        n,
        lag,
    })
}

/// One column per model: each coefficient with its t-statistic in
/// parentheses beneath, then R² and N.
pub fn regression_table(models: &[(&str, &RegressionResult)]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for (_, m) in models {
        for n in &m.names {
            if n != "const" && !names.contains(&n.as_str()) {
                names.push(n);
            }
        }
    }
    names.push("const");
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = vec![String::new()];
    header.extend(models.iter().map(|(label, _)| label.to_string()));
    rows.push(header);
    for name in &names {
        let mut coef = vec![name.to_string()];
        let mut tstat = vec![String::new()];
        for (_, m) in models {
            match m.names.iter().position(|n| n == name) {
                Some(i) => {
                    coef.push(format!("{:.3}", m.coefficients[i]));
                    tstat.push(format!("({:.2})", m.hac_t_stats[i]));
                }
                None => {
                    coef.push(String::new());
                    tstat.push(String::new());
                }
            }
        }
        rows.push(coef);
        rows.push(tstat);
    }
    let mut r2 = vec!["R²".to_string()];
    r2.extend(models.iter().map(|(_, m)| format!("{:.3}", m.r_squared)));
    rows.push(r2);
    let mut nrow = vec!["N".to_string()];
    nrow.extend(models.iter().map(|(_, m)| m.n.to_string()));
    rows.push(nrow);

    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let mut line = String::new();
        for (j, cell) in r.iter().enumerate() {
            let w = widths[j];
            if j == 0 {
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

// ---------------------------------------------------------------------------
// Funding-time event study

/// Minutes either side of each funding payment.
pub const EVENT_HALF_WINDOW: i64 = 240;
const EVENT_POINTS: usize = 2 * EVENT_HALF_WINDOW as usize + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyResult {
    pub window_minutes: i64,
    /// Mean cumulative hedged return at offsets −240..=240 for events with a
    /// positive rate; empty when there were none.
    pub mean_cum_returns_positive: Vec<f64>,
    pub mean_cum_returns_negative: Vec<f64>,
    /// Standard error of each mean across events.
    pub std_err_positive: Vec<f64>,
    pub std_err_negative: Vec<f64>,
    /// `(positive, negative)` events used.
    pub event_counts: (usize, usize),
    /// Events without full minute coverage of the window.
    pub skipped: usize,
    /// Events with a zero rate, which call for no position.
    pub zero_rate: usize,
}

impl EventStudyResult {
    /// `minute_offset,mean_cum_return_pos,mean_cum_return_neg`; a side with
    /// no events leaves its column blank.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["minute_offset", "mean_cum_return_pos", "mean_cum_return_neg"])?;
        let cell = |v: &[f64], i: usize| v.get(i).map(|x| x.to_string()).unwrap_or_default();
        for i in 0..EVENT_POINTS {
            w.write_record([
                (i as i64 - EVENT_HALF_WINDOW).to_string(),
                cell(&self.mean_cum_returns_positive, i),
                cell(&self.mean_cum_returns_negative, i),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<writer>", e))
    }
}

fn require_minutes(series: &MarketSeries) -> Result<()> {
    if series.cadence() != SECONDS_PER_MINUTE {
        return Err(Error::InvalidParameter(format!(
            "event analysis needs a minute series, got cadence {}s",
            series.cadence()
        )));
    }
    Ok(())
}

/// The `len` consecutive minute observations starting at `from`, if all
/// are present.
fn minute_window(obs: &[Observation], from: Timestamp, len: usize) -> Option<&[Observation]> {
    let i = obs.partition_point(|o| o.timestamp < from);
    let w = obs.get(i..i + len)?;
    let last = Timestamp(from.0 + (len as i64 - 1) * SECONDS_PER_MINUTE);
    (w[0].timestamp == from && w[len - 1].timestamp == last).then_some(w)
}

/// Log return of long spot/short futures from `a` to `b`.
fn hedged_log_return(a: &Observation, b: &Observation) -> f64 {
    (b.spot / a.spot).ln() - (b.futures / a.futures).ln()
}

fn mean_and_se(curves: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = curves.len();
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut mean = vec![0.0; EVENT_POINTS];
    let mut se = vec![0.0; EVENT_POINTS];
    for i in 0..EVENT_POINTS {
        let m = curves.iter().map(|c| c[i]).sum::<f64>() / n as f64;
        mean[i] = m;
        if n > 1 {
            let v = curves.iter().map(|c| (c[i] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            se[i] = (v / n as f64).sqrt();
        }
    }
    (mean, se)
}

/// Average cumulative return, excluding the funding cashflow, of the
/// position that collects each payment: long spot/short futures when the
/// rate is positive, the mirror when it is negative. Curves are cumulated
/// from minute −240, so they start at exactly zero.
pub fn event_study(minute_series: &MarketSeries, schedule: &FundingSchedule) -> Result<EventStudyResult> {
    require_minutes(minute_series)?;
    let obs = minute_series.observations();
    let per_event: Vec<Option<(f64, Vec<f64>)>> = schedule
        .events()
        .par_iter()
        .map(|e| {
            let from = Timestamp(e.timestamp.0 - EVENT_HALF_WINDOW * SECONDS_PER_MINUTE);
            minute_window(obs, from, EVENT_POINTS).map(|w| {
                let sign = e.rate.signum();
                // `+ 0.0` turns the −0 at the window start into 0.
                (e.rate, w.iter().map(|o| sign * hedged_log_return(&w[0], o) + 0.0).collect())
            })
        })
        .collect();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let (mut skipped, mut zero_rate) = (0, 0);
    for (e, r) in schedule.events().iter().zip(per_event) {
        match r {
            None => skipped += 1,
            Some(_) if e.rate == 0.0 => zero_rate += 1,
            Some((rate, curve)) if rate > 0.0 => pos.push(curve),
            Some((_, curve)) => neg.push(curve),
        }
    }
    if pos.is_empty() && neg.is_empty() {
        return Err(Error::NoQualifyingEvents(format!(
            "{skipped} events lack ±{EVENT_HALF_WINDOW} minutes of data, {zero_rate} have a zero rate"
        )));
    }
    let (mp, sp) = mean_and_se(&pos);
    let (mn, sn) = mean_and_se(&neg);
    Ok(EventStudyResult {
        window_minutes: EVENT_HALF_WINDOW,
        mean_cum_returns_positive: mp,
        mean_cum_returns_negative: mn,
        std_err_positive: sp,
        std_err_negative: sn,
        event_counts: (pos.len(), neg.len()),
        skipped,
        zero_rate,
    })
}

/// Minutes before and after the payment that the capture trade is held.
pub const CAPTURE_OFFSET_MINUTES: i64 = 5;
/// Funding payments per year.
pub const EVENTS_PER_YEAR: f64 = 3.0 * 365.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureSummary {
    pub n_events: usize,
    pub skipped: usize,
    /// Mean net return per event, as a fraction.
    pub mean_return: f64,
    /// `mean_return × 1095`.
    pub annualized: f64,
    pub per_event: Vec<(Timestamp, f64)>,
}

/// Opens the funding-collecting position five minutes before each payment
/// and closes it five minutes after: hedged price return plus `|rate|`
/// minus the round-trip fee. Events without both endpoints, or with a zero
/// rate, are skipped.
pub fn funding_capture_backtest(
    minute_series: &MarketSeries,
    schedule: &FundingSchedule,
    tier: &FeeTier,
) -> Result<CaptureSummary> {
    require_minutes(minute_series)?;
    let offset = CAPTURE_OFFSET_MINUTES * SECONDS_PER_MINUTE;
    let at = |t: i64| minute_series.index_of(Timestamp(t)).map(|i| &minute_series.observations()[i]);
    let mut per_event = Vec::new();
    let mut skipped = 0;
    for e in schedule.events() {
        match (at(e.timestamp.0 - offset), at(e.timestamp.0 + offset)) {
            (Some(a), Some(b)) if e.rate != 0.0 => {
                let ret = e.rate.signum() * hedged_log_return(a, b) + e.rate.abs() - tier.round_trip_cost();
                per_event.push((e.timestamp, ret));
            }
            _ => skipped += 1,
        }
    }
    if per_event.is_empty() {
        return Err(Error::NoQualifyingEvents(format!(
            "no event has ±{CAPTURE_OFFSET_MINUTES} minutes of data"
        )));
    }
    let mean_return = per_event.iter().map(|p| p.1).sum::<f64>() / per_event.len() as f64;
    Ok(CaptureSummary {
        n_events: per_event.len(),
        skipped,
        mean_return,
        annualized: mean_return * EVENTS_PER_YEAR,
        per_event,
    })
}
