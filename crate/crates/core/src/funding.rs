//! Funding flows between longs and shorts: continuous accrual over a price
//! path, discrete 8-hour rates synthesized from observed gaps, and the
//! per-event cashflow each side receives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{FundingEvent, FundingSchedule, MarketSeries, Observation, PERIODS_PER_YEAR};
use crate::noarb::TheoryParams;
use crate::time::{Timestamp, FUNDING_INTERVAL, SECONDS_PER_YEAR};

/// Which side of the perpetual a cashflow refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionSide {
    Long,
    Short,
}

/// Funding accrued over an interval. A positive `amount` is paid by the
/// long to the short.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundingAccrual {
    pub payer: PositionSide,
    pub amount: f64,
    pub interval: (Timestamp, Timestamp),
}

/// `κ ∫ (F_s − S_s) ds` over the segment, time in years, trapezoid rule on
/// the observation grid. Quote currency per unit of futures.
pub fn accrue_continuous(path: &[Observation], params: &TheoryParams) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::EmptySeries);
    }
    if path.len() < 2 {
        return Err(Error::InsufficientData("accrual needs at least 2 observations".into()));
    }
    // Integrate in seconds and convert once; a constant gap over 8 hours
    // then comes out exact.
    let gap_seconds: f64 = path
        .windows(2)
        .map(|w| 0.5 * (w[0].gap() + w[1].gap()) * (w[1].timestamp.0 - w[0].timestamp.0) as f64)
        .sum();
    Ok(params.kappa * gap_seconds / SECONDS_PER_YEAR as f64)
}

/// [`accrue_continuous`] with the payer made explicit.
pub fn accrual(path: &[Observation], params: &TheoryParams) -> Result<FundingAccrual> {
    let amount = accrue_continuous(path, params)?;
    Ok(FundingAccrual {
        payer: if amount >= 0.0 { PositionSide::Long } else { PositionSide::Short },
        amount,
        interval: (path[0].timestamp, path[path.len() - 1].timestamp),
    })
}

/// Funding rates at every 8-hour boundary covered by an hourly series.
///
/// The rate at boundary `t` is `(κ/1095)` times the unweighted mean of the
/// fractional gaps `(F − S)/S` observed in `[t − 8h, t)`. With the default
/// `κ = 1095` that is simply the mean gap. Boundaries whose window has no
/// observations, or that lie before the first full window, get no event.
pub fn schedule_from_gaps(series: &MarketSeries, params: &TheoryParams) -> Result<FundingSchedule> {
    if !series.is_hourly() {
        return Err(Error::InvalidParameter(format!(
            "funding synthesis needs an hourly series, got cadence {}s",
            series.cadence()
        )));
    }
    let obs = series.observations();
    let (first, last) = match (obs.first(), obs.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Err(Error::EmptySeries),
    };
    if last.0 - first.0 + series.cadence() < FUNDING_INTERVAL {
        return Err(Error::InsufficientData("funding synthesis needs at least 8 hours".into()));
    }
    let scale = params.kappa / PERIODS_PER_YEAR;
    // Earliest boundary whose whole window starts at or after the first
    // observation.
    let mut boundary = (first.0 + 2 * FUNDING_INTERVAL - 1).div_euclid(FUNDING_INTERVAL) * FUNDING_INTERVAL;
    let mut events = Vec::new();
    while boundary <= last.0 + series.cadence() {
        let lo = obs.partition_point(|o| o.timestamp.0 < boundary - FUNDING_INTERVAL);
        let hi = obs.partition_point(|o| o.timestamp.0 < boundary);
        let window = &obs[lo..hi];
        if !window.is_empty() {
            let mean = window.iter().map(|o| (o.futures - o.spot) / o.spot).sum::<f64>() / window.len() as f64;
            events.push(FundingEvent {
                timestamp: Timestamp(boundary),
                rate: scale * mean,
            });
        }
        boundary += FUNDING_INTERVAL;
    }
    FundingSchedule::new(series.asset_id(), events)
}

/// Cashflow per unit of futures notional received by `side` at event `t`:
/// the short receives `+rate`, the long `−rate`.
pub fn funding_cashflow(schedule: &FundingSchedule, side: PositionSide, t: Timestamp) -> Result<f64> {
    let rate = schedule.rate_at(t).ok_or(Error::NotAnEvent(t))?;
    Ok(match side {
        PositionSide::Short => rate,
        PositionSide::Long => -rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::SECONDS_PER_HOUR;
    use proptest::prelude::*;

    const H: i64 = SECONDS_PER_HOUR;

    fn path_from_gaps(start: i64, spot: f64, gaps: &[f64]) -> Vec<Observation> {
        gaps.iter()
            .enumerate()
            .map(|(i, g)| Observation::new(Timestamp(start + i as i64 * H), spot + g, spot))
            .collect()
    }

    #[test]
    fn constant_gap_accrues_the_gap() {
        let p = TheoryParams::default();
        let path = path_from_gaps(0, 1000.0, &[10.0; 9]);
        assert_eq!(accrue_continuous(&path, &p).unwrap(), 10.0);
        let acc = accrual(&path, &p).unwrap();
        assert_eq!(acc.payer, PositionSide::Long);
        assert_eq!(acc.interval, (Timestamp(0), Timestamp(8 * H)));
    }

    #[test]
    fn accrual_edge_cases() {
        let p = TheoryParams::default();
        assert_eq!(accrue_continuous(&path_from_gaps(0, 50.0, &[0.0; 5]), &p).unwrap(), 0.0);
        let linear: Vec<f64> = (0..=8).map(|i| 10.0 * i as f64 / 8.0).collect();
        let v = accrue_continuous(&path_from_gaps(0, 1000.0, &linear), &p).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
        assert!(matches!(accrue_continuous(&[], &p), Err(Error::EmptySeries)));
        assert!(accrue_continuous(&path_from_gaps(0, 1.0, &[1.0]), &p).is_err());
        let neg = accrual(&path_from_gaps(0, 1000.0, &[-1.0; 3]), &p).unwrap();
        assert_eq!(neg.payer, PositionSide::Short);
    }

    fn series_from_fractional_gaps(start: i64, gaps: &[f64]) -> MarketSeries {
        let obs = gaps
            .iter()
            .enumerate()
            .map(|(i, g)| Observation::new(Timestamp(start + i as i64 * H), 100.0 * (1.0 + g), 100.0))
            .collect();
        MarketSeries::new("T", H, obs).unwrap()
    }

    #[test]
    fn constant_fractional_gap_gives_constant_rate() {
        let s = series_from_fractional_gaps(0, &[1e-4; 48]);
        let sched = schedule_from_gaps(&s, &TheoryParams::default()).unwrap();
        assert_eq!(sched.len(), 6);
        assert_eq!(sched.events()[0].timestamp, Timestamp(8 * H));
        for e in sched.events() {
            assert!((e.rate - 1e-4).abs() < 1e-15);
        }
    }

    #[test]
    fn alternating_gaps_cancel() {
        let g: Vec<f64> = (0..24).map(|i| if i % 2 == 0 { 3e-4 } else { -3e-4 }).collect();
        let sched = schedule_from_gaps(&series_from_fractional_gaps(0, &g), &TheoryParams::default()).unwrap();
        assert!(sched.events().iter().all(|e| e.rate.abs() < 1e-15));
    }

    #[test]
    fn window_mean_of_one_to_eight_bps() {
        let g: Vec<f64> = (1..=8).map(|i| i as f64 * 1e-4).collect();
        let sched = schedule_from_gaps(&series_from_fractional_gaps(0, &g), &TheoryParams::default()).unwrap();
        assert_eq!(sched.len(), 1);
        assert!((sched.events()[0].rate - 4.5e-4).abs() < 1e-15);
    }

    #[test]
    fn unaligned_start_waits_for_a_full_window() {
        // Starts at 03:00; the 08:00 window would be partial, so the first
        // event is at 16:00.
        let s = series_from_fractional_gaps(3 * H, &[2e-4; 20]);
        let sched = schedule_from_gaps(&s, &TheoryParams::default()).unwrap();
        assert_eq!(sched.events()[0].timestamp, Timestamp(16 * H));
    }

    #[test]
    fn synthesis_rejects_short_or_minute_series() {
        let short = series_from_fractional_gaps(0, &[1e-4; 7]);
        assert!(matches!(
            schedule_from_gaps(&short, &TheoryParams::default()),
            Err(Error::InsufficientData(_))
        ));
        let minute = MarketSeries::new("M", 60, vec![Observation::new(Timestamp(0), 1.0, 1.0)]).unwrap();
        assert!(schedule_from_gaps(&minute, &TheoryParams::default()).is_err());
    }

    #[test]
    fn cashflow_signs() {
        let t0 = Timestamp(0);
        let t1 = Timestamp(FUNDING_INTERVAL);
        let sched = FundingSchedule::new(
            "X",
            vec![
                FundingEvent { timestamp: t0, rate: 0.0001 },
                FundingEvent { timestamp: t1, rate: -0.0002 },
            ],
        )
        .unwrap();
        assert_eq!(funding_cashflow(&sched, PositionSide::Short, t0).unwrap(), 0.0001);
        assert_eq!(funding_cashflow(&sched, PositionSide::Short, t1).unwrap(), -0.0002);
        for t in [t0, t1] {
            let sum = funding_cashflow(&sched, PositionSide::Short, t).unwrap()
                + funding_cashflow(&sched, PositionSide::Long, t).unwrap();
            assert_eq!(sum, 0.0);
        }
        assert!(matches!(
            funding_cashflow(&sched, PositionSide::Long, Timestamp(H)),
            Err(Error::NotAnEvent(_))
        ));
    }

    proptest! {
        #[test]
        fn synthesis_is_scale_equivariant(gaps in prop::collection::vec(-1e-3f64..1e-3, 8..40), a in 0.01f64..100.0) {
            let p = TheoryParams::default();
            let base = series_from_fractional_gaps(0, &gaps);
            let scaled_obs = base.observations().iter()
                .map(|o| Observation::new(o.timestamp, a * o.futures, a * o.spot))
                .collect();
            let scaled = MarketSeries::new("T", H, scaled_obs).unwrap();
            let x = schedule_from_gaps(&base, &p).unwrap();
            let y = schedule_from_gaps(&scaled, &p).unwrap();
            prop_assert_eq!(x.len(), y.len());
            for (e, f) in x.events().iter().zip(y.events()) {
                prop_assert!((e.rate - f.rate).abs() < 1e-15);
            }
        }

        #[test]
        fn continuous_accrual_tracks_discrete_rate(gaps in prop::collection::vec(-2e-3f64..2e-3, 8), spot in 10.0f64..1e5) {
            // Piecewise-constant hourly gaps sampled at the start of each
            // hour, plus the closing sample at 8h. The trapezoid differs from
            // the window mean only through its two end half-hours, by
            // (g_last − g_first)/16.
            let p = TheoryParams::default();
            let mut path = path_from_gaps(0, spot, &gaps.iter().map(|g| g * spot).collect::<Vec<_>>());
            path.push(Observation::new(Timestamp(8 * H), spot * (1.0 + gaps[7]), spot));
            let cont = accrue_continuous(&path, &p).unwrap() / spot;
            let discrete = gaps.iter().sum::<f64>() / 8.0;
            let end_effect = (gaps[7] - gaps[0]) / 16.0;
            prop_assert!((cont - discrete - end_effect).abs() < 1e-12);
            let max_g = gaps.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            prop_assert!((cont - discrete).abs() <= max_g / 8.0 + 1e-12);
        }
    }
}
