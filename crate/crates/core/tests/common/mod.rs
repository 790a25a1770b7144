//! Hand-built hourly markets shared by the integration tests.
#![allow(dead_code)]

use perpfund::marketdata::FundingEvent;
use perpfund::time::{FUNDING_INTERVAL, SECONDS_PER_HOUR};
use perpfund::{FundingSchedule, MarketSeries, Observation, Timestamp};

pub const SPOT: f64 = 100.0;

/// A stretch of eight hours at a fixed deviation, followed by a funding
/// payment at its end.
#[derive(Debug, Clone, Copy)]
pub struct Phase {
    pub rho: f64,
    pub rate: f64,
}

pub const fn phase(rho: f64, rate: f64) -> Phase {
    Phase { rho, rate }
}

/// Lays `phases` end to end from `start` (a funding boundary) at constant
/// spot. The payment closing each phase lands on the first hour of the
/// next; the series ends with one extra hour carrying that last payment.
pub fn build(start: Timestamp, phases: &[Phase]) -> (MarketSeries, FundingSchedule) {
    assert_eq!(start.0 % FUNDING_INTERVAL, 0);
    let mut obs = Vec::new();
    let mut events = vec![FundingEvent { timestamp: start, rate: 0.0 }];
    let mut t = start.0;
    for p in phases {
        for _ in 0..8 {
            obs.push(Observation::new(Timestamp(t), SPOT * (p.rho / 1095.0).exp(), SPOT));
            t += SECONDS_PER_HOUR;
        }
        events.push(FundingEvent { timestamp: Timestamp(t), rate: p.rate });
    }
    let last_rho = phases.last().map_or(0.0, |p| p.rho);
    obs.push(Observation::new(Timestamp(t), SPOT * (last_rho / 1095.0).exp(), SPOT));
    (
        MarketSeries::new("FIX", SECONDS_PER_HOUR, obs).unwrap(),
        FundingSchedule::new("FIX", events).unwrap(),
    )
}

/// Repeats `cycle` until at least `hours` hours are covered.
pub fn repeat(cycle: &[Phase], hours: usize) -> Vec<Phase> {
    let per = cycle.len() * 8;
    let n = hours.div_ceil(per);
    cycle.iter().copied().cycle().take(n * cycle.len()).collect()
}

/// Two alternating cycles in which only the band `u = 70%`, `l = 10%`
/// makes money without fees.
///
/// The first cycle peaks at 75%, pays −0.2% then +0.4% while the
/// deviation sits at 75% and 15%, and falls to 5%. Holding from 75% down
/// to 5% nets +0.2% funding plus convergence; closing at 15% keeps only
/// the −0.2%. The second cycle peaks at 65% and charges −2% to anyone
/// holding through it, which every `u ≤ 60%` does.
pub fn one_profitable_band() -> Vec<Phase> {
    vec![
        phase(0.0, 0.0),
        phase(0.75, -0.002),
        phase(0.15, 0.004),
        phase(0.05, -0.01),
        phase(0.0, 0.0),
        phase(0.65, -0.02),
        phase(0.05, 0.0),
    ]
}

/// Convergence trades from peaks of 35%, 95%, 145% and 195% back to 5%,
/// no funding. Each peak is worth `(peak − 5%)/1095` before fees, so the
/// cheapest profitable peak rises with every fee tier.
pub fn fee_ladder() -> Vec<Phase> {
    let mut v = Vec::new();
    for peak in [0.35, 0.95, 1.45, 1.95] {
        v.extend([phase(0.0, 0.0), phase(peak, 0.0), phase(0.05, 0.0)]);
    }
    v
}
