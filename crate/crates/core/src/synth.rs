//! Seeded synthetic markets with a bounded futures-spot gap.
//!
//! Spot follows a geometric random walk at hourly steps. The deviation `ρ`
//! follows an Euler-discretized mean-reverting process reflected back into
//! `[−gap_bound, gap_bound]`, and the futures price is `S·exp(ρ/1095)`.
//! Funding is synthesized from the resulting gaps. All randomness comes
//! from [`XorShift64Star`], so a configuration always produces the same
//! bytes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funding::schedule_from_gaps;
use crate::marketdata::{FundingSchedule, MarketSeries, Observation, PERIODS_PER_YEAR};
use crate::noarb::{payoff_trajectory, DeviationBounds, Side, TheoryParams};
use crate::rng::XorShift64Star;
use crate::time::{Timestamp, HOURS_PER_YEAR, SECONDS_PER_HOUR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub asset_id: String,
    pub seed: u64,
    pub n_hours: usize,
    /// First timestamp; must be on the hour.
    pub start: Timestamp,
    pub spot_start: f64,
    /// Annualized volatility of spot log returns.
    pub spot_vol: f64,
    /// Annualized drift of spot.
    pub spot_drift: f64,
    /// Long-run level of `ρ`.
    pub gap_mean: f64,
    /// Mean-reversion speed of `ρ`, per year.
    pub gap_reversion: f64,
    /// Annualized volatility of `ρ`.
    pub gap_vol: f64,
    /// `|ρ|` never exceeds this.
    pub gap_bound: f64,
    /// Starting `ρ`; `gap_mean` when absent.
    pub gap_init: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            asset_id: "SYN".into(),
            seed: 42,
            n_hours: 24 * 365,
            start: Timestamp::from_ymd_hms(2021, 1, 1, 0, 0, 0).expect("valid date"),
            spot_start: 30_000.0,
            spot_vol: 0.6,
            spot_drift: 0.0,
            gap_mean: 0.11,
            gap_reversion: 200.0,
            gap_vol: 3.0,
            gap_bound: 2.5,
            gap_init: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("synth: {what}")));
        if self.n_hours < 8 {
            return bad("n_hours must be at least 8");
        }
        if self.start.0.rem_euclid(SECONDS_PER_HOUR) != 0 {
            return bad("start must be on the hour");
        }
        if !(self.spot_start.is_finite() && self.spot_start > 0.0) {
            return bad("spot_start must be positive");
        }
        if !(self.gap_bound.is_finite() && self.gap_bound > 0.0) {
            return bad("gap_bound must be positive");
        }
        for (name, v) in [
            ("spot_vol", self.spot_vol),
            ("gap_vol", self.gap_vol),
            ("gap_reversion", self.gap_reversion),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be non-negative"));
            }
        }
        if !self.spot_drift.is_finite() {
            return bad("spot_drift must be finite");
        }
        if !(self.gap_mean.is_finite() && self.gap_mean.abs() <= self.gap_bound) {
            return bad("gap_mean must lie within the gap bound");
        }
        if !(self.initial_gap().is_finite() && self.initial_gap().abs() <= self.gap_bound) {
            return bad("gap_init must lie within the gap bound");
        }
        Ok(())
    }

    pub fn initial_gap(&self) -> f64 {
        self.gap_init.unwrap_or(self.gap_mean)
    }
}

/// Folds `x` back into `[−b, b]` by mirroring at the edges.
fn reflect(mut x: f64, b: f64) -> f64 {
    let period = 4.0 * b;
    if x.abs() > 3.0 * b {
        x = (x + b).rem_euclid(period) - b;
    }
    loop {
        if x > b {
            x = 2.0 * b - x;
        } else if x < -b {
            x = -2.0 * b - x;
        } else {
            return x;
        }
    }
}

/// One price path drawn from stream `stream` of the configured seed.
pub fn generate_path(config: &SynthConfig, stream: u64) -> Result<Vec<Observation>> {
    config.validate()?;
    let mut rng = XorShift64Star::with_stream(config.seed, stream);
    let dt = 1.0 / HOURS_PER_YEAR;
    let sq = dt.sqrt();
    let spot_step = (config.spot_drift - 0.5 * config.spot_vol * config.spot_vol) * dt;
    let mut spot = config.spot_start;
    let mut rho = config.initial_gap();
    let mut out = Vec::with_capacity(config.n_hours);
    for k in 0..config.n_hours {
        let t = Timestamp(config.start.0 + k as i64 * SECONDS_PER_HOUR);
        out.push(Observation::new(t, spot * (rho / PERIODS_PER_YEAR).exp(), spot));
        let z_spot = rng.next_normal();
        let z_gap = rng.next_normal();
        spot *= (spot_step + config.spot_vol * sq * z_spot).exp();
        rho = reflect(
            rho + config.gap_reversion * (config.gap_mean - rho) * dt + config.gap_vol * sq * z_gap,
            config.gap_bound,
        );
    }
    Ok(out)
}

/// Prices and synthesized funding for one asset.
pub fn generate(config: &SynthConfig) -> Result<(MarketSeries, FundingSchedule)> {
    generate_with(config, &TheoryParams::default())
}

/// [`generate`] with an explicit funding scale.
pub fn generate_with(config: &SynthConfig, params: &TheoryParams) -> Result<(MarketSeries, FundingSchedule)> {
    let obs = generate_path(config, 0)?;
    let series = MarketSeries::new(config.asset_id.clone(), SECONDS_PER_HOUR, obs)?;
    let schedule = schedule_from_gaps(&series, params)?;
    Ok((series, schedule))
}

/// Summary of the Monte-Carlo payoff oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub n_paths: usize,
    pub side: Side,
    /// Paths whose payoff was strictly positive at some observation.
    pub n_positive: usize,
    pub fraction_positive: f64,
    /// Per path, years until the payoff first turned positive.
    pub first_positive: Vec<Option<f64>>,
    /// Per path, the largest `|payoff|` seen.
    pub max_abs_payoff: Vec<f64>,
}

/// Enters at the first observation of each path on the side the starting
/// `ρ` calls for and tracks the discounted payoff hour by hour. Path `i`
/// uses stream `i`, so the result does not depend on scheduling.
///
/// The starting `ρ` must not lie strictly inside `entry_rule`; at or above
/// `rho_u` the trade is long spot/short futures, at or below `rho_l` its
/// mirror.
pub fn rma_payoff_oracle(
    config: &SynthConfig,
    n_paths: usize,
    entry_rule: &DeviationBounds,
    params: &TheoryParams,
) -> Result<OracleStats> {
    config.validate()?;
    let rho0 = config.initial_gap();
    let side = if rho0 >= entry_rule.rho_u {
        Side::ShortFuturesLongSpot
    } else if rho0 <= entry_rule.rho_l {
        Side::LongFuturesShortSpot
    } else {
        return Err(Error::InvalidParameter(format!(
            "initial deviation {rho0} lies inside the entry bounds ({}, {})",
            entry_rule.rho_l, entry_rule.rho_u
        )));
    };
    let per_path: Vec<(Option<f64>, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let path = generate_path(config, i)?;
            let traj = payoff_trajectory(side, &path, 0, params)?;
            let first = traj
                .iter()
                .position(|p| *p > 0.0)
                .map(|k| path[0].timestamp.years_until(path[k].timestamp));
            let max_abs = traj.iter().fold(0.0f64, |m, p| m.max(p.abs()));
            Ok((first, max_abs))
        })
        .collect::<Result<_>>()?;
    let n_positive = per_path.iter().filter(|(f, _)| f.is_some()).count();
    Ok(OracleStats {
        n_paths,
        side,
        n_positive,
        fraction_positive: if n_paths > 0 { n_positive as f64 / n_paths as f64 } else { 0.0 },
        first_positive: per_path.iter().map(|p| p.0).collect(),
        max_abs_payoff: per_path.iter().map(|p| p.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backtest::run_backtest;
    use crate::marketdata::{write_funding, write_prices};
    use crate::noarb::FeeTier;
    use crate::strategy::{Restriction, StrategySpec};
    use proptest::prelude::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_hours: 24 * 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn bounded_by_construction() {
        let cfg = SynthConfig {
            gap_vol: 40.0,
            gap_bound: 0.5,
            ..small(3)
        };
        let (s, _) = generate(&cfg).unwrap();
        assert!(s.observations().iter().all(|o| o.rho().abs() <= 0.5 + 1e-12));
    }

    #[test]
    fn reflection() {
        assert_eq!(reflect(0.3, 1.0), 0.3);
        assert_eq!(reflect(1.25, 1.0), 0.75);
        assert_eq!(reflect(-1.5, 1.0), -0.5);
        assert!((reflect(5.5, 1.0) - 0.5).abs() < 1e-12);
        for x in [-17.3, -3.2, 2.9, 9.99, 123.4] {
            assert!(reflect(x, 1.0).abs() <= 1.0);
        }
    }

    #[test]
    fn degenerate_noise() {
        let p = TheoryParams::default();
        let cfg = SynthConfig {
            gap_vol: 0.0,
            gap_mean: p.benchmark_deviation(),
            spot_vol: 0.0,
            spot_drift: 0.0,
            ..small(1)
        };
        let (s, f) = generate(&cfg).unwrap();
        for o in s.observations() {
            assert_eq!(o.spot, cfg.spot_start);
            assert!((o.rho() - p.benchmark_deviation()).abs() < 1e-9);
            let bench = crate::noarb::benchmark_price(o.spot, &p).unwrap();
            assert!((o.futures - bench).abs() < 1e-9 * bench);
        }
        assert!(f.events().iter().all(|e| (e.rate - 1e-4).abs() < 1e-12));
    }

    #[test]
    fn same_seed_same_bytes() {
        let emit = |seed| {
            let (s, f) = generate(&small(seed)).unwrap();
            let mut a = Vec::new();
            write_prices(&s, &mut a).unwrap();
            write_funding(&f, &mut a).unwrap();
            a
        };
        assert_eq!(emit(42), emit(42));
        assert_ne!(emit(42), emit(43));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SynthConfig { n_hours: 7, ..small(1) }).is_err());
        assert!(generate(&SynthConfig { gap_bound: 0.0, ..small(1) }).is_err());
        assert!(generate(&SynthConfig { gap_init: Some(3.0), ..small(1) }).is_err());
        assert!(generate(&SynthConfig { start: Timestamp(5), ..small(1) }).is_err());
    }

    #[test]
    fn oracle_requires_violation() {
        let b = DeviationBounds { rho_l: -0.4, rho_u: 0.6 };
        assert!(rma_payoff_oracle(&small(1), 4, &b, &TheoryParams::default()).is_err());
        let low = SynthConfig { gap_init: Some(-1.0), ..small(1) };
        let st = rma_payoff_oracle(&low, 4, &b, &TheoryParams::default()).unwrap();
        assert_eq!(st.side, Side::LongFuturesShortSpot);
        assert_eq!(st.first_positive.len(), 4);
    }

    #[test]
    fn oracle_is_schedule_independent() {
        let cfg = SynthConfig { gap_init: Some(1.0), n_hours: 200, ..small(9) };
        let b = DeviationBounds { rho_l: 0.11, rho_u: 0.11 };
        let a = rma_payoff_oracle(&cfg, 16, &b, &TheoryParams::default()).unwrap();
        let single: Vec<Option<f64>> = (0..16)
            .map(|i| {
                let path = generate_path(&cfg, i).unwrap();
                let t = payoff_trajectory(Side::ShortFuturesLongSpot, &path, 0, &TheoryParams::default()).unwrap();
                t.iter().position(|p| *p > 0.0).map(|k| k as f64 / HOURS_PER_YEAR)
            })
            .collect();
        for (x, y) in a.first_positive.iter().zip(&single) {
            assert_eq!(x.map(|v| (v * HOURS_PER_YEAR).round()), y.map(|v| (v * HOURS_PER_YEAR).round()));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn positive_gap_round_trips_never_lose(seed in 0u64..10_000, mean in 0.4f64..0.8) {
            let cfg = SynthConfig {
                seed,
                n_hours: 24 * 30,
                gap_mean: mean,
                gap_vol: 2.0,
                gap_reversion: 50.0,
                gap_bound: 1.5,
                ..SynthConfig::default()
            };
            let (s, f) = generate(&cfg).unwrap();
            prop_assume!(s.observations().iter().all(|o| o.rho() > 0.0));
            let bounds = DeviationBounds { rho_l: -0.5, rho_u: mean };
            let spec = StrategySpec::random_maturity_with(bounds, 0.3, Restriction::Unrestricted).unwrap();
            let rep = run_backtest(&s, &f, &spec, &FeeTier::NONE).unwrap();
            let mut trip = 0.0;
            let mut open = false;
            for r in &rep.returns {
                if r.active {
                    trip += r.total;
                    open = true;
                } else if open {
                    prop_assert!(trip >= -1e-15, "round trip lost {trip}");
                    trip = 0.0;
                    open = false;
                }
            }
        }
    }
}
