mod common;

use common::*;
use perpfund::backtest::{prepare_bars, replay, run_backtest, simulate, Bar};
use perpfund::marketdata::FundingEvent;
use perpfund::strategy::{
    pick_best, rma_signal, score_candidates, select_thresholds, Action, GridSearchConfig, PositionState,
    Restriction, StrategySpec,
};
use perpfund::synth::{generate, SynthConfig};
use perpfund::time::FUNDING_INTERVAL;
use perpfund::{deviation_bounds, Error, FeeTier, FundingSchedule, Side, TheoryParams, Timestamp};
use proptest::prelude::*;

fn jan_2021() -> Timestamp {
    Timestamp::from_ymd_hms(2021, 1, 1, 0, 0, 0).unwrap()
}

fn six_months_of(cycle: &[Phase]) -> Vec<Bar> {
    let (s, f) = build(jan_2021(), &repeat(cycle, 24 * 190));
    prepare_bars(&s, &f)
}

#[test]
fn single_profitable_band_is_selected() {
    let bars = six_months_of(&one_profitable_band());
    let cfg = GridSearchConfig::default();
    let scored = score_candidates(&bars, &cfg, &FeeTier::NONE, Restriction::Unrestricted, false).unwrap();
    assert_eq!(scored.len(), 210);
    let winners: Vec<_> = scored.iter().filter(|s| s.2 > 0.0).collect();
    assert_eq!(winners.len(), 1, "{winners:?}");
    let pick = select_thresholds(&bars, &cfg, &FeeTier::NONE, Restriction::Unrestricted).unwrap();
    assert!((pick.upper - 0.7).abs() < 1e-12 && (pick.lower - 0.1).abs() < 1e-12);
}

#[test]
fn flat_history_picks_the_smallest_pair() {
    let bars = six_months_of(&[phase(0.0, 0.0)]);
    let pick = select_thresholds(&bars, &GridSearchConfig::default(), &FeeTier::HIGH, Restriction::Unrestricted).unwrap();
    assert_eq!((pick.upper, pick.lower, pick.sharpe), (0.1, 0.0, 0.0));
}

#[test]
fn short_history_is_rejected() {
    let (s, f) = build(jan_2021(), &repeat(&[phase(0.0, 0.0)], 24 * 100));
    let bars = prepare_bars(&s, &f);
    let err = select_thresholds(&bars, &GridSearchConfig::default(), &FeeTier::NONE, Restriction::Unrestricted);
    assert!(matches!(err, Err(Error::InsufficientData(_))));
}

#[test]
fn parallel_and_sequential_scores_agree() {
    let (s, f) = generate(&SynthConfig {
        n_hours: 24 * 60,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let bars = prepare_bars(&s, &f);
    let cfg = GridSearchConfig::default();
    let a = score_candidates(&bars, &cfg, &FeeTier::LOW, Restriction::Unrestricted, true).unwrap();
    let b = score_candidates(&bars, &cfg, &FeeTier::LOW, Restriction::Unrestricted, false).unwrap();
    assert_eq!(a, b);
    let mut rev = a.clone();
    rev.reverse();
    assert_eq!(pick_best(&a), pick_best(&rev));
}

#[test]
fn wider_fees_mean_less_time_in_the_market() {
    let (s, f) = build(jan_2021(), &repeat(&fee_ladder(), 24 * 300));
    let spec = StrategySpec::adaptive(GridSearchConfig::default(), Restriction::Unrestricted).unwrap();
    let active: Vec<f64> = FeeTier::ALL
        .iter()
        .map(|t| run_backtest(&s, &f, &spec, t).unwrap().active_pct())
        .collect();
    assert!(active.windows(2).all(|w| w[1] < w[0]), "{active:?}");
}

#[test]
fn adaptive_run_stays_flat_during_warm_up() {
    let (s, f) = build(jan_2021(), &repeat(&one_profitable_band(), 24 * 240));
    let spec = StrategySpec::adaptive(GridSearchConfig::default(), Restriction::Unrestricted).unwrap();
    let rep = run_backtest(&s, &f, &spec, &FeeTier::NONE).unwrap();
    let first_choice = rep.selections.iter().find(|s| s.choice.is_some()).unwrap();
    assert_eq!(first_choice.effective_from, Timestamp::from_ymd_hms(2021, 7, 1, 0, 0, 0).unwrap());
    assert!(rep
        .returns
        .iter()
        .filter(|r| r.timestamp < first_choice.effective_from)
        .all(|r| !r.active));
    let c = first_choice.choice.unwrap();
    assert_eq!((c.upper, c.lower), (0.7, 0.1));
    assert!(rep.overall.return_ann > 0.0);
}

fn synth(seed: u64) -> (perpfund::MarketSeries, FundingSchedule) {
    generate(&SynthConfig {
        seed,
        n_hours: 24 * 90,
        gap_vol: 6.0,
        gap_reversion: 80.0,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn rma_actions(bars: &[Bar], restriction: Restriction) -> Vec<Action> {
    let p = TheoryParams::default();
    let bounds = deviation_bounds(&p, &FeeTier::LOW).unwrap();
    let close = p.benchmark_deviation();
    simulate(bars, &FeeTier::NONE, |_, b, st| rma_signal(b.rho, st, &bounds, close, restriction))
        .unwrap()
        .actions
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn accounting_identity_and_fee_monotonicity(seed in 0u64..1_000) {
        let (s, f) = synth(seed);
        let bars = prepare_bars(&s, &f);
        let actions = rma_actions(&bars, Restriction::Unrestricted);
        let mut prev = f64::INFINITY;
        for tier in FeeTier::ALL {
            let out = replay(&bars, &actions, &tier).unwrap();
            for r in &out.returns {
                prop_assert_eq!(r.total, r.price + r.funding + r.fee);
                prop_assert!(r.fee <= 0.0);
                if !r.active {
                    prop_assert_eq!((r.total, r.price, r.funding, r.fee), (0.0, 0.0, 0.0, 0.0));
                }
            }
            let total: f64 = out.returns.iter().map(|r| r.total).sum();
            prop_assert!(total <= prev);
            prev = total;
        }
    }

    #[test]
    fn flipping_sides_negates_price(seed in 0u64..1_000) {
        let (s, _) = synth(seed);
        let quiet = FundingSchedule::new("SYN", zero_rates(&s)).unwrap();
        let bars = prepare_bars(&s, &quiet);
        let actions = rma_actions(&bars, Restriction::Unrestricted);
        let flipped: Vec<Action> = actions.iter().map(|a| match a {
            Action::OpenShortFutures => Action::OpenLongFutures,
            Action::OpenLongFutures => Action::OpenShortFutures,
            other => *other,
        }).collect();
        let a = replay(&bars, &actions, &FeeTier::NONE).unwrap();
        let b = replay(&bars, &flipped, &FeeTier::NONE).unwrap();
        for (x, y) in a.returns.iter().zip(&b.returns) {
            prop_assert_eq!(x.price, -y.price);
        }
    }

    #[test]
    fn long_spot_only_never_shorts_spot(seed in 0u64..1_000) {
        let (s, f) = synth(seed);
        let bars = prepare_bars(&s, &f);
        let p = TheoryParams::default();
        let bounds = deviation_bounds(&p, &FeeTier::NONE).unwrap();
        let mut sides = Vec::new();
        let out = simulate(&bars, &FeeTier::NONE, |_, b, st: &PositionState| {
            sides.extend(st.side());
            rma_signal(b.rho, st, &bounds, p.benchmark_deviation(), Restriction::LongSpotOnly)
        }).unwrap();
        prop_assert!(sides.iter().all(|s| *s == Side::ShortFuturesLongSpot));
        prop_assert!(!out.actions.contains(&Action::OpenLongFutures));
        for (r, b) in out.returns.iter().zip(&bars) {
            if r.active && b.funding_rate > 0.0 {
                prop_assert!(r.funding >= 0.0);
            }
        }
    }
}

/// A zero-rate event at every boundary the series touches.
fn zero_rates(s: &perpfund::MarketSeries) -> Vec<FundingEvent> {
    let first = s.observations()[0].timestamp.0;
    let last = s.observations().last().unwrap().timestamp.0;
    (first.div_euclid(FUNDING_INTERVAL)..=last.div_euclid(FUNDING_INTERVAL) + 1)
        .map(|k| FundingEvent { timestamp: Timestamp(k * FUNDING_INTERVAL), rate: 0.0 })
        .collect()
}
