//! Trade signals on the annualized deviation `ρ`.
//!
//! Two rules are provided. The random-maturity rule opens when `ρ` leaves
//! the trading-cost band and closes when it first returns to the
//! frictionless benchmark. The two-threshold rule opens beyond `±u` and
//! closes inside `(−l, l)`; its `(u, l)` can be re-selected every month by a
//! grid search over the previous months.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::{simulate, summarize, Bar};
use crate::error::{Error, Result};
use crate::noarb::{deviation_bounds, DeviationBounds, FeeTier, Side, TheoryParams};
use crate::time::{Timestamp, SECONDS_PER_HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    OpenShortFutures,
    OpenLongFutures,
    Close,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    #[default]
    Unrestricted,
    /// Shorting spot is unavailable; only long spot/short futures trades.
    LongSpotOnly,
}

impl Restriction {
    pub fn allows(self, side: Side) -> bool {
        !(self == Restriction::LongSpotOnly && side == Side::LongFuturesShortSpot)
    }
}

/// Current position. Entry fields exist only while a position is open.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum PositionState {
    #[default]
    Flat,
    Open {
        side: Side,
        entry_timestamp: Timestamp,
        entry_futures: f64,
        entry_spot: f64,
    },
}

impl PositionState {
    pub fn side(&self) -> Option<Side> {
        match self {
            PositionState::Flat => None,
            PositionState::Open { side, .. } => Some(*side),
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, PositionState::Flat)
    }
}

/// Random-maturity rule: enter beyond the bound, leave at the benchmark.
pub fn rma_signal(
    rho: f64,
    state: &PositionState,
    bounds: &DeviationBounds,
    close_target: f64,
    restriction: Restriction,
) -> Action {
    match state.side() {
        None if rho > bounds.rho_u => Action::OpenShortFutures,
        None if rho < bounds.rho_l && restriction.allows(Side::LongFuturesShortSpot) => Action::OpenLongFutures,
        Some(Side::ShortFuturesLongSpot) if rho <= close_target => Action::Close,
        Some(Side::LongFuturesShortSpot) if rho >= close_target => Action::Close,
        _ => Action::Hold,
    }
}

/// Two-threshold rule: enter when `|ρ| > u`, exit when `|ρ| < l`. An open
/// position is never flipped directly.
pub fn two_threshold_signal(rho: f64, state: &PositionState, u: f64, l: f64, restriction: Restriction) -> Action {
    match state.side() {
        None if rho > u => Action::OpenShortFutures,
        None if rho < -u && restriction.allows(Side::LongFuturesShortSpot) => Action::OpenLongFutures,
        Some(_) if -l < rho && rho < l => Action::Close,
        _ => Action::Hold,
    }
}

/// Grid and schedule for re-selecting `(u, l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSearchConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    /// Calendar months of history used for each selection.
    pub lookback_months: u32,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        GridSearchConfig {
            grid_min: 0.0,
            grid_max: 2.0,
            grid_step: 0.1,
            lookback_months: 6,
        }
    }
}

impl GridSearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.grid_step > 0.0
            && self.grid_min >= 0.0
            && self.grid_max > self.grid_min
            && self.lookback_months > 0
            && [self.grid_min, self.grid_max, self.grid_step].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid grid search config {self:?}")))
        }
    }

    /// Grid levels from `grid_min` to `grid_max` inclusive.
    pub fn levels(&self) -> Vec<f64> {
        let n = ((self.grid_max - self.grid_min) / self.grid_step).round() as usize;
        (0..=n)
            .map(|i| ((self.grid_min + i as f64 * self.grid_step) * 1e9).round() / 1e9)
            .collect()
    }

    /// Every `(u, l)` with `u > l`, ordered by `u` then `l`.
    pub fn candidates(&self) -> Vec<(f64, f64)> {
        let levels = self.levels();
        let mut out = Vec::new();
        for &u in &levels {
            for &l in levels.iter().take_while(|&&l| l < u) {
                out.push((u, l));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    RandomMaturity {
        open_lower: f64,
        open_upper: f64,
        close_target: f64,
    },
    TwoThreshold {
        upper: f64,
        lower: f64,
    },
    /// Two-threshold rule with `(u, l)` re-selected at each month start.
    AdaptiveTwoThreshold(GridSearchConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub restriction: Restriction,
}

impl StrategySpec {
    /// Random-maturity rule with the cost band of `tier` and the benchmark
    /// deviation as close target.
    pub fn random_maturity(params: &TheoryParams, tier: &FeeTier, restriction: Restriction) -> Result<Self> {
        let bounds = deviation_bounds(params, tier)?;
        Self::random_maturity_with(bounds, params.benchmark_deviation(), restriction)
    }

    pub fn random_maturity_with(bounds: DeviationBounds, close_target: f64, restriction: Restriction) -> Result<Self> {
        let spec = StrategySpec {
            kind: StrategyKind::RandomMaturity {
                open_lower: bounds.rho_l,
                open_upper: bounds.rho_u,
                close_target,
            },
            restriction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn two_threshold(upper: f64, lower: f64, restriction: Restriction) -> Result<Self> {
        let spec = StrategySpec {
            kind: StrategyKind::TwoThreshold { upper, lower },
            restriction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn adaptive(config: GridSearchConfig, restriction: Restriction) -> Result<Self> {
        let spec = StrategySpec {
            kind: StrategyKind::AdaptiveTwoThreshold(config),
            restriction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            StrategyKind::RandomMaturity {
                open_lower,
                open_upper,
                close_target,
            } => {
                if !(open_lower <= close_target && close_target <= open_upper) {
                    return Err(Error::InvalidParameter(format!(
                        "random-maturity close target {close_target} must lie within [{open_lower}, {open_upper}]"
                    )));
                }
            }
            StrategyKind::TwoThreshold { upper, lower } => {
                if !(upper > lower && *lower >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "two-threshold rule needs u > l >= 0, got u={upper}, l={lower}"
                    )));
                }
            }
            StrategyKind::AdaptiveTwoThreshold(cfg) => cfg.validate()?,
        }
        Ok(())
    }
}

/// Outcome of one grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub upper: f64,
    pub lower: f64,
    /// Adjusted Sharpe ratio on the lookback window; 0 when undefined.
    pub sharpe: f64,
}

/// Scored candidate `(u, l, score)`.
pub type Scored = (f64, f64, f64);

/// `a` beats `b`: higher score, then smaller `u`, then smaller `l`. A total
/// order, so the winner does not depend on evaluation order.
fn beats(a: &Scored, b: &Scored) -> bool {
    a.2.total_cmp(&b.2)
        .then_with(|| b.0.total_cmp(&a.0))
        .then_with(|| b.1.total_cmp(&a.1))
        .is_gt()
}

/// Best of a set of scored candidates.
pub fn pick_best(scored: &[Scored]) -> Option<ThresholdChoice> {
    scored
        .iter()
        .copied()
        .reduce(|best, c| if beats(&c, &best) { c } else { best })
        .map(|(upper, lower, sharpe)| ThresholdChoice { upper, lower, sharpe })
}

/// Adjusted Sharpe ratio of every grid candidate over `history`, each run
/// from flat with a forced close at the end. Undefined ratios score 0.
pub fn score_candidates(
    history: &[Bar],
    config: &GridSearchConfig,
    tier: &FeeTier,
    restriction: Restriction,
    parallel: bool,
) -> Result<Vec<Scored>> {
    let eval = |&(u, l): &(f64, f64)| -> Result<Scored> {
        let sim = simulate(history, tier, |_, bar, state| two_threshold_signal(bar.rho, state, u, l, restriction))?;
        let m = summarize(&sim.returns);
        Ok((u, l, if m.sharpe_defined { m.sharpe } else { 0.0 }))
    };
    let cands = config.candidates();
    if parallel {
        cands.par_iter().map(eval).collect()
    } else {
        cands.iter().map(eval).collect()
    }
}

fn check_history_span(history: &[Bar], lookback_months: u32) -> Result<()> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => return Err(Error::InsufficientData("empty history".into())),
    };
    let end = Timestamp(last.0 + SECONDS_PER_HOUR);
    if first > end.minus_months(lookback_months) {
        return Err(Error::InsufficientData(format!(
            "history {first}..{last} is shorter than {lookback_months} months"
        )));
    }
    Ok(())
}

/// Selects the `(u, l)` with the highest adjusted Sharpe ratio over
/// `history`, which must span at least the configured lookback.
pub fn select_thresholds(
    history: &[Bar],
    config: &GridSearchConfig,
    tier: &FeeTier,
    restriction: Restriction,
) -> Result<ThresholdChoice> {
    config.validate()?;
    check_history_span(history, config.lookback_months)?;
    select_thresholds_unchecked(history, config, tier, restriction)
}

/// [`select_thresholds`] without the span check, for callers that cut the
/// window themselves.
pub(crate) fn select_thresholds_unchecked(
    history: &[Bar],
    config: &GridSearchConfig,
    tier: &FeeTier,
    restriction: Restriction,
) -> Result<ThresholdChoice> {
    let scored = score_candidates(history, config, tier, restriction, true)?;
    pick_best(&scored).ok_or_else(|| Error::InvalidParameter("empty candidate grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HIGH_BOUNDS: DeviationBounds = DeviationBounds {
        rho_l: -1.685,
        rho_u: 1.901,
    };

    fn open(side: Side) -> PositionState {
        PositionState::Open {
            side,
            entry_timestamp: Timestamp(0),
            entry_futures: 1.0,
            entry_spot: 1.0,
        }
    }

    #[test]
    fn rma_examples() {
        use Restriction::*;
        let flat = PositionState::Flat;
        assert_eq!(rma_signal(2.0, &flat, &HIGH_BOUNDS, 0.11, Unrestricted), Action::OpenShortFutures);
        assert_eq!(
            rma_signal(0.11, &open(Side::ShortFuturesLongSpot), &HIGH_BOUNDS, 0.11, Unrestricted),
            Action::Close
        );
        let low = DeviationBounds { rho_l: -0.423, rho_u: 0.641 };
        assert_eq!(rma_signal(0.0, &flat, &low, 0.11, Unrestricted), Action::Hold);
        assert_eq!(rma_signal(-0.5, &flat, &low, 0.11, Unrestricted), Action::OpenLongFutures);
        assert_eq!(rma_signal(-0.5, &flat, &low, 0.11, LongSpotOnly), Action::Hold);
        let long = open(Side::LongFuturesShortSpot);
        assert_eq!(rma_signal(0.05, &long, &low, 0.11, Unrestricted), Action::Hold);
        assert_eq!(rma_signal(0.2, &long, &low, 0.11, Unrestricted), Action::Close);
        assert_eq!(rma_signal(0.5, &open(Side::ShortFuturesLongSpot), &low, 0.11, Unrestricted), Action::Hold);
    }

    #[test]
    fn two_threshold_examples() {
        use Restriction::*;
        let flat = PositionState::Flat;
        let short = open(Side::ShortFuturesLongSpot);
        assert_eq!(two_threshold_signal(0.8, &flat, 0.7, 0.1, Unrestricted), Action::OpenShortFutures);
        assert_eq!(two_threshold_signal(0.05, &short, 0.7, 0.1, Unrestricted), Action::Close);
        assert_eq!(two_threshold_signal(-0.15, &short, 0.7, 0.1, Unrestricted), Action::Hold);
        assert_eq!(two_threshold_signal(-0.8, &short, 0.7, 0.1, Unrestricted), Action::Hold);
        assert_eq!(two_threshold_signal(-0.8, &flat, 0.7, 0.1, Unrestricted), Action::OpenLongFutures);
        assert_eq!(two_threshold_signal(-0.8, &flat, 0.7, 0.1, LongSpotOnly), Action::Hold);
        assert_eq!(two_threshold_signal(0.05, &flat, 0.7, 0.1, Unrestricted), Action::Hold);
        // l = 0 leaves an empty close band.
        assert_eq!(two_threshold_signal(0.0, &short, 0.7, 0.0, Unrestricted), Action::Hold);
    }

    /// Every (rho, state) cell of the two-threshold rule table.
    #[test]
    fn two_threshold_rule_table() {
        let (u, l) = (0.7, 0.1);
        let rhos = [-0.9, -0.7, -0.4, -0.1, -0.05, 0.0, 0.05, 0.1, 0.4, 0.7, 0.9];
        for rho in rhos {
            let expect_flat = if rho > u {
                Action::OpenShortFutures
            } else if rho < -u {
                Action::OpenLongFutures
            } else {
                Action::Hold
            };
            assert_eq!(two_threshold_signal(rho, &PositionState::Flat, u, l, Restriction::Unrestricted), expect_flat);
            let inside = rho.abs() < l;
            for side in [Side::ShortFuturesLongSpot, Side::LongFuturesShortSpot] {
                let got = two_threshold_signal(rho, &open(side), u, l, Restriction::Unrestricted);
                assert_eq!(got, if inside { Action::Close } else { Action::Hold }, "rho={rho}");
            }
        }
    }

    #[test]
    fn grid_has_210_pairs() {
        let cfg = GridSearchConfig::default();
        assert_eq!(cfg.levels().len(), 21);
        let c = cfg.candidates();
        assert_eq!(c.len(), 210);
        assert!(c.iter().all(|(u, l)| u > l));
        assert_eq!(c[0], (0.1, 0.0));
        assert_eq!(*c.last().unwrap(), (2.0, 1.9));
    }

    #[test]
    fn spec_validation() {
        assert!(StrategySpec::two_threshold(0.5, 0.5, Restriction::Unrestricted).is_err());
        assert!(StrategySpec::two_threshold(0.5, -0.1, Restriction::Unrestricted).is_err());
        assert!(StrategySpec::two_threshold(0.7, 0.1, Restriction::Unrestricted).is_ok());
        let bounds = DeviationBounds { rho_l: -0.4, rho_u: 0.6 };
        assert!(StrategySpec::random_maturity_with(bounds, 0.9, Restriction::Unrestricted).is_err());
        let rma = StrategySpec::random_maturity(&TheoryParams::default(), &FeeTier::HIGH, Restriction::LongSpotOnly).unwrap();
        match rma.kind {
            StrategyKind::RandomMaturity { close_target, .. } => assert!((close_target - 0.1095).abs() < 1e-3),
            _ => unreachable!(),
        }
        let bad = GridSearchConfig { grid_step: 0.0, ..Default::default() };
        assert!(StrategySpec::adaptive(bad, Restriction::Unrestricted).is_err());
    }

    #[test]
    fn tie_break_prefers_small_thresholds() {
        let scored = vec![(0.3, 0.1, 1.0), (0.2, 0.1, 1.0), (0.2, 0.0, 1.0), (0.5, 0.0, 0.5)];
        let best = pick_best(&scored).unwrap();
        assert_eq!((best.upper, best.lower), (0.2, 0.0));
        let mut rev = scored.clone();
        rev.reverse();
        assert_eq!(pick_best(&rev), Some(best));
    }
}
