//! No-arbitrage pricing and arbitrage backtesting for perpetual futures.
//!
//! The crate is organised around the life of a futures-spot basis trade:
//!
//! * [`marketdata`] reads and validates price, funding and exogenous series
//!   and computes the annualized deviation `ρ = 1095·(ln F − ln S)`.
//! * [`noarb`] holds the frictionless benchmark `F = S(1 + r/κ)`, the
//!   trading-cost bounds on `ρ`, and the discounted payoff ledger.
//! * [`funding`] accrues and synthesizes funding payments.
//! * [`strategy`] turns deviations into trade signals, including the
//!   rolling grid search for the two-threshold rule.
//! * [`backtest`] simulates positions hour by hour and reports annualized,
//!   activity-adjusted performance with a price/funding/fee decomposition.
//! * [`analysis`] covers correlations, OLS with Newey-West errors, and the
//!   funding-time event study.
//! * [`synth`] generates seeded synthetic markets with a bounded gap.
//!
//! The guide under `book/` walks through each of these with runnable
//! snippets.

pub mod analysis;
pub mod backtest;
pub mod error;
pub mod funding;
pub mod marketdata;
pub mod noarb;
pub mod rng;
pub mod strategy;
pub mod synth;
pub mod time;

pub use error::{Error, Result};
pub use marketdata::{deviation, FundingSchedule, MarketSeries, Observation, PERIODS_PER_YEAR};
pub use noarb::{benchmark_price, deviation_bounds, DeviationBounds, FeeTier, Side, TheoryParams};
pub use time::Timestamp;

// Compiles every Rust snippet in the guide as a doctest.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/deviation.md")]
    mod deviation {}
    #[doc = include_str!("../../../book/src/no-arbitrage.md")]
    mod no_arbitrage {}
    #[doc = include_str!("../../../book/src/funding.md")]
    mod funding {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/backtesting.md")]
    mod backtesting {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/synthetic-markets.md")]
    mod synthetic_markets {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
