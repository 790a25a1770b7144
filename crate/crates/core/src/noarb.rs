//! Frictionless benchmark price, trading-cost deviation bounds, the
//! closed-form bound process, and the discounted payoff ledger of the two
//! hedged trades (long spot/short futures and its mirror).
//!
//! Time is measured in years. `kappa` converts the instantaneous
//! futures-spot gap into a funding flow; with funding paid every 8 hours
//! and a 365-day year, `kappa = 1095`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketdata::{Observation, PERIODS_PER_YEAR};

/// Constant risk-free rate and funding scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    /// Continuously compounded annual risk-free rate.
    pub r: f64,
    /// Funding scale per year.
    pub kappa: f64,
}

impl TheoryParams {
    /// An 8-hour rate of 0.01%, i.e. 10.95% per year.
    pub const DEFAULT_RATE: f64 = 0.1095;
    pub const DEFAULT_KAPPA: f64 = 1095.0;

    pub fn new(r: f64, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::InvalidParameter(format!("r must be non-negative, got {r}")));
        }
        if r >= kappa {
            return Err(Error::InvalidParameter(format!("r ({r}) must be below kappa ({kappa})")));
        }
        Ok(TheoryParams { r, kappa })
    }

    /// Same kappa, zero rate. Empirical P&L ignores discounting.
    pub fn without_rate(self) -> Self {
        TheoryParams { r: 0.0, ..self }
    }

    /// `1 + r/κ`, the benchmark futures/spot ratio.
    pub fn carry_factor(&self) -> f64 {
        1.0 + self.r / self.kappa
    }

    /// Annualized deviation of the benchmark price, `1095 · ln(1 + r/κ)`.
    pub fn benchmark_deviation(&self) -> f64 {
        PERIODS_PER_YEAR * (self.r / self.kappa).ln_1p()
    }
}

impl Default for TheoryParams {
    fn default() -> Self {
        TheoryParams {
            r: Self::DEFAULT_RATE,
            kappa: Self::DEFAULT_KAPPA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierName {
    None,
    Low,
    Medium,
    High,
    Custom,
}

impl std::fmt::Display for TierName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TierName::None => "none",
            TierName::Low => "low",
            TierName::Medium => "medium",
            TierName::High => "high",
            TierName::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Maker fees, as fractions of notional, paid on each leg at each trade.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeTier {
    pub name: TierName,
    pub spot_fee: f64,
    pub futures_fee: f64,
}

impl FeeTier {
    pub const NONE: FeeTier = FeeTier {
        name: TierName::None,
        spot_fee: 0.0,
        futures_fee: 0.0,
    };
    pub const LOW: FeeTier = FeeTier {
        name: TierName::Low,
        spot_fee: 0.000225,
        futures_fee: 0.000018,
    };
    pub const MEDIUM: FeeTier = FeeTier {
        name: TierName::Medium,
        spot_fee: 0.00045,
        futures_fee: 0.000072,
    };
    pub const HIGH: FeeTier = FeeTier {
        name: TierName::High,
        spot_fee: 0.000675,
        futures_fee: 0.000144,
    };

    pub const ALL: [FeeTier; 4] = [Self::NONE, Self::LOW, Self::MEDIUM, Self::HIGH];

    pub fn custom(spot_fee: f64, futures_fee: f64) -> Result<Self> {
        for fee in [spot_fee, futures_fee] {
            if !(fee.is_finite() && fee >= 0.0) {
                return Err(Error::InvalidParameter(format!("fees must be non-negative, got {fee}")));
            }
        }
        Ok(FeeTier {
            name: TierName::Custom,
            spot_fee,
            futures_fee,
        })
    }

    pub fn by_name(name: &str) -> Option<FeeTier> {
        match name.trim().to_ascii_lowercase().as_str() {
            "none" | "no" => Some(Self::NONE),
            "low" => Some(Self::LOW),
            "medium" => Some(Self::MEDIUM),
            "high" => Some(Self::HIGH),
            _ => None,
        }
    }

    /// Fee for opening (or closing) both legs once.
    pub fn one_way_cost(&self) -> f64 {
        self.spot_fee + self.futures_fee
    }

    /// `C = 2 · (spot_fee + futures_fee)`: open and close both legs.
    pub fn round_trip_cost(&self) -> f64 {
        2.0 * self.one_way_cost()
    }
}

/// Annualized band of deviations inside which no random-maturity
/// arbitrage survives trading costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBounds {
    pub rho_l: f64,
    pub rho_u: f64,
}

impl DeviationBounds {
    pub fn width(&self) -> f64 {
        self.rho_u - self.rho_l
    }

    pub fn contains(&self, rho: f64) -> bool {
        rho >= self.rho_l && rho <= self.rho_u
    }
}

/// Both bounds as percentages with one decimal, e.g. `-168.5% 190.1%`.
impl std::fmt::Display for DeviationBounds {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}% {:.1}%", 100.0 * self.rho_l, 100.0 * self.rho_u)
    }
}

/// Frictionless no-arbitrage futures price `S · (1 + r/κ)`.
pub fn benchmark_price(spot_price: f64, params: &TheoryParams) -> Result<f64> {
    if !(spot_price.is_finite() && spot_price > 0.0) {
        return Err(Error::NonPositivePrice(spot_price));
    }
    Ok(spot_price * params.carry_factor())
}

/// `ρ_l = 1095·ln(1 + r/κ − C)` and `ρ_u = 1095·ln(1 + r/κ + C)`, with `C`
/// the round-trip cost as a fraction of notional.
pub fn deviation_bounds(params: &TheoryParams, tier: &FeeTier) -> Result<DeviationBounds> {
    let c = tier.round_trip_cost();
    let carry = params.r / params.kappa;
    let lower_arg = 1.0 + carry - c;
    if !(lower_arg > 0.0) {
        return Err(Error::BoundArgumentNonPositive(lower_arg));
    }
    Ok(DeviationBounds {
        rho_l: PERIODS_PER_YEAR * (carry - c).ln_1p(),
        rho_u: PERIODS_PER_YEAR * (carry + c).ln_1p(),
    })
}

/// Solution of `u(t) = e^{−rt}F₀ − S₀ + κ∫₀ᵗ u(s) ds`:
///
/// ```text
/// u(t) = F₀ r e^{−rt} / (κ + r) + (F₀ / (1 + r/κ) − S₀) e^{κt}
/// ```
///
/// It is the lower envelope of discounted gaps on any path where the long
/// spot/short futures trade never pays off, and the upper envelope for the
/// mirror trade.
pub fn bound_process(t: f64, f0: f64, s0: f64, params: &TheoryParams) -> f64 {
    let TheoryParams { r, kappa } = *params;
    f0 * r * (-r * t).exp() / (kappa + r) + (f0 / params.carry_factor() - s0) * (kappa * t).exp()
}

/// Direction of a hedged futures/spot position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Long spot, short futures. Receives funding when it is positive.
    ShortFuturesLongSpot,
    /// Short spot, long futures.
    LongFuturesShortSpot,
}

impl Side {
    /// +1 for the short-futures side, −1 for its mirror.
    pub fn sign(self) -> f64 {
        match self {
            Side::ShortFuturesLongSpot => 1.0,
            Side::LongFuturesShortSpot => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::ShortFuturesLongSpot => Side::LongFuturesShortSpot,
            Side::LongFuturesShortSpot => Side::ShortFuturesLongSpot,
        }
    }
}

/// `∫₀¹ e^{−xu} du` and `∫₀¹ u·e^{−xu} du`, stable for small `x`.
fn exp_weights(x: f64) -> (f64, f64) {
    if x.abs() < 0.1 {
        // Σ (−x)^k / (k!(k+1)) and Σ (−x)^k / (k!(k+2)).
        let (mut w0, mut w1) = (0.0, 0.0);
        let mut term = 1.0;
        for k in 0..14 {
            let kf = k as f64;
            w0 += term / (kf + 1.0);
            w1 += term / (kf + 2.0);
            term *= -x / (kf + 1.0);
        }
        (w0, w1)
    } else {
        let e = (-x).exp();
        ((1.0 - e) / x, (1.0 - (1.0 + x) * e) / (x * x))
    }
}

/// `∫ g(s) e^{−rs} ds` over `[a, b]` for `g` linear between `ga` and `gb`.
/// Reduces to the trapezoid rule when `r = 0`.
fn discounted_segment(a: f64, b: f64, ga: f64, gb: f64, r: f64) -> f64 {
    let h = b - a;
    let (w0, w1) = exp_weights(r * h);
    (-r * a).exp() * h * (ga * w0 + (gb - ga) * w1)
}

/// Discounted payoff, at every observation from `entry` onward, of a trade
/// opened at `path[entry]`. Element 0 (the entry itself) is always zero.
///
/// For the long spot/short futures side the payoff at `t` is
///
/// ```text
/// e^{−rt}F₀ − e^{−rt}(F_t − S_t) − S₀ + κ ∫₀ᵗ (F_s − S_s) e^{−rs} ds
/// ```
///
/// and the mirror side receives its negation. The gap is interpolated
/// linearly between observations and the discount factor is integrated
/// exactly, so the quadrature is the trapezoid rule whenever `r = 0`.
pub fn payoff_trajectory(side: Side, path: &[Observation], entry: usize, params: &TheoryParams) -> Result<Vec<f64>> {
    if path.len() < 2 {
        return Err(Error::InsufficientData("payoff needs at least 2 observations".into()));
    }
    if entry >= path.len() {
        return Err(Error::InvalidParameter(format!("entry index {entry} outside path of {}", path.len())));
    }
    let TheoryParams { r, kappa } = *params;
    let start = path[entry];
    let (f0, s0) = (start.futures, start.spot);
    let sign = side.sign();
    let mut out = Vec::with_capacity(path.len() - entry);
    let mut funding = 0.0;
    let mut prev_t = 0.0;
    let mut prev_gap = start.gap();
    out.push(0.0);
    for obs in &path[entry + 1..] {
        let t = start.timestamp.years_until(obs.timestamp);
        let gap = obs.gap();
        funding += discounted_segment(prev_t, t, prev_gap, gap, r);
        let disc = (-r * t).exp();
        let mark = disc * (f0 - gap) - s0;
        out.push(sign * (mark + kappa * funding));
        prev_t = t;
        prev_gap = gap;
    }
    Ok(out)
}

/// Discounted payoff of holding `side` from `path[entry]` to `path[exit]`.
pub fn discounted_payoff(side: Side, path: &[Observation], entry: usize, exit: usize, params: &TheoryParams) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::InsufficientData("payoff needs at least 2 observations".into()));
    }
    if entry >= exit || exit >= path.len() {
        return Err(Error::InvalidParameter(format!(
            "need entry < exit < {}, got entry {entry}, exit {exit}",
            path.len()
        )));
    }
    let traj = payoff_trajectory(side, &path[..=exit], entry, params)?;
    Ok(*traj.last().expect("non-empty trajectory"))
}
