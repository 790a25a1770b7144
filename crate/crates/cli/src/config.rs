//! Run configuration: a line-oriented `key = value` file with sections.
//!
//! ```text
//! [run]
//! output_dir = out            # relative to this file
//! tier = none, low            # one or more of none/low/medium/high, or custom
//!
//! [theory]
//! r = 0.1095
//! kappa = 1095
//!
//! [strategy]
//! kind = random_maturity      # or two_threshold, adaptive
//! restriction = unrestricted  # or long_spot_only
//!
//! [asset.BTC]
//! prices = btc_prices.csv
//! funding = btc_funding.csv
//! minutes = btc_minutes.csv   # optional, event study only
//!
//! [exogenous.fng]
//! path = fng.csv
//! lag_days = 1
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ini::Ini;
use perpfund::strategy::{GridSearchConfig, Restriction, StrategySpec};
use perpfund::{FeeTier, TheoryParams};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum StrategyChoice {
    /// Random-maturity rule whose band follows the fee tier being run.
    RandomMaturity,
    TwoThreshold { upper: f64, lower: f64 },
    Adaptive(GridSearchConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssetConfig {
    pub symbol: String,
    pub prices: PathBuf,
    pub funding: Option<PathBuf>,
    pub minutes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousConfig {
    pub name: String,
    pub path: PathBuf,
    /// Days the series is shifted forward before alignment.
    pub lag_days: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub tiers: Vec<FeeTier>,
    pub theory: TheoryParams,
    pub strategy: StrategyChoice,
    pub restriction: Restriction,
    pub return_lookback_months: u32,
    pub hac_lag: Option<usize>,
    pub assets: Vec<AssetConfig>,
    pub exogenous: Vec<ExogenousConfig>,
}

impl RunConfig {
    /// The strategy to run under `tier`.
    pub fn spec_for(&self, tier: &FeeTier) -> Result<StrategySpec, CliError> {
        let spec = match &self.strategy {
            StrategyChoice::RandomMaturity => StrategySpec::random_maturity(&self.theory, tier, self.restriction),
            StrategyChoice::TwoThreshold { upper, lower } => {
                StrategySpec::two_threshold(*upper, *lower, self.restriction)
            }
            StrategyChoice::Adaptive(g) => StrategySpec::adaptive(*g, self.restriction),
        };
        spec.map_err(|e| CliError::Validation(format!("[strategy] under tier {}: {e}", tier.name)))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses configuration text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let text: String = text.lines().map(|l| strip_inline_comment(l).to_string() + "\n").collect();
        let ini = Ini::load_from_str(&text).map_err(|e| CliError::Validation(e.to_string()))?;
        let mut sections: BTreeMap<String, Section> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(invalid(format!("`{k}` must appear under a section header")));
                }
                continue;
            };
            let mut sec = Section::new(name);
            for (k, v) in props.iter() {
                if sec.values.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(invalid(format!("[{name}] {k}: given twice")));
                }
            }
            if sections.insert(name.to_string(), sec).is_some() {
                return Err(invalid(format!("[{name}]: section given twice")));
            }
            order.push(name.to_string());
        }

        let mut run = sections.remove("run").unwrap_or_else(|| Section::new("run"));
        let mut theory = sections.remove("theory").unwrap_or_else(|| Section::new("theory"));
        let mut strategy = sections.remove("strategy").unwrap_or_else(|| Section::new("strategy"));
        let mut analysis = sections.remove("analysis").unwrap_or_else(|| Section::new("analysis"));

        let output_dir = base.join(run.take("output_dir").unwrap_or_else(|| "out".into()));
        let tiers = parse_tiers(&mut run)?;
        run.finish()?;

        let defaults = TheoryParams::default();
        let r = theory.number("r")?.unwrap_or(defaults.r);
        let kappa = theory.number("kappa")?.unwrap_or(defaults.kappa);
        let theory_params =
            TheoryParams::new(r, kappa).map_err(|e| invalid(format!("[theory]: {e}")))?;
        theory.finish()?;

        let restriction = match strategy.take("restriction").as_deref() {
            None | Some("unrestricted") => Restriction::Unrestricted,
            Some("long_spot_only") => Restriction::LongSpotOnly,
            Some(other) => {
                return Err(invalid(format!(
                    "[strategy] restriction: expected unrestricted or long_spot_only, got `{other}`"
                )))
            }
        };
        let strategy_choice = parse_strategy(&mut strategy)?;
        strategy.finish()?;

        let return_lookback_months = analysis.number("return_lookback_months")?.unwrap_or(4.0);
        let hac_lag = analysis.number("hac_lag")?;
        analysis.finish()?;
        let return_lookback_months = whole(return_lookback_months, "[analysis] return_lookback_months", 1)? as u32;
        let hac_lag = hac_lag.map(|v| whole(v, "[analysis] hac_lag", 0)).transpose()?.map(|v| v as usize);

        let mut assets = Vec::new();
        let mut exogenous = Vec::new();
        for name in order {
            let Some(mut sec) = sections.remove(&name) else { continue };
            if let Some(symbol) = name.strip_prefix("asset.") {
                let prices = sec.path("prices", base)?.ok_or_else(|| invalid(format!("[{name}] prices: missing")))?;
                let funding = sec.path("funding", base)?;
                let minutes = sec.path("minutes", base)?;
                sec.finish()?;
                assets.push(AssetConfig {
                    symbol: symbol.to_string(),
                    prices,
                    funding,
                    minutes,
                });
            } else if let Some(series) = name.strip_prefix("exogenous.") {
                let path = sec.path("path", base)?.ok_or_else(|| invalid(format!("[{name}] path: missing")))?;
                let lag_days = sec.number("lag_days")?.unwrap_or(0.0);
                sec.finish()?;
                exogenous.push(ExogenousConfig {
                    name: series.to_string(),
                    path,
                    lag_days: whole(lag_days, &format!("[{name}] lag_days"), 0)? as u32,
                });
            } else {
                return Err(invalid(format!("[{name}]: unknown section")));
            }
        }
        if assets.is_empty() {
            return Err(invalid("no [asset.<symbol>] section".to_string()));
        }
        if let Some(a) = assets.iter().find(|a| a.symbol.is_empty()) {
            return Err(invalid(format!("[asset.{}]: empty symbol", a.symbol)));
        }

        Ok(RunConfig {
            output_dir,
            tiers,
            theory: theory_params,
            strategy: strategy_choice,
            restriction,
            return_lookback_months,
            hac_lag,
            assets,
            exogenous,
        })
    }
}

/// Drops a trailing comment introduced by whitespace then `#` or `;`.
fn strip_inline_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    let cut = (1..bytes.len()).find(|&i| matches!(bytes[i], b'#' | b';') && bytes[i - 1].is_ascii_whitespace());
    match cut {
        Some(i) => line[..i].trim_end(),
        None => line,
    }
}

fn invalid(msg: String) -> CliError {
    CliError::Validation(msg)
}

fn whole(v: f64, field: &str, min: u64) -> Result<u64, CliError> {
    if v.fract() == 0.0 && v >= min as f64 && v < 1e9 {
        Ok(v as u64)
    } else {
        Err(invalid(format!("{field}: expected a whole number >= {min}, got {v}")))
    }
}

fn parse_tiers(run: &mut Section) -> Result<Vec<FeeTier>, CliError> {
    let raw = run.take("tier").unwrap_or_else(|| "none".into());
    let spot_fee = run.number("spot_fee")?;
    let futures_fee = run.number("futures_fee")?;
    let mut tiers = Vec::new();
    for name in raw.split(',').map(str::trim) {
        let tier = if name == "custom" {
            let (Some(s), Some(f)) = (spot_fee, futures_fee) else {
                return Err(invalid("[run] tier: custom needs spot_fee and futures_fee".into()));
            };
            FeeTier::custom(s, f).map_err(|e| invalid(format!("[run] tier: {e}")))?
        } else {
            FeeTier::by_name(name).ok_or_else(|| {
                invalid(format!("[run] tier: expected none, low, medium, high or custom, got `{name}`"))
            })?
        };
        if tiers.contains(&tier) {
            return Err(invalid(format!("[run] tier: `{name}` listed twice")));
        }
        tiers.push(tier);
    }
    if !raw.split(',').any(|n| n.trim() == "custom") && (spot_fee.is_some() || futures_fee.is_some()) {
        return Err(invalid("[run] spot_fee/futures_fee: only used with tier = custom".into()));
    }
    Ok(tiers)
}

fn parse_strategy(s: &mut Section) -> Result<StrategyChoice, CliError> {
    let kind = s.take("kind").unwrap_or_else(|| "random_maturity".into());
    let choice = match kind.as_str() {
        "random_maturity" => StrategyChoice::RandomMaturity,
        "two_threshold" => {
            let upper = s.number("upper")?.ok_or_else(|| invalid("[strategy] upper: missing".into()))?;
            let lower = s.number("lower")?.ok_or_else(|| invalid("[strategy] lower: missing".into()))?;
            StrategyChoice::TwoThreshold { upper, lower }
        }
        "adaptive" => {
            let d = GridSearchConfig::default();
            let months = s.number("lookback_months")?.unwrap_or(d.lookback_months as f64);
            let g = GridSearchConfig {
                grid_min: s.number("grid_min")?.unwrap_or(d.grid_min),
                grid_max: s.number("grid_max")?.unwrap_or(d.grid_max),
                grid_step: s.number("grid_step")?.unwrap_or(d.grid_step),
                lookback_months: whole(months, "[strategy] lookback_months", 1)? as u32,
            };
            g.validate().map_err(|e| invalid(format!("[strategy]: {e}")))?;
            StrategyChoice::Adaptive(g)
        }
        other => {
            return Err(invalid(format!(
                "[strategy] kind: expected random_maturity, two_threshold or adaptive, got `{other}`"
            )))
        }
    };
    Ok(choice)
}

/// Keys of one section, consumed as they are read so leftovers can be
/// reported as unknown.
struct Section {
    name: String,
    values: BTreeMap<String, String>,
}

impl Section {
    fn new(name: &str) -> Self {
        Section {
            name: name.to_string(),
            values: BTreeMap::new(),
        }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key).map(|v| v.trim().to_string())
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(Some(x)),
                _ => Err(invalid(format!("[{}] {key}: expected a number, got `{v}`", self.name))),
            },
        }
    }

    fn path(&mut self, key: &str, base: &Path) -> Result<Option<PathBuf>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Err(invalid(format!("[{}] {key}: empty path", self.name))),
            Some(v) => Ok(Some(base.join(v))),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.values.keys().next() {
            None => Ok(()),
            Some(k) => Err(invalid(format!("[{}] {k}: unknown key", self.name))),
        }
    }
}
