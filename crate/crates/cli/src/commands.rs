use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use perpfund::analysis::{
    correlation_matrix, deviation_with_ma, event_study as run_event_study, funding_capture_backtest, ols_hac,
    past_return_regressor, regression_table, write_deviation_csv, RegressionResult, SEVEN_DAYS,
};
use perpfund::backtest::{decomposition_table, prepare_bars, run_backtest, summary_table, BacktestReport};
use perpfund::marketdata::{
    align_columns, ingest_exogenous, ingest_funding, ingest_prices, write_funding, write_prices, Column,
};
use perpfund::strategy::{pick_best, score_candidates, GridSearchConfig, Restriction};
use perpfund::synth::{generate_with, SynthConfig};
use perpfund::time::{SECONDS_PER_DAY, SECONDS_PER_HOUR, SECONDS_PER_MINUTE};
use perpfund::{deviation_bounds, FeeTier, FundingSchedule, MarketSeries, TheoryParams, Timestamp};
use rayon::prelude::*;

use crate::config::{AssetConfig, RunConfig};
use crate::{BacktestArgs, BoundsArgs, CliError, ConfigArgs, EventStudyArgs, FeeArgs, GridSearchArgs, SynthArgs};

type Res<T> = Result<T, CliError>;

fn fee_tier(a: &FeeArgs) -> Res<FeeTier> {
    let custom = a.tier.trim() == "custom";
    if !custom && (a.spot_fee.is_some() || a.futures_fee.is_some()) {
        return Err(CliError::Validation("--spot-fee/--futures-fee need --tier custom".into()));
    }
    if custom {
        let (Some(s), Some(f)) = (a.spot_fee, a.futures_fee) else {
            return Err(CliError::Validation("--tier custom needs --spot-fee and --futures-fee".into()));
        };
        return FeeTier::custom(s, f).map_err(|e| CliError::from_core("--tier", e));
    }
    tier_by_name(&a.tier)
}

fn tier_by_name(name: &str) -> Res<FeeTier> {
    FeeTier::by_name(name)
        .ok_or_else(|| CliError::Validation(format!("--tier: expected none, low, medium, high or custom, got `{name}`")))
}

fn theory(r: f64, kappa: f64) -> Res<TheoryParams> {
    TheoryParams::new(r, kappa).map_err(|e| CliError::from_core("--r/--kappa", e))
}

fn require_file(path: &Path, field: &str) -> Res<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{field}: file not found: {}", path.display())))
    }
}

fn create_dir(dir: &Path) -> Res<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("output directory {}: {e}", dir.display())))
}

/// Creates `path` and hands a buffered writer to `f`.
fn write_file<F>(path: &Path, f: F) -> Res<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Res<()>,
{
    let io_err = |e: std::io::Error| CliError::Data(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    f(&mut w)?;
    w.flush().map_err(io_err)
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    write_file(path, |w| {
        w.write_all(text.as_bytes())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    })
}

fn core_at(path: &Path) -> impl Fn(perpfund::Error) -> CliError + '_ {
    move |e| CliError::from_core(path.display(), e)
}

fn parse_restriction(s: &str) -> Res<Restriction> {
    match s {
        "unrestricted" => Ok(Restriction::Unrestricted),
        "long_spot_only" => Ok(Restriction::LongSpotOnly),
        other => Err(CliError::Validation(format!(
            "--restriction: expected unrestricted or long_spot_only, got `{other}`"
        ))),
    }
}

fn parse_time(s: &str, flag: &str) -> Res<Timestamp> {
    s.parse().map_err(|e| CliError::Validation(format!("{flag}: {e}")))
}

// ---------------------------------------------------------------------------

pub fn bounds(a: &BoundsArgs) -> Res<()> {
    let tier = fee_tier(&a.fees)?;
    let params = theory(a.r, a.kappa)?;
    let b = deviation_bounds(&params, &tier).map_err(|e| CliError::from_core("bounds", e))?;
    println!("{b}");
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Res<()> {
    let d = SynthConfig::default();
    let start = match &a.start {
        Some(s) => parse_time(s, "--start")?,
        None => d.start,
    };
    let cfg = SynthConfig {
        asset_id: a.asset.clone().unwrap_or(d.asset_id),
        seed: a.seed.unwrap_or(d.seed),
        n_hours: a.hours.unwrap_or(d.n_hours),
        start,
        spot_start: a.spot_start.unwrap_or(d.spot_start),
        spot_vol: a.spot_vol.unwrap_or(d.spot_vol),
        spot_drift: a.spot_drift.unwrap_or(d.spot_drift),
        gap_mean: a.gap_mean.unwrap_or(d.gap_mean),
        gap_reversion: a.gap_reversion.unwrap_or(d.gap_reversion),
        gap_vol: a.gap_vol.unwrap_or(d.gap_vol),
        gap_bound: a.gap_bound.unwrap_or(d.gap_bound),
        gap_init: a.gap_init.or(d.gap_init),
    };
    let params = theory(a.r, a.kappa)?;
    let (series, schedule) = generate_with(&cfg, &params).map_err(|e| CliError::from_core("synth", e))?;
    create_dir(&a.out_dir)?;
    let prices = a.out_dir.join(format!("{}_prices.csv", cfg.asset_id));
    let funding = a.out_dir.join(format!("{}_funding.csv", cfg.asset_id));
    write_file(&prices, |w| write_prices(&series, w).map_err(core_at(&prices)))?;
    write_file(&funding, |w| write_funding(&schedule, w).map_err(core_at(&funding)))?;
    println!("{}", prices.display());
    println!("{}", funding.display());
    Ok(())
}

// ---------------------------------------------------------------------------

fn load_hourly(asset: &AssetConfig) -> Res<MarketSeries> {
    ingest_prices(&asset.prices, &asset.symbol, SECONDS_PER_HOUR)
        .map_err(|e| CliError::from_core(format!("[asset.{}] prices", asset.symbol), e))
}

fn load_funding(asset: &AssetConfig, path: &Path) -> Res<FundingSchedule> {
    ingest_funding(path, &asset.symbol).map_err(|e| CliError::from_core(format!("[asset.{}] funding", asset.symbol), e))
}

fn check_asset_files(asset: &AssetConfig, need_funding: bool) -> Res<()> {
    let sym = &asset.symbol;
    require_file(&asset.prices, &format!("[asset.{sym}] prices"))?;
    match &asset.funding {
        Some(f) => require_file(f, &format!("[asset.{sym}] funding")),
        None if need_funding => Err(CliError::Validation(format!(
            "[asset.{sym}] funding: missing; backtests need the funding CSV"
        ))),
        None => Ok(()),
    }?;
    if let Some(m) = &asset.minutes {
        require_file(m, &format!("[asset.{sym}] minutes"))?;
    }
    Ok(())
}

pub fn backtest(a: &BacktestArgs) -> Res<()> {
    let cfg = RunConfig::load(&a.config.config)?;
    let tiers = match &a.tier {
        Some(name) => vec![tier_by_name(name)?],
        None => cfg.tiers.clone(),
    };
    for asset in &cfg.assets {
        check_asset_files(asset, true)?;
    }
    let specs = tiers.iter().map(|t| cfg.spec_for(t)).collect::<Res<Vec<_>>>()?;
    create_dir(&cfg.output_dir)?;

    let data = cfg
        .assets
        .par_iter()
        .map(|asset| {
            let series = load_hourly(asset)?;
            let schedule = load_funding(asset, asset.funding.as_deref().expect("checked above"))?;
            Ok((series, schedule))
        })
        .collect::<Res<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..tiers.len()).flat_map(|t| (0..data.len()).map(move |i| (t, i))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(t, i)| {
            let (series, schedule) = &data[i];
            run_backtest(series, schedule, &specs[t], &tiers[t])
                .map_err(|e| CliError::from_core(format!("[asset.{}] backtest", cfg.assets[i].symbol), e))
        })
        .collect::<Res<Vec<BacktestReport>>>()?;

    let dir = &cfg.output_dir;
    for (t, tier) in tiers.iter().enumerate() {
        let block = &reports[t * data.len()..(t + 1) * data.len()];
        for rep in block {
            let json = dir.join(format!("{}_{}.json", rep.asset_id, tier.name));
            let csv = dir.join(format!("{}_{}_returns.csv", rep.asset_id, tier.name));
            let body = rep.to_json().map_err(core_at(&json))?;
            write_text(&json, &body)?;
            write_file(&csv, |w| rep.write_returns_csv(w).map_err(core_at(&csv)))?;
        }
        let summary = summary_table(block);
        let decomposition = decomposition_table(block);
        write_text(&dir.join(format!("summary_{}.txt", tier.name)), &summary)?;
        write_text(&dir.join(format!("decomposition_{}.txt", tier.name)), &decomposition)?;
        println!("tier {}: performance (percent, annualized)\n{summary}", tier.name);
        println!("tier {}: return decomposition (percent, annualized)\n{decomposition}", tier.name);
    }
    Ok(())
}

// ---------------------------------------------------------------------------

fn warn(what: &str, e: impl std::fmt::Display) {
    eprintln!("warning: skipping {what}: {e}");
}

/// Daily 00:00 UTC values of `ρ`.
fn daily_rho(series: &MarketSeries) -> Vec<(Timestamp, f64)> {
    series.deviation_series().into_iter().filter(|(t, _)| t.is_midnight()).collect()
}

pub fn analyze(a: &ConfigArgs) -> Res<()> {
    let cfg = RunConfig::load(&a.config)?;
    for asset in &cfg.assets {
        check_asset_files(asset, false)?;
    }
    for e in &cfg.exogenous {
        require_file(&e.path, &format!("[exogenous.{}] path", e.name))?;
    }
    create_dir(&cfg.output_dir)?;
    let dir = &cfg.output_dir;

    let series = cfg.assets.par_iter().map(load_hourly).collect::<Res<Vec<_>>>()?;
    let exogenous: Vec<Column> = cfg
        .exogenous
        .iter()
        .map(|e| {
            let s = ingest_exogenous(&e.path, &e.name).map_err(|err| CliError::from_core(format!("[exogenous.{}]", e.name), err))?;
            let shift = i64::from(e.lag_days) * SECONDS_PER_DAY;
            let points = s.observations().iter().map(|&(t, v)| (Timestamp(t.0 + shift), v)).collect();
            Ok(Column::new(e.name.clone(), points))
        })
        .collect::<Res<_>>()?;

    for s in &series {
        let path = dir.join(format!("{}_deviation.csv", s.asset_id()));
        match deviation_with_ma(s, SEVEN_DAYS) {
            Ok(rows) => {
                write_file(&path, |w| write_deviation_csv(&rows, w).map_err(core_at(&path)))?;
                println!("{}", path.display());
            }
            Err(e) => warn(&format!("deviation series for {}", s.asset_id()), e),
        }
    }

    if series.len() >= 2 {
        let cols: Vec<Column> = series.iter().map(|s| Column::new(s.asset_id(), s.deviation_series())).collect();
        match align_columns(&cols).and_then(|t| correlation_matrix(&t)) {
            Ok(m) => {
                let path = dir.join("correlation.csv");
                write_file(&path, |w| m.write_csv(w).map_err(core_at(&path)))?;
                println!("{}", path.display());
            }
            Err(e) => warn("correlation matrix", e),
        }
    } else {
        warn("correlation matrix", "needs at least two assets");
    }

    let mut tables = String::new();
    let mut all_results: BTreeMap<String, Vec<(String, RegressionResult)>> = BTreeMap::new();
    for s in &series {
        let models = regressions(s, &exogenous, cfg.return_lookback_months, cfg.hac_lag);
        if models.is_empty() {
            continue;
        }
        let refs: Vec<(&str, &RegressionResult)> = models.iter().map(|(l, r)| (l.as_str(), r)).collect();
        tables.push_str(&format!("{}\n{}\n", s.asset_id(), regression_table(&refs)));
        all_results.insert(s.asset_id().to_string(), models);
    }
    if !all_results.is_empty() {
        let txt = dir.join("regression.txt");
        write_text(&txt, &tables)?;
        let json = dir.join("regression.json");
        let body = serde_json::to_string_pretty(&all_results).map_err(|e| CliError::Data(e.to_string()))?;
        write_text(&json, &body)?;
        print!("{tables}");
        println!("{}", txt.display());
    }

    let tier = cfg.tiers[0];
    for asset in cfg.assets.iter().filter(|a| a.minutes.is_some()) {
        let what = format!("event study for {}", asset.symbol);
        let Some(funding) = &asset.funding else {
            warn(&what, "no funding CSV configured");
            continue;
        };
        let minutes = asset.minutes.as_deref().expect("filtered");
        let m = ingest_prices(minutes, &asset.symbol, SECONDS_PER_MINUTE)
            .map_err(|e| CliError::from_core(format!("[asset.{}] minutes", asset.symbol), e))?;
        let f = load_funding(asset, funding)?;
        write_event_outputs(&m, &f, &tier, dir)?;
    }
    Ok(())
}

/// Regressions of daily `ρ` on the past-return regressor, each exogenous
/// series alone, and everything together. Models that cannot be fitted
/// are skipped with a warning.
fn regressions(
    series: &MarketSeries,
    exogenous: &[Column],
    lookback_months: u32,
    lag: Option<usize>,
) -> Vec<(String, RegressionResult)> {
    let id = series.asset_id();
    let y = Column::new("rho", daily_rho(series));
    let ret = match past_return_regressor(series, lookback_months) {
        Ok(r) => Some(Column::from(&r)),
        Err(e) => {
            warn(&format!("past-return regressor for {id}"), e);
            None
        }
    };
    let mut specs: Vec<Vec<&Column>> = Vec::new();
    if let Some(r) = &ret {
        specs.push(vec![r]);
    }
    specs.extend(exogenous.iter().map(|e| vec![e]));
    if !exogenous.is_empty() {
        specs.push(ret.iter().chain(exogenous).collect());
    }
    specs.dedup();
    let mut out = Vec::new();
    for (k, regs) in specs.iter().enumerate() {
        let label = format!("({})", k + 1);
        let mut cols = vec![y.clone()];
        cols.extend(regs.iter().map(|c| (*c).clone()));
        let fitted = align_columns(&cols).and_then(|t| {
            let xs: Vec<(&str, &[f64])> = t.names[1..].iter().zip(&t.columns[1..]).map(|(n, c)| (n.as_str(), c.as_slice())).collect();
            ols_hac(&t.columns[0], &xs, lag)
        });
        match fitted {
            Ok(r) => out.push((label, r)),
            Err(e) => warn(&format!("regression {label} for {id}"), e),
        }
    }
    out
}

fn write_event_outputs(minutes: &MarketSeries, funding: &FundingSchedule, tier: &FeeTier, dir: &Path) -> Res<()> {
    let id = minutes.asset_id();
    match run_event_study(minutes, funding) {
        Ok(r) => {
            let path = dir.join(format!("{id}_event_study.csv"));
            write_file(&path, |w| r.write_csv(w).map_err(core_at(&path)))?;
            println!(
                "{id}: {} positive and {} negative events, {} skipped, {} zero-rate",
                r.event_counts.0, r.event_counts.1, r.skipped, r.zero_rate
            );
            println!("{}", path.display());
        }
        Err(e) => warn(&format!("event study for {id}"), e),
    }
    match funding_capture_backtest(minutes, funding, tier) {
        Ok(c) => {
            let path = dir.join(format!("{id}_capture_{}.json", tier.name));
            let body = serde_json::to_string_pretty(&c).map_err(|e| CliError::Data(e.to_string()))?;
            write_text(&path, &body)?;
            println!(
                "{id}: capture trade over {} events: {:.2} bps per event, {:.1}% per year",
                c.n_events,
                1e4 * c.mean_return,
                100.0 * c.annualized
            );
            println!("{}", path.display());
        }
        Err(e) => warn(&format!("capture trade for {id}"), e),
    }
    Ok(())
}

pub fn event_study(a: &EventStudyArgs) -> Res<()> {
    let tier = fee_tier(&a.fees)?;
    require_file(&a.minutes, "--minutes")?;
    require_file(&a.funding, "--funding")?;
    let m = ingest_prices(&a.minutes, &a.asset, SECONDS_PER_MINUTE).map_err(core_at(&a.minutes))?;
    let f = ingest_funding(&a.funding, &a.asset).map_err(core_at(&a.funding))?;
    let r = run_event_study(&m, &f).map_err(|e| CliError::from_core("event study", e))?;
    let out_dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).map(PathBuf::from);
    if let Some(d) = out_dir {
        create_dir(&d)?;
    }
    write_file(&a.out, |w| r.write_csv(w).map_err(core_at(&a.out)))?;
    println!(
        "{} positive and {} negative events, {} skipped, {} zero-rate",
        r.event_counts.0, r.event_counts.1, r.skipped, r.zero_rate
    );
    match funding_capture_backtest(&m, &f, &tier) {
        Ok(c) => println!(
            "capture trade ({} tier) over {} events: {:.2} bps per event, {:.1}% per year",
            tier.name,
            c.n_events,
            1e4 * c.mean_return,
            100.0 * c.annualized
        ),
        Err(e) => warn("capture trade", e),
    }
    Ok(())
}

pub fn grid_search(a: &GridSearchArgs) -> Res<()> {
    let tier = fee_tier(&a.fees)?;
    let restriction = parse_restriction(&a.restriction)?;
    let as_of = parse_time(&a.as_of, "--as-of")?;
    let cfg = GridSearchConfig {
        grid_min: a.grid_min,
        grid_max: a.grid_max,
        grid_step: a.grid_step,
        lookback_months: a.lookback_months,
    };
    cfg.validate().map_err(|e| CliError::from_core("grid", e))?;
    require_file(&a.prices, "--prices")?;
    require_file(&a.funding, "--funding")?;
    let s = ingest_prices(&a.prices, &a.asset, SECONDS_PER_HOUR).map_err(core_at(&a.prices))?;
    let f = ingest_funding(&a.funding, &a.asset).map_err(core_at(&a.funding))?;
    let from = as_of.minus_months(a.lookback_months);
    if s.observations().first().is_none_or(|o| o.timestamp > from) {
        return Err(CliError::Data(format!(
            "{}: data must start at or before {from} for a {}-month window ending {as_of}",
            a.prices.display(),
            a.lookback_months
        )));
    }
    let bars = prepare_bars(&s.slice(from, as_of), &f);
    let scored = score_candidates(&bars, &cfg, &tier, restriction, true).map_err(|e| CliError::from_core("grid search", e))?;
    let best = pick_best(&scored).ok_or_else(|| CliError::Validation("empty grid".into()))?;
    if let Some(out) = &a.out {
        write_file(out, |w| {
            let io = |e: std::io::Error| CliError::Data(format!("{}: {e}", out.display()));
            writeln!(w, "upper,lower,sharpe").map_err(io)?;
            for (u, l, sr) in &scored {
                writeln!(w, "{u},{l},{sr}").map_err(io)?;
            }
            Ok(())
        })?;
    }
    println!(
        "window [{from}, {as_of}): {} bars, {} pairs scored",
        bars.len(),
        scored.len()
    );
    println!("upper {:.1}  lower {:.1}  sharpe {:.2}", best.upper, best.lower, best.sharpe);
    Ok(())
}
