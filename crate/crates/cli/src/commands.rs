use log::{debug, info, warn};
use serde::Serialize;
use storage_market::game::{run_dynamics, select_weight, utility, verify_nash, DynamicsTrace, GameError};
use storage_market::harness::{
    generate_instance, initial_split, run_experiment_with, run_instance, run_time_dependent, ExperimentReport,
    ExperimentSpec, TimeSimConfig, WeightChoice,
};
use storage_market::market::{clear_market, MarketInstance};

use crate::config::{Command, Format, RunConfig};
use crate::io::{self, Sink};
use crate::CliError;

/// Runs the configured command; the result is the process exit status.
pub fn execute(cfg: &RunConfig) -> Result<i32, CliError> {
    match cfg.command {
        Command::Clear => clear(cfg),
        Command::Solve => solve(cfg),
        Command::Compare => compare(cfg),
        Command::Sweep => sweep(cfg),
        Command::Timesim => timesim(cfg),
        Command::Verify => verify(cfg),
    }
}

fn load_market(cfg: &RunConfig) -> Result<MarketInstance, CliError> {
    let market = match &cfg.instance {
        Some(path) => io::read_instance(path)?,
        None => generate_instance(&cfg.template)?,
    };
    if let Some(path) = &cfg.save_instance {
        io::write_instance(path, &market)?;
    }
    debug!(
        "market with {} sellers and {} buyers",
        market.n_sellers(),
        market.n_buyers()
    );
    Ok(market)
}

fn sink(cfg: &RunConfig) -> Result<Sink, CliError> {
    Sink::open(cfg.out.as_deref())
}

fn clear(cfg: &RunConfig) -> Result<i32, CliError> {
    let market = load_market(cfg)?;
    let offers = match &cfg.strategy {
        Some(path) => io::read_strategy(path)?,
        None => market.capacity_offers(),
    };
    let outcome = clear_market(&market, &offers)?;
    if !outcome.is_trade() {
        info!("no individually rational trade at these offers");
    }
    let mut out = sink(cfg)?;
    match cfg.format {
        Format::Csv => out.csv(&io::outcome_table(&market, &outcome))?,
        Format::Text => out.text("clearing", &outcome)?,
    }
    Ok(0)
}

fn dynamics(cfg: &RunConfig, market: &MarketInstance) -> Result<DynamicsTrace, CliError> {
    match cfg.weight {
        WeightChoice::Fixed(_) => Ok(run_dynamics(market, &cfg.game, None)?),
        WeightChoice::Select(probes) => match select_weight(market, &cfg.game, probes) {
            Ok((w, trace)) => {
                info!("selected inertia weight {w}");
                Ok(trace)
            }
            Err(GameError::NoConvergentWeightFound) => {
                warn!(
                    "no probed weight converged; reporting the run at w = {}",
                    cfg.game.inertia_weight
                );
                Ok(run_dynamics(market, &cfg.game, None)?)
            }
            Err(e) => Err(e.into()),
        },
    }
}

#[derive(Serialize)]
struct Solution<'a> {
    trace: &'a DynamicsTrace,
    nash: storage_market::game::NashReport,
}

fn solve(cfg: &RunConfig) -> Result<i32, CliError> {
    let market = load_market(cfg)?;
    let trace = dynamics(cfg, &market)?;
    let final_offers = trace
        .final_offers()
        .cloned()
        .unwrap_or_else(|| market.capacity_offers());
    let nash = verify_nash(&market, &final_offers, cfg.grid, cfg.game.nash_tolerance)?;
    info!(
        "{} after {} iterations (w = {}); equilibrium check: {}",
        if trace.converged {
            "converged"
        } else {
            "did not converge"
        },
        trace.iterations_used,
        trace.inertia_weight,
        if nash.is_nash { "passed" } else { "failed" }
    );
    let mut out = sink(cfg)?;
    match cfg.format {
        Format::Csv => out.csv(&io::trace_table(&market, &trace))?,
        Format::Text => out.text("solution", &Solution { trace: &trace, nash })?,
    }
    if trace.converged {
        Ok(0)
    } else {
        eprintln!(
            "error: dynamics did not converge within {} iterations",
            cfg.game.max_iterations
        );
        Ok(1)
    }
}

fn experiment_spec(cfg: &RunConfig) -> ExperimentSpec {
    ExperimentSpec {
        template: cfg.template.clone(),
        buyers: cfg.buyers.clone(),
        sellers: cfg.sellers.clone(),
        cost_weights: vec![cfg.template.cost_weight],
        runs: cfg.runs,
        base_seed: cfg.template.seed,
        algorithms: cfg.algorithms.clone(),
        game: cfg.game.clone(),
        sequential_weight: cfg.weight,
        parallel_weight: cfg.parallel_weight,
    }
}

fn emit_report(cfg: &RunConfig, report: &ExperimentReport) -> Result<(), CliError> {
    let mut out = sink(cfg)?;
    match cfg.format {
        Format::Csv => out.csv(&io::aggregate_table(report))?,
        Format::Text => out.text("aggregates", &report.aggregates)?,
    }
    if let Some(path) = &cfg.raw {
        Sink::open(Some(path))?.csv(&io::raw_table(report))?;
    }
    Ok(())
}

fn compare(cfg: &RunConfig) -> Result<i32, CliError> {
    let spec = experiment_spec(cfg);
    let report = match &cfg.instance {
        Some(_) => run_instance(&load_market(cfg)?, &spec)?,
        None => run_experiment_with(&spec, |_, _| {})?,
    };
    for agg in &report.aggregates {
        if let Some(gain) = agg.improvement_over_greedy() {
            info!("{}: {:+.1}% over greedy", agg.algorithm, 100.0 * gain);
        }
    }
    emit_report(cfg, &report)?;
    Ok(0)
}

fn sweep(cfg: &RunConfig) -> Result<i32, CliError> {
    let spec = experiment_spec(cfg);
    let report = run_experiment_with(&spec, |done, total| info!("grid point {}/{} done", done + 1, total))?;
    emit_report(cfg, &report)?;
    Ok(0)
}

fn timesim(cfg: &RunConfig) -> Result<i32, CliError> {
    let players = match &cfg.players {
        Some(p) => p.clone(),
        None => initial_split(cfg.sellers[0], cfg.buyers[0], &cfg.template),
    };
    let config = TimeSimConfig {
        periods: cfg.periods,
        game: cfg.game.clone(),
        seller_price_range: cfg.template.seller_price_range,
        buyer_bid_range: cfg.template.buyer_bid_range,
        cost_weight: cfg.template.cost_weight,
        seed: cfg.template.seed,
        load_profile: cfg.load_profile.clone(),
    };
    let history = run_time_dependent(&players, &config)?;
    let mut out = sink(cfg)?;
    match cfg.format {
        Format::Csv => out.csv(&io::timesim_table(&history))?,
        Format::Text => out.text("timesim", &history)?,
    }
    Ok(0)
}

#[derive(Serialize)]
struct Verification {
    is_nash: bool,
    tolerance: f64,
    utilities: Vec<f64>,
    gains: Vec<f64>,
    worst_seller: Option<usize>,
    max_gain: f64,
    max_relative_gain: f64,
}

fn verify(cfg: &RunConfig) -> Result<i32, CliError> {
    let market = load_market(cfg)?;
    let path = cfg.strategy.as_ref().expect("checked at parse time");
    let offers = io::read_strategy(path)?;
    let report = verify_nash(&market, &offers, cfg.grid, cfg.game.nash_tolerance)?;
    let utilities = (0..market.n_sellers())
        .map(|i| utility(&market, &offers, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = sink(cfg)?;
    match cfg.format {
        Format::Csv => {
            let mut rows = vec![["seller", "id", "utility", "gain"].map(String::from).to_vec()];
            for (i, s) in market.sellers().iter().enumerate() {
                rows.push(vec![
                    i.to_string(),
                    s.id.as_str().to_owned(),
                    io::sig6(utilities[i]),
                    io::sig6(report.gains[i]),
                ]);
            }
            out.csv(&rows)?;
        }
        Format::Text => out.text(
            "verification",
            &Verification {
                is_nash: report.is_nash,
                tolerance: cfg.game.nash_tolerance,
                utilities,
                gains: report.gains.clone(),
                worst_seller: report.worst_seller,
                max_gain: report.max_gain,
                max_relative_gain: report.max_relative_gain,
            },
        )?,
    }
    if report.is_nash {
        Ok(0)
    } else {
        eprintln!(
            "not a Nash equilibrium: seller {:?} gains {:.6e} (relative {:.3e})",
            report.worst_seller, report.max_gain, report.max_relative_gain
        );
        Ok(1)
    }
}
