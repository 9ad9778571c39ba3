//! Command-line flags, the optional TOML config file, and their merge.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use storage_market::game::{GameConfig, UpdateMode};
use storage_market::harness::{Algorithm, InstanceSpec, Player, Range, WeightChoice};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "storage-market",
    version,
    about = "Double-auction energy trading among storage units",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Debug, Subcommand)]
enum CommandArgs {
    /// Clear one auction at the given (default: capacity) offers.
    Clear(Flags),
    /// Run the dynamics on one instance and emit the trace.
    Solve(Flags),
    /// Compare the game against greedy matching over seeded instances.
    Compare(Flags),
    /// Aggregate utilities over a grid of market sizes.
    Sweep(Flags),
    /// Multi-period simulation with charge-driven roles.
    Timesim(Flags),
    /// Check whether a strategy file is a Nash equilibrium.
    Verify(Flags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Clear,
    Solve,
    Compare,
    Sweep,
    Timesim,
    Verify,
}

#[derive(Debug, Clone, Default, Args)]
struct Flags {
    /// TOML file with defaults for any of these flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// TOML instance file (sellers and buyers); overrides generation
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Seller count; sweeps also accept `4..10` or `4,6,8`
    #[arg(long)]
    sellers: Option<String>,
    /// Buyer count; sweeps also accept ranges and lists
    #[arg(long)]
    buyers: Option<String>,
    /// Inertia weight in (0,1), or `select` for bisection
    #[arg(long)]
    w: Option<String>,
    /// Parallel inertia weight for compare/sweep, or `select`
    #[arg(long = "w-par")]
    w_par: Option<String>,
    /// Update mode: seq or par
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Output file; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// TOML strategy file (`offers = [...]`) for clear and verify
    #[arg(long)]
    strategy: Option<PathBuf>,
    /// Comma-separated: sequential, parallel, greedy, best-response-raw
    #[arg(long)]
    algorithms: Option<String>,
    /// Grid points per seller for verify
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    periods: Option<usize>,
    /// Also write raw per-run rows (sweep, compare) as CSV
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Write the generated or loaded instance to this TOML file
    #[arg(long = "save-instance")]
    save_instance: Option<PathBuf>,
}

/// Either a number or `"select"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum WeightValue {
    Number(f64),
    Word(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangesFile {
    surplus: Option<[f64; 2]>,
    seller_price: Option<[f64; 2]>,
    buyer_bid: Option<[f64; 2]>,
    demand: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayerFile {
    charge: f64,
    capacity_max: f64,
    reserve: f64,
    price: Option<f64>,
    bid: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    instance: Option<PathBuf>,
    sellers: Option<toml::Value>,
    buyers: Option<toml::Value>,
    w: Option<WeightValue>,
    w_par: Option<WeightValue>,
    mode: Option<String>,
    epsilon: Option<f64>,
    max_iter: Option<usize>,
    tau: Option<f64>,
    seed: Option<u64>,
    runs: Option<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
    strategy: Option<PathBuf>,
    algorithms: Option<Vec<String>>,
    grid: Option<usize>,
    periods: Option<usize>,
    raw: Option<PathBuf>,
    ranges: Option<RangesFile>,
    players: Option<Vec<PlayerFile>>,
    load_profile: Option<Vec<Vec<f64>>>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// Instance file; when absent instances are generated from `template`.
    pub instance: Option<PathBuf>,
    /// Ranges for generated instances, with the first seller and buyer count,
    /// `tau` and `seed` filled in.
    pub template: InstanceSpec,
    pub sellers: Vec<usize>,
    pub buyers: Vec<usize>,
    pub game: GameConfig,
    pub weight: WeightChoice,
    pub parallel_weight: WeightChoice,
    pub runs: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub strategy: Option<PathBuf>,
    pub algorithms: Vec<Algorithm>,
    pub grid: usize,
    pub periods: usize,
    pub raw: Option<PathBuf>,
    pub save_instance: Option<PathBuf>,
    /// Players of a time simulation; generated when `None`.
    pub players: Option<Vec<Player>>,
    pub load_profile: Vec<Vec<f64>>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses `4`, `4..10` (inclusive) or `4,6,8`.
pub fn parse_counts(text: &str) -> Result<Vec<usize>, CliError> {
    let number = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| invalid(format!("`{s}` is not a count")))
    };
    let values = if let Some((lo, hi)) = text.split_once("..") {
        let (lo, hi) = (number(lo)?, number(hi)?);
        if lo > hi {
            return Err(CliError::RangeInversion(format!("{lo}..{hi}")));
        }
        (lo..=hi).collect()
    } else {
        text.split(',').map(number).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.contains(&0) {
        return Err(invalid("counts must be positive"));
    }
    Ok(values)
}

fn counts_from_toml(value: &toml::Value) -> Result<Vec<usize>, CliError> {
    match value {
        toml::Value::Integer(n) if *n > 0 => Ok(vec![*n as usize]),
        toml::Value::String(s) => parse_counts(s),
        toml::Value::Array(items) => items
            .iter()
            .map(|v| match v {
                toml::Value::Integer(n) if *n > 0 => Ok(*n as usize),
                _ => Err(invalid("count lists must hold positive integers")),
            })
            .collect(),
        _ => Err(invalid("counts must be an integer, a list, or a range string")),
    }
}

fn parse_weight(value: WeightValue) -> Result<WeightChoice, CliError> {
    let w = match value {
        WeightValue::Number(w) => w,
        WeightValue::Word(s) if s == "select" => return Ok(WeightChoice::Select(8)),
        WeightValue::Word(s) => s
            .parse::<f64>()
            .map_err(|_| invalid(format!("weight `{s}` is neither a number nor `select`")))?,
    };
    if !(w > 0.0 && w < 1.0) {
        return Err(invalid(format!("weight {w} must lie strictly between 0 and 1")));
    }
    Ok(WeightChoice::Fixed(w))
}

fn parse_algorithms<S: AsRef<str>>(names: &[S]) -> Result<Vec<Algorithm>, CliError> {
    let mut out = Vec::new();
    for name in names {
        let a: Algorithm = name.as_ref().trim().parse().map_err(invalid)?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    if out.is_empty() {
        return Err(invalid("at least one algorithm is required"));
    }
    Ok(out)
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn must_exist(path: &Option<PathBuf>) -> Result<(), CliError> {
    match path {
        Some(p) if !p.is_file() => Err(CliError::MissingFile(p.clone())),
        _ => Ok(()),
    }
}

fn range(pair: Option<[f64; 2]>, default: Range, what: &str) -> Result<Range, CliError> {
    match pair {
        None => Ok(default),
        Some([lo, hi]) if lo > hi => Err(CliError::RangeInversion(format!("{what} [{lo}, {hi}]"))),
        Some([lo, hi]) => Ok(Range::new(lo, hi)),
    }
}

/// Parses command-line arguments (program name first), reads `--config` if
/// given, and lets flags override file values.
pub fn parse_config<I, T>(args: I) -> Result<RunConfig, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(CliError::Usage)?;
    let (command, flags) = match cli.command {
        CommandArgs::Clear(f) => (Command::Clear, f),
        CommandArgs::Solve(f) => (Command::Solve, f),
        CommandArgs::Compare(f) => (Command::Compare, f),
        CommandArgs::Sweep(f) => (Command::Sweep, f),
        CommandArgs::Timesim(f) => (Command::Timesim, f),
        CommandArgs::Verify(f) => (Command::Verify, f),
    };
    let file = match &flags.config {
        Some(path) => read_file_config(path)?,
        None => FileConfig::default(),
    };
    resolve(command, flags, file)
}

fn resolve(command: Command, flags: Flags, file: FileConfig) -> Result<RunConfig, CliError> {
    let sweeping = command == Command::Sweep;
    let default_sellers = match command {
        Command::Sweep => vec![4, 5, 6, 7, 8, 9, 10],
        Command::Timesim => vec![4],
        _ => vec![6],
    };
    let default_buyers = match command {
        Command::Timesim => vec![3],
        _ => vec![5],
    };
    let counts = |flag: Option<String>, from_file: Option<toml::Value>, default: Vec<usize>| {
        let values = match (flag, from_file) {
            (Some(s), _) => parse_counts(&s)?,
            (None, Some(v)) => counts_from_toml(&v)?,
            (None, None) => default,
        };
        if !sweeping && values.len() != 1 {
            return Err(invalid("only sweep accepts several seller or buyer counts"));
        }
        Ok::<_, CliError>(values)
    };
    let sellers = counts(flags.sellers, file.sellers, default_sellers)?;
    let buyers = counts(flags.buyers, file.buyers, default_buyers)?;

    let mode = match flags.mode.or(file.mode) {
        Some(m) => m.parse::<UpdateMode>().map_err(invalid)?,
        None => UpdateMode::Sequential,
    };
    let weight = match flags.w.map(WeightValue::Word).or(file.w) {
        Some(v) => parse_weight(v)?,
        None => WeightChoice::Fixed(match mode {
            UpdateMode::Sequential => 0.5,
            UpdateMode::Parallel => 0.1,
        }),
    };
    let parallel_weight = match flags.w_par.map(WeightValue::Word).or(file.w_par) {
        Some(v) => parse_weight(v)?,
        None => WeightChoice::Fixed(0.1),
    };
    let defaults = GameConfig::default();
    let game = GameConfig {
        inertia_weight: match weight {
            WeightChoice::Fixed(w) => w,
            WeightChoice::Select(_) => defaults.inertia_weight,
        },
        convergence_epsilon: flags.epsilon.or(file.epsilon).unwrap_or(defaults.convergence_epsilon),
        max_iterations: flags.max_iter.or(file.max_iter).unwrap_or(defaults.max_iterations),
        mode,
        ..defaults
    };
    game.validate().map_err(|e| invalid(e.to_string()))?;

    let tau = flags.tau.or(file.tau).unwrap_or(0.5);
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("tau must be positive"));
    }
    let base = InstanceSpec::default();
    let ranges = file.ranges.unwrap_or_default();
    let template = InstanceSpec {
        n_sellers: sellers[0],
        n_buyers: buyers[0],
        surplus_range: range(ranges.surplus, base.surplus_range, "surplus range")?,
        seller_price_range: range(ranges.seller_price, base.seller_price_range, "seller price range")?,
        buyer_bid_range: range(ranges.buyer_bid, base.buyer_bid_range, "buyer bid range")?,
        demand_range: range(ranges.demand, base.demand_range, "demand range")?,
        cost_weight: tau,
        seed: flags.seed.or(file.seed).unwrap_or(0),
    };
    template.validate().map_err(|e| invalid(e.to_string()))?;

    let algorithms = match (flags.algorithms, file.algorithms) {
        (Some(s), _) => parse_algorithms(&s.split(',').collect::<Vec<_>>())?,
        (None, Some(list)) => parse_algorithms(&list)?,
        (None, None) => vec![Algorithm::Sequential, Algorithm::Parallel, Algorithm::Greedy],
    };
    let runs = flags.runs.or(file.runs).unwrap_or(match command {
        Command::Sweep => 1000,
        _ => 1,
    });

    let config = RunConfig {
        command,
        instance: flags.instance.or(file.instance),
        template,
        sellers,
        buyers,
        game,
        weight,
        parallel_weight,
        runs,
        out: flags.out.or(file.out),
        format: flags.format.or(file.format).unwrap_or(Format::Csv),
        strategy: flags.strategy.or(file.strategy),
        algorithms,
        grid: flags.grid.or(file.grid).unwrap_or(201).max(3),
        periods: flags.periods.or(file.periods).unwrap_or(6),
        raw: flags.raw.or(file.raw),
        save_instance: flags.save_instance,
        players: file.players.map(|ps| {
            ps.into_iter()
                .map(|p| Player {
                    charge: p.charge,
                    capacity_max: p.capacity_max,
                    reserve: p.reserve,
                    price: p.price,
                    bid: p.bid,
                })
                .collect()
        }),
        load_profile: file.load_profile.unwrap_or_default(),
    };
    must_exist(&config.instance)?;
    must_exist(&config.strategy)?;
    if command == Command::Verify && config.strategy.is_none() {
        return Err(invalid("verify needs --strategy"));
    }
    Ok(config)
}
