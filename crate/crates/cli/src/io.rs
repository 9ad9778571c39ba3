//! Instance and strategy files, and result emission.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use storage_market::game::DynamicsTrace;
use storage_market::harness::{ExperimentReport, PeriodRecord};
use storage_market::market::{
    canonicalize_market, AuctionOutcome, BuyerProfile, MarketInstance, SellerProfile, StrategyVector,
};

use crate::CliError;

/// Tag written into every structured-text document.
pub const SCHEMA: &str = "storage-market/1";

/// Header of the aggregate table written by `sweep` and `compare`.
pub const AGGREGATE_HEADER: [&str; 6] = ["k", "n", "algorithm", "mean_utility", "std_utility", "runs"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SellerEntry {
    id: String,
    price: f64,
    bound: f64,
    tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuyerEntry {
    id: String,
    bid: f64,
    demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    sellers: Vec<SellerEntry>,
    buyers: Vec<BuyerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyFile {
    offers: Vec<f64>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn malformed(path: &Path, e: impl ToString) -> CliError {
    CliError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

pub fn instance_to_toml(market: &MarketInstance) -> String {
    let file = InstanceFile {
        sellers: market
            .sellers()
            .iter()
            .map(|s| SellerEntry {
                id: s.id.as_str().to_owned(),
                price: s.reservation_price,
                bound: s.capacity_bound,
                tau: s.cost_weight,
            })
            .collect(),
        buyers: market
            .buyers()
            .iter()
            .map(|b| BuyerEntry {
                id: b.id.as_str().to_owned(),
                bid: b.reservation_bid,
                demand: b.demand,
            })
            .collect(),
    };
    toml::to_string(&file).expect("instance serializes")
}

pub fn instance_from_toml(text: &str) -> Result<MarketInstance, String> {
    let file: InstanceFile = toml::from_str(text).map_err(|e| e.to_string())?;
    let sellers = file
        .sellers
        .iter()
        .map(|s| SellerProfile::new(s.id.as_str(), s.price, s.bound, s.tau))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let buyers = file
        .buyers
        .iter()
        .map(|b| BuyerProfile::new(b.id.as_str(), b.bid, b.demand))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    canonicalize_market(sellers, buyers).map_err(|e| e.to_string())
}

pub fn write_instance(path: &Path, market: &MarketInstance) -> Result<(), CliError> {
    write_text(path, &instance_to_toml(market))
}

pub fn read_instance(path: &Path) -> Result<MarketInstance, CliError> {
    instance_from_toml(&read_text(path)?).map_err(|e| malformed(path, e))
}

/// Reads `offers = [...]`, listed in the instance's canonical seller order.
pub fn read_strategy(path: &Path) -> Result<StrategyVector, CliError> {
    let file: StrategyFile = toml::from_str(&read_text(path)?).map_err(|e| malformed(path, e))?;
    Ok(StrategyVector(file.offers))
}

pub fn write_strategy(path: &Path, offers: &StrategyVector) -> Result<(), CliError> {
    let text = toml::to_string(&StrategyFile {
        offers: offers.0.clone(),
    })
    .expect("strategy serializes");
    write_text(path, &text)
}

/// `x` rounded to six significant digits, printed in shortest form.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("round trip");
    if rounded == 0.0 {
        "0".to_owned()
    } else {
        rounded.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// Destination of emitted results: a file or standard output.
pub struct Sink {
    path: Option<PathBuf>,
    inner: Box<dyn Write>,
}

impl Sink {
    pub fn open(path: Option<&Path>) -> Result<Sink, CliError> {
        let inner: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Io {
                path: p.to_path_buf(),
                source: e,
            })?)),
            None => Box::new(BufWriter::new(io::stdout())),
        };
        Ok(Sink {
            path: path.map(Path::to_path_buf),
            inner,
        })
    }

    fn err(&self, e: io::Error) -> CliError {
        CliError::Io {
            path: self.path.clone().unwrap_or_else(|| PathBuf::from("<stdout>")),
            source: e,
        }
    }

    pub fn csv(&mut self, rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(&mut self.inner);
        for row in rows {
            w.write_record(row).map_err(|e| CliError::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Csv(e.to_string()))?;
        drop(w);
        self.inner.flush().map_err(|e| self.err(e))
    }

    /// Writes `data` wrapped in a versioned JSON envelope.
    pub fn text<T: Serialize>(&mut self, kind: &str, data: &T) -> Result<(), CliError> {
        let doc = serde_json::json!({ "schema": SCHEMA, "kind": kind, "data": data });
        serde_json::to_writer_pretty(&mut self.inner, &doc).map_err(|e| CliError::Csv(e.to_string()))?;
        writeln!(self.inner).map_err(|e| self.err(e))?;
        self.inner.flush().map_err(|e| self.err(e))
    }
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// `k,n,algorithm,mean_utility,std_utility,runs`, one row per aggregate.
pub fn aggregate_table(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = vec![header(&AGGREGATE_HEADER)];
    rows.extend(report.aggregates.iter().map(|a| {
        vec![
            a.k.to_string(),
            a.n.to_string(),
            a.algorithm.to_string(),
            sig6(a.mean_utility),
            sig6(a.std_utility),
            a.runs.to_string(),
        ]
    }));
    rows
}

pub fn raw_table(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = vec![header(&[
        "k",
        "n",
        "tau",
        "run",
        "seed",
        "algorithm",
        "weight",
        "converged",
        "iterations",
        "mean_utility",
        "mean_action",
        "participants",
    ])];
    rows.extend(report.rows.iter().map(|r| {
        vec![
            r.k.to_string(),
            r.n.to_string(),
            sig6(r.tau),
            r.run.to_string(),
            r.seed.to_string(),
            r.algorithm.to_string(),
            opt(r.weight),
            r.converged.to_string(),
            r.iterations.to_string(),
            sig6(r.mean_utility),
            sig6(r.mean_action),
            r.participants.to_string(),
        ]
    }));
    rows
}

/// Per-agent quantities with the trading price repeated on every row.
pub fn outcome_table(market: &MarketInstance, outcome: &AuctionOutcome) -> Vec<Vec<String>> {
    let price = opt(outcome.trading_price);
    let mut rows = vec![header(&["side", "id", "quantity", "price"])];
    for (s, q) in market.sellers().iter().zip(&outcome.sold) {
        rows.push(vec!["seller".into(), s.id.as_str().into(), sig6(*q), price.clone()]);
    }
    for (b, q) in market.buyers().iter().zip(&outcome.bought) {
        rows.push(vec!["buyer".into(), b.id.as_str().into(), sig6(*q), price.clone()]);
    }
    rows
}

/// One row per iteration: price, then every offer and every utility.
pub fn trace_table(market: &MarketInstance, trace: &DynamicsTrace) -> Vec<Vec<String>> {
    let mut head = vec!["iteration".to_owned(), "price".to_owned()];
    head.extend(market.sellers().iter().map(|s| format!("offer_{}", s.id.as_str())));
    head.extend(market.sellers().iter().map(|s| format!("utility_{}", s.id.as_str())));
    let mut rows = vec![head];
    for (t, row) in trace.iterations.iter().enumerate() {
        let mut line = vec![(t + 1).to_string(), opt(row.trading_price)];
        line.extend(row.offers.iter().map(|&a| sig6(a)));
        line.extend(row.utilities.iter().map(|&u| sig6(u)));
        rows.push(line);
    }
    rows
}

pub fn timesim_table(history: &[PeriodRecord]) -> Vec<Vec<String>> {
    let mut rows = vec![header(&[
        "period",
        "player",
        "role",
        "charge",
        "sold",
        "bought",
        "after_trade",
        "unmet_load",
        "price",
    ])];
    for rec in history {
        for (j, s) in rec.start.iter().enumerate() {
            let role = serde_json::to_value(s.role).expect("role serializes");
            rows.push(vec![
                rec.period.to_string(),
                j.to_string(),
                role.as_str().unwrap_or_default().to_owned(),
                sig6(s.charge),
                sig6(rec.sold[j]),
                sig6(rec.bought[j]),
                sig6(rec.after_trade[j]),
                sig6(rec.unmet_load[j]),
                opt(rec.trading_price),
            ]);
        }
    }
    rows
}
