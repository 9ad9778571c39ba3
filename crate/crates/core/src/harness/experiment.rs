use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_instance, HarnessError, InstanceSpec};
use crate::game::{
    run_best_response_raw, run_dynamics, select_weight, DynamicsTrace, GameConfig, GameError, UpdateMode,
};
use crate::greedy::run_greedy;
use crate::market::MarketInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Sequential,
    Parallel,
    Greedy,
    /// Undamped best-response dynamics (`w = 0`), sequential turns.
    BestResponseRaw,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Sequential,
        Algorithm::Parallel,
        Algorithm::Greedy,
        Algorithm::BestResponseRaw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sequential => "sequential",
            Algorithm::Parallel => "parallel",
            Algorithm::Greedy => "greedy",
            Algorithm::BestResponseRaw => "best-response-raw",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sequential" | "seq" => Ok(Algorithm::Sequential),
            "parallel" | "par" => Ok(Algorithm::Parallel),
            "greedy" => Ok(Algorithm::Greedy),
            "best-response-raw" | "raw" => Ok(Algorithm::BestResponseRaw),
            other => Err(format!("unknown algorithm `{other}`")),
        }
    }
}

/// How the inertia weight of a damped algorithm is chosen per instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightChoice {
    Fixed(f64),
    /// Bisection with this many probes.
    Select(usize),
}

/// Grid of instance shapes and the settings used to solve them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Ranges for the random draws; its counts, cost weight and seed are
    /// replaced by the grid values.
    pub template: InstanceSpec,
    pub buyers: Vec<usize>,
    pub sellers: Vec<usize>,
    pub cost_weights: Vec<f64>,
    pub runs: usize,
    pub base_seed: u64,
    pub algorithms: Vec<Algorithm>,
    /// Shared dynamics settings; weight and mode are set per algorithm.
    pub game: GameConfig,
    pub sequential_weight: WeightChoice,
    pub parallel_weight: WeightChoice,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            template: InstanceSpec::default(),
            buyers: vec![5],
            sellers: (4..=10).collect(),
            cost_weights: vec![0.5],
            runs: 1000,
            base_seed: 0,
            algorithms: vec![Algorithm::Sequential, Algorithm::Parallel, Algorithm::Greedy],
            game: GameConfig::default(),
            sequential_weight: WeightChoice::Fixed(0.5),
            parallel_weight: WeightChoice::Fixed(0.1),
        }
    }
}

/// One solve of one instance by one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub k: usize,
    pub n: usize,
    pub tau: f64,
    pub run: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Inertia weight used; `None` for greedy.
    pub weight: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Mean payoff over the instance's sellers.
    pub mean_utility: f64,
    /// Mean final offer (sold quantity for greedy) over the sellers.
    pub mean_action: f64,
    pub participants: usize,
}

/// Means over the runs of one grid point and algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub k: usize,
    pub n: usize,
    pub tau: f64,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub mean_utility: f64,
    /// Sample standard deviation of the per-run mean utility.
    pub std_utility: f64,
    pub mean_action: f64,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
    /// `mean_utility / greedy mean_utility` at the same grid point.
    pub greedy_ratio: Option<f64>,
}

impl Aggregate {
    /// Relative gain over greedy, `ratio - 1`.
    pub fn improvement_over_greedy(&self) -> Option<f64> {
        self.greedy_ratio.map(|r| r - 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub aggregates: Vec<Aggregate>,
    pub rows: Vec<RunRow>,
}

impl ExperimentReport {
    pub fn aggregate(&self, k: usize, n: usize, tau: f64, algorithm: Algorithm) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.k == k && a.n == n && a.tau == tau && a.algorithm == algorithm)
    }
}

/// Seed of run `run` at grid point `(k, n)`. Independent of the cost weight,
/// so a τ sweep sees the same markets at every τ.
pub fn instance_seed(base_seed: u64, k: usize, n: usize, run: usize) -> u64 {
    let mut key = [0u8; 32];
    for (chunk, v) in key.chunks_exact_mut(8).zip([base_seed, k as u64, n as u64, run as u64]) {
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key).next_u64()
}

fn summarize(market: &MarketInstance, trace: &DynamicsTrace) -> (f64, f64, usize) {
    let n = market.n_sellers() as f64;
    let utility = trace.final_utilities().map_or(0.0, |u| u.iter().sum::<f64>() / n);
    let action = trace.final_offers().map_or(0.0, |a| a.iter().sum::<f64>() / n);
    (utility, action, market.n_sellers() - trace.nonparticipants.len())
}

fn solve_damped(
    market: &MarketInstance,
    base: &GameConfig,
    mode: UpdateMode,
    choice: WeightChoice,
) -> Result<DynamicsTrace, GameError> {
    let config = GameConfig { mode, ..base.clone() };
    match choice {
        WeightChoice::Fixed(w) => run_dynamics(market, &config.with_weight(w), None),
        WeightChoice::Select(probes) => match select_weight(market, &config, probes) {
            Ok((_, trace)) => Ok(trace),
            // nothing converged: keep the configured weight's run as a failure
            Err(GameError::NoConvergentWeightFound) => run_dynamics(market, &config, None),
            Err(e) => Err(e),
        },
    }
}

struct Solved {
    weight: Option<f64>,
    converged: bool,
    iterations: usize,
    utility: f64,
    action: f64,
    participants: usize,
}

fn solve(market: &MarketInstance, spec: &ExperimentSpec, algorithm: Algorithm) -> Result<Solved, HarnessError> {
    let n = market.n_sellers() as f64;
    let trace = match algorithm {
        Algorithm::Greedy => {
            let out = run_greedy(market);
            let participants = out.seller_sold.iter().filter(|&&q| q > 0.0).count();
            return Ok(Solved {
                weight: None,
                converged: true,
                iterations: 1,
                utility: out.mean_utility(),
                action: out.seller_sold.iter().sum::<f64>() / n,
                participants,
            });
        }
        Algorithm::Sequential => solve_damped(market, &spec.game, UpdateMode::Sequential, spec.sequential_weight)?,
        Algorithm::Parallel => solve_damped(market, &spec.game, UpdateMode::Parallel, spec.parallel_weight)?,
        Algorithm::BestResponseRaw => {
            let config = GameConfig {
                mode: UpdateMode::Sequential,
                ..spec.game.clone()
            };
            run_best_response_raw(market, &config, None)?
        }
    };
    let (utility, action, participants) = summarize(market, &trace);
    Ok(Solved {
        weight: Some(trace.inertia_weight),
        converged: trace.converged,
        iterations: trace.iterations_used,
        utility,
        action,
        participants,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (sum, count) = values.fold((0.0, 0), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / count as f64, count)
    }
}

fn aggregate(rows: &[RunRow], k: usize, n: usize, tau: f64, algorithm: Algorithm) -> Aggregate {
    let group: Vec<&RunRow> = rows
        .iter()
        .filter(|r| r.k == k && r.n == n && r.tau == tau && r.algorithm == algorithm)
        .collect();
    let (mean_utility, runs) = mean(group.iter().map(|r| r.mean_utility));
    let std_utility = if runs > 1 {
        let ss: f64 = group.iter().map(|r| (r.mean_utility - mean_utility).powi(2)).sum();
        (ss / (runs - 1) as f64).sqrt()
    } else {
        0.0
    };
    Aggregate {
        k,
        n,
        tau,
        algorithm,
        runs,
        mean_utility,
        std_utility,
        mean_action: mean(group.iter().map(|r| r.mean_action)).0,
        mean_iterations: mean(group.iter().map(|r| r.iterations as f64)).0,
        converged_fraction: mean(group.iter().map(|r| if r.converged { 1.0 } else { 0.0 })).0,
        greedy_ratio: None,
    }
}

/// Solves each market with every algorithm and appends rows and aggregates
/// for the grid point.
fn push_point(
    report: &mut ExperimentReport,
    spec: &ExperimentSpec,
    (k, n, tau): (usize, usize, f64),
    markets: impl Iterator<Item = Result<(u64, MarketInstance), HarnessError>>,
) -> Result<(), HarnessError> {
    let first_row = report.rows.len();
    for (run, market) in markets.enumerate() {
        let (seed, market) = market?;
        for &algorithm in &spec.algorithms {
            let solved = solve(&market, spec, algorithm)?;
            report.rows.push(RunRow {
                k,
                n,
                tau,
                run,
                seed,
                algorithm,
                weight: solved.weight,
                converged: solved.converged,
                iterations: solved.iterations,
                mean_utility: solved.utility,
                mean_action: solved.action,
                participants: solved.participants,
            });
        }
    }
    let rows = &report.rows[first_row..];
    let greedy = spec
        .algorithms
        .contains(&Algorithm::Greedy)
        .then(|| aggregate(rows, k, n, tau, Algorithm::Greedy).mean_utility);
    for &algorithm in &spec.algorithms {
        let mut agg = aggregate(rows, k, n, tau, algorithm);
        agg.greedy_ratio = greedy.filter(|&g| g != 0.0).map(|g| agg.mean_utility / g);
        report.aggregates.push(agg);
    }
    Ok(())
}

/// Solves one given market with every algorithm of `spec`; its grid fields
/// are ignored. The single row per algorithm has run 0 and seed 0.
pub fn run_instance(market: &MarketInstance, spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    if spec.algorithms.is_empty() {
        return Err(HarnessError::InvalidSpec("at least one algorithm is required"));
    }
    spec.game.validate()?;
    let tau = market.sellers().first().map_or(0.0, |s| s.cost_weight);
    let mut report = ExperimentReport::default();
    let point = (market.n_buyers(), market.n_sellers(), tau);
    push_point(&mut report, spec, point, std::iter::once(Ok((0, market.clone()))))?;
    Ok(report)
}

/// Runs every algorithm on `runs` seeded instances per grid point.
///
/// Grid points are visited buyers-major, then sellers, then cost weight;
/// rows and aggregates come out in that order with algorithms in the order
/// given. Non-convergence is recorded in the rows, never fatal.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    run_experiment_with(spec, |_, _| {})
}

/// [`run_experiment`] with a callback after each finished grid point,
/// receiving the point's index and the number of points.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    mut progress: impl FnMut(usize, usize),
) -> Result<ExperimentReport, HarnessError> {
    if spec.algorithms.is_empty() {
        return Err(HarnessError::InvalidSpec("at least one algorithm is required"));
    }
    spec.game.validate()?;
    let mut report = ExperimentReport::default();
    if spec.runs == 0 {
        return Ok(report);
    }
    let points: Vec<(usize, usize, f64)> = spec
        .buyers
        .iter()
        .flat_map(|&k| {
            spec.sellers
                .iter()
                .flat_map(move |&n| spec.cost_weights.iter().map(move |&tau| (k, n, tau)))
        })
        .collect();
    for (index, &(k, n, tau)) in points.iter().enumerate() {
        let markets = (0..spec.runs).map(|run| {
            let seed = instance_seed(spec.base_seed, k, n, run);
            let market = generate_instance(&InstanceSpec {
                n_sellers: n,
                n_buyers: k,
                cost_weight: tau,
                seed,
                ..spec.template.clone()
            });
            market.map(|m| (seed, m))
        });
        push_point(&mut report, spec, (k, n, tau), markets)?;
        progress(index, points.len());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentSpec {
        ExperimentSpec {
            sellers: vec![4],
            buyers: vec![3],
            runs: 3,
            algorithms: vec![Algorithm::Sequential, Algorithm::Greedy],
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn zero_runs_gives_empty_report() {
        let spec = ExperimentSpec { runs: 0, ..small() };
        assert_eq!(run_experiment(&spec).unwrap(), ExperimentReport::default());
    }

    #[test]
    fn no_algorithm_is_an_error() {
        let spec = ExperimentSpec {
            algorithms: vec![],
            ..small()
        };
        assert!(run_experiment(&spec).is_err());
    }

    #[test]
    fn aggregates_are_row_means() {
        let report = run_experiment(&small()).unwrap();
        assert_eq!(report.rows.len(), 6);
        for agg in &report.aggregates {
            let rows: Vec<_> = report.rows.iter().filter(|r| r.algorithm == agg.algorithm).collect();
            let m = rows.iter().map(|r| r.mean_utility).sum::<f64>() / rows.len() as f64;
            assert!((agg.mean_utility - m).abs() < 1e-12);
            assert_eq!(agg.runs, 3);
        }
        let seq = report.aggregate(3, 4, 0.5, Algorithm::Sequential).unwrap();
        let greedy = report.aggregate(3, 4, 0.5, Algorithm::Greedy).unwrap();
        assert_eq!(seq.greedy_ratio, Some(seq.mean_utility / greedy.mean_utility));
    }

    #[test]
    fn seeds_do_not_depend_on_tau() {
        let spec = ExperimentSpec {
            cost_weights: vec![0.25, 1.0],
            ..small()
        };
        let report = run_experiment(&spec).unwrap();
        let seeds = |tau: f64| {
            report
                .rows
                .iter()
                .filter(|r| r.tau == tau)
                .map(|r| r.seed)
                .collect::<Vec<_>>()
        };
        assert_eq!(seeds(0.25), seeds(1.0));
        assert_ne!(instance_seed(0, 3, 4, 0), instance_seed(0, 3, 4, 1));
        assert_ne!(instance_seed(0, 3, 4, 0), instance_seed(1, 3, 4, 0));
    }
}
