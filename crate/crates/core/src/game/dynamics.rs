use serde::{Deserialize, Serialize};

use super::response::{equilibrium_gap, regime_reply};
use super::{GameConfig, GameError, GameView, UpdateMode};
use crate::market::{MarketInstance, StrategyVector};

/// State after one iteration of the dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub offers: StrategyVector,
    pub trading_price: Option<f64>,
    pub utilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrace {
    /// One row per completed iteration; the initial strategy is not a row.
    pub iterations: Vec<TraceRow>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Sellers that sell nothing at the final strategy.
    pub nonparticipants: Vec<usize>,
    pub inertia_weight: f64,
}

impl DynamicsTrace {
    pub fn final_offers(&self) -> Option<&StrategyVector> {
        self.iterations.last().map(|r| &r.offers)
    }

    pub fn final_utilities(&self) -> Option<&[f64]> {
        self.iterations.last().map(|r| r.utilities.as_slice())
    }
}

#[inline]
fn blend(w: f64, response: f64, current: f64, bound: f64) -> f64 {
    ((1.0 - w) * response + w * current).clamp(0.0, bound)
}

fn sequential_pass(view: &mut GameView, offers: &mut [f64], config: &GameConfig) {
    let w = config.inertia_weight;
    let mut turn = |i: usize, offers: &mut [f64]| {
        let r = regime_reply(view, offers, i).0;
        offers[i] = blend(w, r, offers[i], view.bounds[i]);
    };
    match &config.order {
        Some(order) => order.iter().for_each(|&i| turn(i, offers)),
        None => (0..offers.len()).for_each(|i| turn(i, offers)),
    }
}

fn parallel_pass(view: &mut GameView, offers: &mut [f64], config: &GameConfig) {
    let w = config.inertia_weight;
    let mut snapshot = offers.to_vec();
    let responses: Vec<f64> = (0..offers.len())
        .map(|i| regime_reply(view, &mut snapshot, i).0)
        .collect();
    for (i, r) in responses.into_iter().enumerate() {
        offers[i] = blend(w, r, offers[i], view.bounds[i]);
    }
}

fn check_order(config: &GameConfig, n: usize) -> Result<(), GameError> {
    if let Some(order) = &config.order {
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(GameError::InvalidConfig(
                "turn order must be a permutation of seller indices",
            ));
        }
    }
    Ok(())
}

/// One sequential pass: sellers update in turn, each seeing fresh offers.
pub fn step_sequential(
    market: &MarketInstance,
    offers: &StrategyVector,
    config: &GameConfig,
) -> Result<StrategyVector, GameError> {
    market.check_offers(offers)?;
    check_order(config, market.n_sellers())?;
    let mut view = GameView::new(market);
    let mut next = offers.0.clone();
    sequential_pass(&mut view, &mut next, config);
    Ok(StrategyVector(next))
}

/// One synchronous pass: every seller responds to the same snapshot.
pub fn step_parallel(
    market: &MarketInstance,
    offers: &StrategyVector,
    config: &GameConfig,
) -> Result<StrategyVector, GameError> {
    market.check_offers(offers)?;
    let mut view = GameView::new(market);
    let mut next = offers.0.clone();
    parallel_pass(&mut view, &mut next, config);
    Ok(StrategyVector(next))
}

fn row(view: &mut GameView, offers: &[f64]) -> TraceRow {
    let clearing = view.clear(offers);
    let utilities = (0..offers.len())
        .map(|i| clearing.map_or(0.0, |c| view.payoff(&c, offers, i)))
        .collect();
    TraceRow {
        offers: StrategyVector(offers.to_vec()),
        trading_price: clearing.map(|c| c.price),
        utilities,
    }
}

/// Iterates inertia-weighted best responses until the largest offer change
/// drops below the convergence threshold or the iteration budget runs out.
/// Settled offers count as converged only once no seller can gain more than
/// the Nash tolerance by a unilateral change, judged with the grid-checked
/// best response. Iterations themselves use the exact regime optimum.
///
/// Starts from every seller offering its capacity bound unless `initial` is
/// given. A budget overrun is reported through `converged = false`.
pub fn run_dynamics(
    market: &MarketInstance,
    config: &GameConfig,
    initial: Option<&StrategyVector>,
) -> Result<DynamicsTrace, GameError> {
    config.validate()?;
    iterate(market, config, initial)
}

/// Undamped best-response dynamics: every update jumps straight to the best
/// response (`w = 0`). Often cycles between price regimes; kept as a
/// reference point for the damped dynamics.
pub fn run_best_response_raw(
    market: &MarketInstance,
    config: &GameConfig,
    initial: Option<&StrategyVector>,
) -> Result<DynamicsTrace, GameError> {
    config.with_weight(0.5).validate()?;
    iterate(market, &config.with_weight(0.0), initial)
}

fn iterate(
    market: &MarketInstance,
    config: &GameConfig,
    initial: Option<&StrategyVector>,
) -> Result<DynamicsTrace, GameError> {
    check_order(config, market.n_sellers())?;
    let mut offers = match initial {
        Some(init) => {
            market.check_offers(init)?;
            init.0.clone()
        }
        None => market.capacity_offers().0,
    };
    let mut view = GameView::new(market);
    let mut iterations = Vec::new();
    let mut converged = false;
    let mut previous = offers.clone();
    for _ in 0..config.max_iterations {
        previous.copy_from_slice(&offers);
        match config.mode {
            UpdateMode::Sequential => sequential_pass(&mut view, &mut offers, config),
            UpdateMode::Parallel => parallel_pass(&mut view, &mut offers, config),
        }
        iterations.push(row(&mut view, &offers));
        let change = previous
            .iter()
            .zip(&offers)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // Payoffs jump at regime boundaries, so settled offers are not yet an
        // equilibrium; confirm that no seller still has a profitable reply.
        if change < config.convergence_epsilon
            && equilibrium_gap(&mut view, &mut offers, config.best_response_grid) <= config.nash_tolerance
        {
            converged = true;
            break;
        }
    }
    let nonparticipants = match view.clear(&offers) {
        Some(c) => (0..offers.len()).filter(|&i| c.sold(i, offers[i]) <= 0.0).collect(),
        None => (0..offers.len()).collect(),
    };
    Ok(DynamicsTrace {
        iterations_used: iterations.len(),
        iterations,
        converged,
        nonparticipants,
        inertia_weight: config.inertia_weight,
    })
}

/// Bisection over the inertia weight.
///
/// Probes the midpoint of the current interval (starting from `(0, 1)`);
/// a converging probe moves the search to the lower half, a failing one to
/// the upper half. Returns the smallest converging weight seen.
pub fn select_weight(
    market: &MarketInstance,
    template: &GameConfig,
    probes: usize,
) -> Result<(f64, DynamicsTrace), GameError> {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best: Option<(f64, DynamicsTrace)> = None;
    for _ in 0..probes {
        let w = 0.5 * (lo + hi);
        let trace = run_dynamics(market, &template.with_weight(w), None)?;
        if trace.converged {
            if best.as_ref().map_or(true, |(bw, _)| w < *bw) {
                best = Some((w, trace));
            }
            hi = w;
        } else {
            lo = w;
        }
    }
    best.ok_or(GameError::NoConvergentWeightFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{canonicalize_market, BuyerProfile, SellerProfile};

    #[test]
    fn blend_arithmetic() {
        assert!((blend(0.3, 20.0, 10.0, 100.0) - 17.0).abs() < 1e-12);
        assert_eq!(
            blend(0.3, 200.0, 10.0, 100.0).min(100.0),
            blend(0.3, 200.0, 10.0, 100.0)
        );
    }

    #[test]
    fn rejects_bad_turn_order() {
        let m = canonicalize_market(
            vec![
                SellerProfile::new("a", 10.0, 5.0, 0.5).unwrap(),
                SellerProfile::new("b", 20.0, 5.0, 0.5).unwrap(),
            ],
            vec![BuyerProfile::new("x", 40.0, 5.0).unwrap()],
        )
        .unwrap();
        let cfg = GameConfig {
            order: Some(vec![0, 0]),
            ..GameConfig::default()
        };
        assert!(run_dynamics(&m, &cfg, None).is_err());
        let cfg = GameConfig {
            order: Some(vec![1, 0]),
            ..GameConfig::default()
        };
        assert!(run_dynamics(&m, &cfg, None).is_ok());
    }

    #[test]
    fn weight_outside_unit_interval_rejected() {
        let m = canonicalize_market(
            vec![SellerProfile::new("a", 10.0, 5.0, 0.5).unwrap()],
            vec![BuyerProfile::new("x", 40.0, 5.0).unwrap()],
        )
        .unwrap();
        for w in [0.0, 1.0, -0.1, 1.5] {
            let cfg = GameConfig::default().with_weight(w);
            assert!(matches!(run_dynamics(&m, &cfg, None), Err(GameError::InvalidConfig(_))));
        }
    }
}
