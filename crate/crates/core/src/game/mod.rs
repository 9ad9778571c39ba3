//! The offer-quantity game among storage sellers.
//!
//! Each seller picks how much energy to put on the market; the double auction
//! then fixes price and sold quantities. A seller's payoff is its trading
//! margin minus a quadratic cost on the energy it actually sold. Equilibria
//! are reached with inertia-weighted best-response dynamics.

mod dynamics;
mod regime;
mod response;

pub use dynamics::{
    run_best_response_raw, run_dynamics, select_weight, step_parallel, step_sequential, DynamicsTrace, TraceRow,
};
pub use response::{best_response, closed_forms, utility, verify_nash, ClosedForm, NashReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{scan_summary, ClearingSummary, MarketError, MarketInstance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid game configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("no probed inertia weight converged")]
    NoConvergentWeightFound,
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// How sellers take turns within one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateMode {
    /// One seller at a time, each seeing the updates of those before it.
    Sequential,
    /// All sellers respond to the previous iteration's snapshot.
    Parallel,
}

impl std::str::FromStr for UpdateMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "seq" | "sequential" => Ok(UpdateMode::Sequential),
            "par" | "parallel" => Ok(UpdateMode::Parallel),
            other => Err(format!("unknown mode `{other}` (expected seq or par)")),
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateMode::Sequential => "sequential",
            UpdateMode::Parallel => "parallel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Weight `w` on the current offer in `a ← (1-w)·r + w·a`.
    pub inertia_weight: f64,
    /// Convergence threshold on the largest offer change, MWh.
    pub convergence_epsilon: f64,
    pub max_iterations: usize,
    pub mode: UpdateMode,
    /// Points of the numeric best-response search over `[0, B_i]`.
    pub best_response_grid: usize,
    /// Relative tolerance of the equilibrium check.
    pub nash_tolerance: f64,
    /// Sequential turn order; ascending seller index when `None`.
    pub order: Option<Vec<usize>>,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            inertia_weight: 0.5,
            convergence_epsilon: 1e-4,
            max_iterations: 500,
            mode: UpdateMode::Sequential,
            best_response_grid: 201,
            nash_tolerance: 1e-6,
            order: None,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), GameError> {
        if !(self.inertia_weight > 0.0 && self.inertia_weight < 1.0) {
            return Err(GameError::InvalidConfig("inertia weight must lie in (0, 1)"));
        }
        if !(self.convergence_epsilon > 0.0) {
            return Err(GameError::InvalidConfig("convergence epsilon must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(GameError::InvalidConfig("max iterations must be at least 1"));
        }
        if self.best_response_grid < 3 {
            return Err(GameError::InvalidConfig("best-response grid needs at least 3 points"));
        }
        if !(self.nash_tolerance >= 0.0) {
            return Err(GameError::InvalidConfig("nash tolerance must be non-negative"));
        }
        Ok(())
    }

    pub fn with_weight(&self, w: f64) -> Self {
        GameConfig {
            inertia_weight: w,
            ..self.clone()
        }
    }
}

/// Flattened view of a market used on hot paths; owns its scratch buffer.
pub(crate) struct GameView {
    pub prices: Vec<f64>,
    pub bounds: Vec<f64>,
    pub costs: Vec<f64>,
    pub bids: Vec<f64>,
    pub demands: Vec<f64>,
    /// `cum_demand[m]` = total demand of buyers `0..=m`.
    pub cum_demand: Vec<f64>,
    scratch: Vec<f64>,
    pub(crate) breaks: Vec<f64>,
    pub(crate) others: Vec<f64>,
}

impl GameView {
    pub fn new(market: &MarketInstance) -> Self {
        GameView {
            prices: market.seller_prices(),
            bounds: market.sellers().iter().map(|s| s.capacity_bound).collect(),
            costs: market.sellers().iter().map(|s| s.cost_weight).collect(),
            bids: market.buyer_bids(),
            demands: market.buyer_demands(),
            cum_demand: market
                .buyer_demands()
                .iter()
                .scan(0.0, |acc, x| {
                    *acc += x;
                    Some(*acc)
                })
                .collect(),
            scratch: Vec::with_capacity(market.n_sellers().max(market.n_buyers())),
            breaks: Vec::new(),
            others: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.prices.len()
    }

    pub fn clear(&mut self, offers: &[f64]) -> Option<ClearingSummary> {
        scan_summary(
            &self.prices,
            offers,
            &self.bids,
            &self.demands,
            &mut self.scratch,
            false,
        )
    }

    /// Seller `i`'s payoff at `offers`.
    pub fn utility(&mut self, offers: &[f64], i: usize) -> f64 {
        match self.clear(offers) {
            Some(c) => self.payoff(&c, offers, i),
            None => 0.0,
        }
    }

    pub fn payoff(&self, c: &ClearingSummary, offers: &[f64], i: usize) -> f64 {
        let q = c.sold(i, offers[i]);
        if q <= 0.0 {
            return 0.0;
        }
        (c.price - self.prices[i]) * q - self.costs[i] * q * q
    }

    /// Seller `i`'s payoff if it alone switched to offer `a`.
    pub fn utility_at(&mut self, offers: &mut [f64], i: usize, a: f64) -> f64 {
        let saved = offers[i];
        offers[i] = a;
        let u = self.utility(offers, i);
        offers[i] = saved;
        u
    }
}
