//! Multi-period trading among storage owners whose roles follow their charge.
//!
//! Every period each player above its reserve sells the surplus, each player
//! below it buys the deficit, and the rest sit out. The game is solved, the
//! auction clears at the final offers and the traded energy moves between
//! batteries. An optional load profile then draws on (or charges) each battery
//! before the next period.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, InstanceSpec, Range};
use crate::game::{run_dynamics, GameConfig};
use crate::market::{canonicalize_market, clear_market, AgentId, BuyerProfile, SellerProfile, QUANTITY_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Seller,
    Buyer,
    Idle,
}

/// A storage owner taking part in the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Player {
    pub charge: f64,
    pub capacity_max: f64,
    pub reserve: f64,
    /// Reservation price used whenever the player sells; redrawn each period
    /// when `None`.
    pub price: Option<f64>,
    /// Reservation bid used whenever the player buys; redrawn when `None`.
    pub bid: Option<f64>,
}

impl Player {
    pub fn new(charge: f64, capacity_max: f64, reserve: f64) -> Self {
        Player {
            charge,
            capacity_max,
            reserve,
            price: None,
            bid: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub charge: f64,
    pub capacity_max: f64,
    pub reserve: f64,
    pub role: Role,
}

impl BatteryState {
    pub fn surplus(&self) -> f64 {
        (self.charge - self.reserve).max(0.0)
    }

    pub fn deficit(&self) -> f64 {
        (self.reserve - self.charge).max(0.0)
    }

    pub fn at_capacity(&self) -> bool {
        self.charge >= self.capacity_max - QUANTITY_TOLERANCE
    }
}

fn role_of(charge: f64, reserve: f64) -> Role {
    if charge - reserve > QUANTITY_TOLERANCE {
        Role::Seller
    } else if reserve - charge > QUANTITY_TOLERANCE {
        Role::Buyer
    } else {
        Role::Idle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSimConfig {
    pub periods: usize,
    pub game: GameConfig,
    pub seller_price_range: Range,
    pub buyer_bid_range: Range,
    pub cost_weight: f64,
    pub seed: u64,
    /// `load_profile[t][j]`: energy drawn from player `j`'s battery at the end
    /// of period `t`; negative values charge it. Missing entries are zero.
    pub load_profile: Vec<Vec<f64>>,
}

impl Default for TimeSimConfig {
    fn default() -> Self {
        TimeSimConfig {
            periods: 6,
            game: GameConfig::default(),
            seller_price_range: Range::new(10.0, 50.0),
            buyer_bid_range: Range::new(15.0, 60.0),
            cost_weight: 0.5,
            seed: 0,
            load_profile: Vec::new(),
        }
    }
}

impl TimeSimConfig {
    fn load(&self, period: usize, player: usize) -> f64 {
        self.load_profile
            .get(period)
            .and_then(|row| row.get(player))
            .copied()
            .unwrap_or(0.0)
    }
}

/// What happened in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub period: usize,
    /// States at the start of the period, with the roles taken in it.
    pub start: Vec<BatteryState>,
    /// Energy sold per player this period.
    pub sold: Vec<f64>,
    /// Energy bought per player this period.
    pub bought: Vec<f64>,
    pub trading_price: Option<f64>,
    /// Whether the dynamics converged; `None` when no market formed.
    pub converged: Option<bool>,
    /// Charges right after trading, before the load is applied.
    pub after_trade: Vec<f64>,
    /// Load that could not be served (positive) or stored (negative) because
    /// the battery hit a bound.
    pub unmet_load: Vec<f64>,
}

impl PeriodRecord {
    pub fn roles(&self) -> impl Iterator<Item = Role> + '_ {
        self.start.iter().map(|s| s.role)
    }
}

/// Capacity of every battery made by [`initial_split`], MWh.
pub const SPLIT_CAPACITY: f64 = 300.0;
/// Reserve of every battery made by [`initial_split`], MWh.
pub const SPLIT_RESERVE: f64 = 60.0;

/// `n_sellers` players holding a surplus drawn from `spec.surplus_range`
/// above their reserve, followed by `n_buyers` players short of it by a
/// draw from `spec.demand_range`.
pub fn initial_split(n_sellers: usize, n_buyers: usize, spec: &InstanceSpec) -> Vec<Player> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sellers = (0..n_sellers).map(|_| {
        let charge = (SPLIT_RESERVE + spec.surplus_range.sample(&mut rng)).min(SPLIT_CAPACITY);
        Player::new(charge, SPLIT_CAPACITY, SPLIT_RESERVE)
    });
    let sellers: Vec<Player> = sellers.collect();
    let buyers = (0..n_buyers).map(|_| {
        let charge = (SPLIT_RESERVE - spec.demand_range.sample(&mut rng)).max(0.0);
        Player::new(charge, SPLIT_CAPACITY, SPLIT_RESERVE)
    });
    sellers.into_iter().chain(buyers).collect()
}

fn validate(players: &[Player], config: &TimeSimConfig) -> Result<(), HarnessError> {
    for p in players {
        let ok = p.capacity_max.is_finite()
            && p.capacity_max > 0.0
            && (0.0..=p.capacity_max).contains(&p.charge)
            && (0.0..=p.capacity_max).contains(&p.reserve);
        if !ok {
            return Err(HarnessError::InvalidSpec(
                "charge and reserve must lie within [0, capacity_max]",
            ));
        }
    }
    if !(config.seller_price_range.is_valid()) {
        return Err(HarnessError::InvalidRange("seller price range"));
    }
    if !(config.buyer_bid_range.is_valid()) {
        return Err(HarnessError::InvalidRange("buyer bid range"));
    }
    if !(config.cost_weight > 0.0) {
        return Err(HarnessError::InvalidSpec("cost weight must be positive"));
    }
    config.game.validate()?;
    Ok(())
}

fn period_rng(seed: u64, period: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(period as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Draws per-player prices and bids for one period. Both are drawn for every
/// player so the stream does not depend on roles; exact repeats are redrawn.
fn draw_quotes(players: &[Player], config: &TimeSimConfig, period: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = period_rng(config.seed, period);
    let mut prices = Vec::with_capacity(players.len());
    let mut bids = Vec::with_capacity(players.len());
    for p in players {
        let mut price = config.seller_price_range.sample(&mut rng);
        while prices.contains(&price) && config.seller_price_range.lo < config.seller_price_range.hi {
            price = config.seller_price_range.sample(&mut rng);
        }
        let mut bid = config.buyer_bid_range.sample(&mut rng);
        while bids.contains(&bid) && config.buyer_bid_range.lo < config.buyer_bid_range.hi {
            bid = config.buyer_bid_range.sample(&mut rng);
        }
        prices.push(p.price.unwrap_or(price));
        bids.push(p.bid.unwrap_or(bid));
    }
    (prices, bids)
}

fn player_index(id: &AgentId) -> usize {
    id.as_str()[1..].parse().expect("player ids are p<index>")
}

/// Simulates `config.periods` periods starting from `players`.
pub fn run_time_dependent(players: &[Player], config: &TimeSimConfig) -> Result<Vec<PeriodRecord>, HarnessError> {
    validate(players, config)?;
    let mut charges: Vec<f64> = players.iter().map(|p| p.charge).collect();
    let mut history = Vec::with_capacity(config.periods);
    for period in 0..config.periods {
        let start: Vec<BatteryState> = players
            .iter()
            .zip(&charges)
            .map(|(p, &charge)| BatteryState {
                charge,
                capacity_max: p.capacity_max,
                reserve: p.reserve,
                role: role_of(charge, p.reserve),
            })
            .collect();
        let (prices, bids) = draw_quotes(players, config, period);
        let mut sellers = Vec::new();
        let mut buyers = Vec::new();
        for (j, s) in start.iter().enumerate() {
            let id = format!("p{j}");
            match s.role {
                Role::Seller => sellers.push(SellerProfile::new(
                    id.as_str(),
                    prices[j],
                    s.surplus(),
                    config.cost_weight,
                )?),
                Role::Buyer => buyers.push(BuyerProfile::new(id.as_str(), bids[j], s.deficit())?),
                Role::Idle => {}
            }
        }

        let mut sold = vec![0.0; players.len()];
        let mut bought = vec![0.0; players.len()];
        let mut trading_price = None;
        let mut converged = None;
        if !sellers.is_empty() && !buyers.is_empty() {
            let market = canonicalize_market(sellers, buyers)?;
            let trace = run_dynamics(&market, &config.game, None)?;
            converged = Some(trace.converged);
            let offers = trace
                .final_offers()
                .cloned()
                .unwrap_or_else(|| market.capacity_offers());
            let outcome = clear_market(&market, &offers)?;
            trading_price = outcome.trading_price;
            for (id, q) in market.split_seller_quantities(&outcome.sold) {
                sold[player_index(&id)] = q;
            }
            for (id, q) in market.split_buyer_quantities(&outcome.bought) {
                bought[player_index(&id)] = q;
            }
        }

        let after_trade: Vec<f64> = (0..players.len())
            .map(|j| (charges[j] - sold[j] + bought[j]).clamp(0.0, players[j].capacity_max))
            .collect();
        let mut unmet_load = vec![0.0; players.len()];
        for j in 0..players.len() {
            let wanted = after_trade[j] - config.load(period, j);
            charges[j] = wanted.clamp(0.0, players[j].capacity_max);
            unmet_load[j] = charges[j] - wanted;
        }
        history.push(PeriodRecord {
            period,
            start,
            sold,
            bought,
            trading_price,
            converged,
            after_trade,
            unmet_load,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn everyone_at_reserve_never_trades() {
        let players = vec![Player::new(20.0, 100.0, 20.0); 4];
        let history = run_time_dependent(&players, &TimeSimConfig::default()).unwrap();
        assert_eq!(history.len(), 6);
        for rec in &history {
            assert!(rec.roles().all(|r| r == Role::Idle));
            assert!(rec.converged.is_none());
            assert!(rec.sold.iter().chain(&rec.bought).all(|&q| q == 0.0));
        }
    }

    #[test]
    fn charge_outside_capacity_rejected() {
        let players = vec![Player::new(120.0, 100.0, 20.0)];
        assert!(run_time_dependent(&players, &TimeSimConfig::default()).is_err());
    }

    #[test]
    fn one_sided_market_does_not_trade() {
        let players = vec![Player::new(80.0, 100.0, 20.0), Player::new(60.0, 100.0, 20.0)];
        let history = run_time_dependent(&players, &TimeSimConfig::default()).unwrap();
        assert!(history.iter().all(|r| r.trading_price.is_none()));
        assert_eq!(history.last().unwrap().after_trade, vec![80.0, 60.0]);
    }

    #[test]
    fn generation_fills_battery_to_capacity() {
        let players = vec![Player::new(90.0, 100.0, 20.0)];
        let config = TimeSimConfig {
            periods: 1,
            load_profile: vec![vec![-30.0]],
            ..TimeSimConfig::default()
        };
        let rec = &run_time_dependent(&players, &config).unwrap()[0];
        // 20 of the 30 MWh generated cannot be stored
        assert_eq!(rec.unmet_load, vec![-20.0]);
    }
}
