//! Greedy bilateral matching baseline.
//!
//! Sellers, cheapest first, sell to the highest-bid buyers that still need
//! energy. Each match is priced at the midpoint of the pair's reservation
//! values and sized to maximise the seller's payoff given what it already
//! sold, within its remaining capacity and the buyer's remaining demand.

use serde::{Deserialize, Serialize};

use crate::market::{MarketInstance, QUANTITY_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyMatch {
    pub seller: usize,
    pub buyer: usize,
    pub quantity: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyOutcome {
    pub matches: Vec<GreedyMatch>,
    pub seller_utility: Vec<f64>,
    pub seller_sold: Vec<f64>,
    pub buyer_filled: Vec<f64>,
}

impl GreedyOutcome {
    pub fn mean_utility(&self) -> f64 {
        mean(&self.seller_utility)
    }

    pub fn mean_sold(&self) -> f64 {
        mean(&self.seller_sold)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs the greedy baseline with sellers in ascending price order.
pub fn run_greedy(market: &MarketInstance) -> GreedyOutcome {
    let order: Vec<usize> = (0..market.n_sellers()).collect();
    run_greedy_ordered(market, &order)
}

/// Runs the greedy baseline visiting sellers in `order`.
pub fn run_greedy_ordered(market: &MarketInstance, order: &[usize]) -> GreedyOutcome {
    let sellers = market.sellers();
    let buyers = market.buyers();
    let mut remaining_demand: Vec<f64> = buyers.iter().map(|b| b.demand).collect();
    let mut sold = vec![0.0; sellers.len()];
    let mut revenue_margin = vec![0.0; sellers.len()];
    let mut matches = Vec::new();

    // Per-match sizing is myopic, so a second pass can never add a match;
    // loop anyway until a pass makes no trade.
    loop {
        let mut traded = false;
        for &i in order {
            let s = &sellers[i];
            for (k, b) in buyers.iter().enumerate() {
                if remaining_demand[k] <= QUANTITY_TOLERANCE {
                    continue;
                }
                if b.reservation_bid <= s.reservation_price {
                    break;
                }
                let price = 0.5 * (s.reservation_price + b.reservation_bid);
                // argmax_q (p - s)q - τ(q_prev + q)²
                let wanted = (price - s.reservation_price) / (2.0 * s.cost_weight) - sold[i];
                let capacity = s.capacity_bound - sold[i];
                let q = wanted.min(capacity).min(remaining_demand[k]);
                if q <= QUANTITY_TOLERANCE {
                    // later buyers bid less, so the seller wants even less
                    break;
                }
                sold[i] += q;
                remaining_demand[k] -= q;
                revenue_margin[i] += (price - s.reservation_price) * q;
                matches.push(GreedyMatch {
                    seller: i,
                    buyer: k,
                    quantity: q,
                    price,
                });
                traded = true;
            }
        }
        if !traded {
            break;
        }
    }

    let seller_utility = sellers
        .iter()
        .enumerate()
        .map(|(i, s)| revenue_margin[i] - s.cost_weight * sold[i] * sold[i])
        .collect();
    let buyer_filled = buyers
        .iter()
        .zip(&remaining_demand)
        .map(|(b, r)| b.demand - r)
        .collect();
    GreedyOutcome {
        matches,
        seller_utility,
        seller_sold: sold,
        buyer_filled,
    }
}
