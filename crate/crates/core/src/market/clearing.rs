use serde::{Deserialize, Serialize};

use super::QUANTITY_TOLERANCE as TOL;
use super::{allocation::equal_burden_level, MarketError, MarketInstance, StrategyVector};

/// Seller `L` and buyer `M` at the supply/demand crossing (0-based indices
/// into the canonical market). Both are excluded from trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarginalPair {
    pub seller: usize,
    pub buyer: usize,
}

/// Result of one double-auction clearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    /// `None` when no individually rational trade exists.
    pub trading_price: Option<f64>,
    pub marginal_seller: Option<usize>,
    pub marginal_buyer: Option<usize>,
    pub sold: Vec<f64>,
    pub bought: Vec<f64>,
    pub participated_sellers: Vec<usize>,
    pub participated_buyers: Vec<usize>,
}

impl AuctionOutcome {
    fn no_trade(n_sellers: usize, n_buyers: usize) -> Self {
        AuctionOutcome {
            trading_price: None,
            marginal_seller: None,
            marginal_buyer: None,
            sold: vec![0.0; n_sellers],
            bought: vec![0.0; n_buyers],
            participated_sellers: Vec::new(),
            participated_buyers: Vec::new(),
        }
    }

    pub fn is_trade(&self) -> bool {
        self.trading_price.is_some()
    }

    pub fn volume(&self) -> f64 {
        self.sold.iter().sum()
    }
}

/// Everything the game needs from a clearing, without allocating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ClearingSummary {
    pub pair: MarginalPair,
    pub price: f64,
    /// Total offer of participating sellers.
    pub supply: f64,
    /// Total demand of participating buyers.
    pub demand: f64,
    /// Number of participating sellers with a positive offer.
    pub n_participants: usize,
    seller_level: f64,
    buyer_level: f64,
}

impl ClearingSummary {
    /// Energy sold by seller `i` holding offer `offer`.
    #[inline]
    pub fn sold(&self, i: usize, offer: f64) -> f64 {
        if i < self.pair.seller && offer > 0.0 {
            (offer - self.seller_level).max(0.0)
        } else {
            0.0
        }
    }

    #[inline]
    pub fn bought(&self, k: usize, demand: f64) -> f64 {
        if k < self.pair.buyer {
            (demand - self.buyer_level).max(0.0)
        } else {
            0.0
        }
    }

    pub fn is_oversupplied(&self) -> bool {
        self.supply > self.demand
    }
}

#[inline]
fn next_positive(offers: &[f64], from: usize) -> usize {
    let mut i = from;
    while i < offers.len() && offers[i] <= 0.0 {
        i += 1;
    }
    i
}

/// Merged greedy scan of the supply and demand step curves.
///
/// Walks (seller, buyer) step pairs in canonical order, consuming quantity
/// while the bid covers the price. The last pair that traded a positive
/// quantity is the marginal pair. Zero offers are skipped. When a seller and a
/// buyer run out together only the seller advances, so the next seller meets
/// the buyer's empty remainder and the outcome matches a marginally smaller
/// supply.
pub(crate) fn scan_step_curves(prices: &[f64], offers: &[f64], bids: &[f64], demands: &[f64]) -> Option<MarginalPair> {
    walk(prices, offers, bids, demands).0
}

/// The merged scan itself: the marginal pair and the quantity exchanged
/// along the way, marginal steps included.
#[inline]
fn walk(prices: &[f64], offers: &[f64], bids: &[f64], demands: &[f64]) -> (Option<MarginalPair>, f64) {
    let n = prices.len();
    let k_n = bids.len();
    let mut i = next_positive(offers, 0);
    if i >= n || k_n == 0 {
        return (None, 0.0);
    }
    let mut k = 0;
    let mut volume = 0.0;
    let mut rem_supply = offers[i];
    let mut rem_demand = demands[0];
    let mut last = None;
    while i < n && k < k_n {
        if bids[k] < prices[i] {
            break;
        }
        let q = rem_supply.min(rem_demand);
        last = Some(MarginalPair { seller: i, buyer: k });
        volume += q;
        rem_supply -= q;
        rem_demand -= q;
        if rem_supply <= TOL {
            i = next_positive(offers, i + 1);
            if i < n {
                rem_supply = offers[i];
            }
        } else if rem_demand <= TOL {
            k += 1;
            if k < k_n {
                rem_demand = demands[k];
            }
        }
    }
    (last, volume)
}

/// Clearing summary on raw canonical slices. `scratch` is reused. The buyer
/// side's cut is only computed `with_buyers`; otherwise buyers read as cut
/// to zero.
pub(crate) fn scan_summary(
    prices: &[f64],
    offers: &[f64],
    bids: &[f64],
    demands: &[f64],
    scratch: &mut Vec<f64>,
    with_buyers: bool,
) -> Option<ClearingSummary> {
    let pair = scan_step_curves(prices, offers, bids, demands)?;
    let price = 0.5 * (prices[pair.seller] + bids[pair.buyer]);
    let part_offers = &offers[..pair.seller];
    let part_demands = &demands[..pair.buyer];
    let supply: f64 = part_offers.iter().filter(|&&a| a > 0.0).sum();
    let demand: f64 = part_demands.iter().sum();
    let n_participants = part_offers.iter().filter(|&&a| a > 0.0).count();
    let seller_level = equal_burden_level(part_offers, demand, scratch);
    let buyer_level = if with_buyers {
        equal_burden_level(part_demands, supply, scratch)
    } else {
        f64::INFINITY
    };
    Some(ClearingSummary {
        pair,
        price,
        supply,
        demand,
        n_participants,
        seller_level,
        buyer_level,
    })
}

/// Locates the marginal pair `(L, M)`; `None` means no rational trade exists.
///
/// `offers` must already satisfy [`MarketInstance::check_offers`].
pub fn find_intersection(market: &MarketInstance, offers: &StrategyVector) -> Option<MarginalPair> {
    scan_step_curves(
        &market.seller_prices(),
        offers,
        &market.buyer_bids(),
        &market.buyer_demands(),
    )
}

/// Quantity exchanged along the merged scan before the marginal seller and
/// buyer are excluded: where the offered supply curve meets the demand curve.
pub fn scan_volume(market: &MarketInstance, offers: &StrategyVector) -> f64 {
    walk(
        &market.seller_prices(),
        offers,
        &market.buyer_bids(),
        &market.buyer_demands(),
    )
    .1
}

/// Midpoint of the marginal seller's price and the marginal buyer's bid.
pub fn trading_price(market: &MarketInstance, pair: MarginalPair) -> f64 {
    0.5 * (market.sellers()[pair.seller].reservation_price + market.buyers()[pair.buyer].reservation_bid)
}

/// Runs the double auction for the given offers.
///
/// Sellers before `L` with a positive offer and buyers before `M` trade at the
/// midpoint price; the long side is cut by equal burden sharing.
pub fn clear_market(market: &MarketInstance, offers: &StrategyVector) -> Result<AuctionOutcome, MarketError> {
    market.check_offers(offers)?;
    let prices = market.seller_prices();
    let bids = market.buyer_bids();
    let demands = market.buyer_demands();
    let mut scratch = Vec::new();
    let Some(summary) = scan_summary(&prices, offers, &bids, &demands, &mut scratch, true) else {
        return Ok(AuctionOutcome::no_trade(market.n_sellers(), market.n_buyers()));
    };
    let pair = summary.pair;
    let sold: Vec<f64> = offers.iter().enumerate().map(|(i, &a)| summary.sold(i, a)).collect();
    let bought: Vec<f64> = demands.iter().enumerate().map(|(k, &x)| summary.bought(k, x)).collect();
    Ok(AuctionOutcome {
        trading_price: Some(summary.price),
        marginal_seller: Some(pair.seller),
        marginal_buyer: Some(pair.buyer),
        sold,
        bought,
        participated_sellers: (0..pair.seller).filter(|&i| offers[i] > 0.0).collect(),
        participated_buyers: (0..pair.buyer).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{canonicalize_market, BuyerProfile, SellerProfile};

    fn market(sellers: &[(f64, f64)], buyers: &[(f64, f64)]) -> MarketInstance {
        canonicalize_market(
            sellers
                .iter()
                .enumerate()
                .map(|(i, &(s, b))| SellerProfile::new(format!("s{i}").as_str(), s, b, 0.5).unwrap())
                .collect(),
            buyers
                .iter()
                .enumerate()
                .map(|(k, &(b, x))| BuyerProfile::new(format!("b{k}").as_str(), b, x).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn worked_example() -> MarketInstance {
        market(
            &[(10.0, 5.0), (20.0, 5.0), (30.0, 5.0)],
            &[(40.0, 6.0), (25.0, 6.0), (15.0, 6.0)],
        )
    }

    #[test]
    fn marginal_pair_of_worked_example() {
        let m = worked_example();
        let pair = find_intersection(&m, &m.capacity_offers()).unwrap();
        // second seller and second buyer, 0-based
        assert_eq!(pair, MarginalPair { seller: 1, buyer: 1 });
        assert_eq!(trading_price(&m, pair), 22.5);
    }

    #[test]
    fn no_trade_when_best_bid_below_cheapest_price() {
        let m = market(&[(10.0, 5.0)], &[(9.0, 5.0)]);
        assert_eq!(find_intersection(&m, &m.capacity_offers()), None);
        let out = clear_market(&m, &m.capacity_offers()).unwrap();
        assert_eq!(out.trading_price, None);
        assert_eq!(out.sold, vec![0.0]);
        assert_eq!(out.bought, vec![0.0]);
    }

    #[test]
    fn degenerate_price_interval() {
        let m = market(&[(10.0, 5.0), (30.0, 5.0)], &[(40.0, 5.0), (30.0, 5.0)]);
        let pair = find_intersection(&m, &m.capacity_offers()).unwrap();
        assert_eq!(pair, MarginalPair { seller: 1, buyer: 1 });
        assert_eq!(trading_price(&m, pair), 30.0);
        let single = market(&[(30.0, 5.0)], &[(30.0, 5.0)]);
        let p = find_intersection(&single, &single.capacity_offers()).unwrap();
        assert_eq!(trading_price(&single, p), 30.0);
    }

    #[test]
    fn clear_worked_example() {
        let m = worked_example();
        let out = clear_market(&m, &m.capacity_offers()).unwrap();
        assert_eq!(out.trading_price, Some(22.5));
        assert_eq!(out.sold, vec![5.0, 0.0, 0.0]);
        assert_eq!(out.bought, vec![5.0, 0.0, 0.0]);
        assert_eq!(out.participated_sellers, vec![0]);
        assert_eq!(out.participated_buyers, vec![0]);
    }

    #[test]
    fn zero_offers_are_skipped_in_the_scan() {
        let m = worked_example();
        let out = clear_market(&m, &vec![0.0, 5.0, 5.0].into()).unwrap();
        // seller 1 now faces buyer 0 first; seller 2 (30) meets buyer 0 (40)
        assert_eq!(out.marginal_seller, Some(2));
        assert_eq!(out.participated_sellers, vec![1]);
        assert!(out.sold[0] == 0.0);
    }

    #[test]
    fn lone_seller_is_always_marginal() {
        let m = market(&[(10.0, 50.0)], &[(40.0, 6.0), (30.0, 6.0)]);
        let out = clear_market(&m, &m.capacity_offers()).unwrap();
        assert_eq!(out.marginal_seller, Some(0));
        assert_eq!(out.volume(), 0.0);
    }

    #[test]
    fn out_of_bounds_offers_rejected() {
        let m = worked_example();
        assert!(clear_market(&m, &vec![6.0, 0.0, 0.0].into()).is_err());
    }
}
