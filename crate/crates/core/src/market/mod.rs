//! Market model and truthful double-auction clearing.
//!
//! Sellers are storage units offering a quantity of energy at or above a
//! reservation price; buyers are grid elements with a fixed demand and a
//! reservation bid. A [`MarketInstance`] holds both sides in canonical order
//! (sellers ascending by price, buyers descending by bid) with exact ties
//! merged into virtual agents.

mod allocation;
mod clearing;

pub use allocation::{allocate_demand, allocate_supply, equal_burden_level};
pub use clearing::{clear_market, find_intersection, scan_volume, trading_price, AuctionOutcome, MarginalPair};
pub(crate) use clearing::{scan_summary, ClearingSummary};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Absolute tolerance for every quantity comparison, in MWh.
pub const QUANTITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("market has no sellers or no buyers")]
    EmptyMarket,
    #[error("invalid seller {id}: {reason}")]
    InvalidSeller { id: AgentId, reason: &'static str },
    #[error("invalid buyer {id}: {reason}")]
    InvalidBuyer { id: AgentId, reason: &'static str },
    #[error("expected {expected} offers, got {got}")]
    OfferCount { expected: usize, got: usize },
    #[error("offer {offer} of seller {index} outside [0, {bound}]")]
    OfferOutOfBounds { index: usize, offer: f64, bound: f64 },
}

/// Opaque, stable identifier of a market participant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_string())
    }
}

impl From<String> for AgentId {
    fn from(s: String) -> Self {
        AgentId(s)
    }
}

/// A storage unit's market identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerProfile {
    pub id: AgentId,
    /// $/MWh below which the unit refuses to sell.
    pub reservation_price: f64,
    /// Maximum sellable energy in MWh (usable capacity minus retained reserve).
    pub capacity_bound: f64,
    /// Quadratic cost weight in $/MWh².
    pub cost_weight: f64,
}

impl SellerProfile {
    pub fn new(
        id: impl Into<AgentId>,
        reservation_price: f64,
        capacity_bound: f64,
        cost_weight: f64,
    ) -> Result<Self, MarketError> {
        let seller = SellerProfile {
            id: id.into(),
            reservation_price,
            capacity_bound,
            cost_weight,
        };
        seller.validate()?;
        Ok(seller)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let fail = |reason| {
            Err(MarketError::InvalidSeller {
                id: self.id.clone(),
                reason,
            })
        };
        if !(self.reservation_price.is_finite() && self.reservation_price >= 0.0) {
            return fail("reservation price must be finite and non-negative");
        }
        if !(self.capacity_bound.is_finite() && self.capacity_bound > 0.0) {
            return fail("capacity bound must be finite and positive");
        }
        if !(self.cost_weight.is_finite() && self.cost_weight > 0.0) {
            return fail("cost weight must be finite and positive");
        }
        Ok(())
    }
}

/// A grid element's fixed demand and reservation bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerProfile {
    pub id: AgentId,
    /// $/MWh above which the element refuses to buy.
    pub reservation_bid: f64,
    /// Energy required, in MWh.
    pub demand: f64,
}

impl BuyerProfile {
    pub fn new(id: impl Into<AgentId>, reservation_bid: f64, demand: f64) -> Result<Self, MarketError> {
        let buyer = BuyerProfile {
            id: id.into(),
            reservation_bid,
            demand,
        };
        buyer.validate()?;
        Ok(buyer)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let fail = |reason| {
            Err(MarketError::InvalidBuyer {
                id: self.id.clone(),
                reason,
            })
        };
        if !(self.reservation_bid.is_finite() && self.reservation_bid >= 0.0) {
            return fail("reservation bid must be finite and non-negative");
        }
        if !(self.demand.is_finite() && self.demand > 0.0) {
            return fail("demand must be finite and positive");
        }
        Ok(())
    }
}

/// One original agent folded into a canonical (possibly virtual) agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: AgentId,
    /// Fraction of the virtual agent's quantity owned by this member.
    pub share: f64,
}

/// Canonical two-sided market.
///
/// Sellers are strictly ascending by reservation price and buyers strictly
/// descending by reservation bid. Each canonical agent remembers the original
/// agents it was merged from so allocations can be split back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    sellers: Vec<SellerProfile>,
    buyers: Vec<BuyerProfile>,
    seller_members: Vec<Vec<Member>>,
    buyer_members: Vec<Vec<Member>>,
}

impl MarketInstance {
    pub fn sellers(&self) -> &[SellerProfile] {
        &self.sellers
    }

    pub fn buyers(&self) -> &[BuyerProfile] {
        &self.buyers
    }

    pub fn n_sellers(&self) -> usize {
        self.sellers.len()
    }

    pub fn n_buyers(&self) -> usize {
        self.buyers.len()
    }

    pub fn seller_members(&self, index: usize) -> &[Member] {
        &self.seller_members[index]
    }

    pub fn buyer_members(&self, index: usize) -> &[Member] {
        &self.buyer_members[index]
    }

    pub fn seller_prices(&self) -> Vec<f64> {
        self.sellers.iter().map(|s| s.reservation_price).collect()
    }

    pub fn buyer_bids(&self) -> Vec<f64> {
        self.buyers.iter().map(|b| b.reservation_bid).collect()
    }

    pub fn buyer_demands(&self) -> Vec<f64> {
        self.buyers.iter().map(|b| b.demand).collect()
    }

    /// The strategy in which every seller offers its full capacity bound.
    pub fn capacity_offers(&self) -> StrategyVector {
        StrategyVector(self.sellers.iter().map(|s| s.capacity_bound).collect())
    }

    /// Checks that `offers` has one entry per seller, each within `[0, B_i]`.
    pub fn check_offers(&self, offers: &StrategyVector) -> Result<(), MarketError> {
        if offers.len() != self.sellers.len() {
            return Err(MarketError::OfferCount {
                expected: self.sellers.len(),
                got: offers.len(),
            });
        }
        for (index, (&offer, seller)) in offers.iter().zip(&self.sellers).enumerate() {
            let bound = seller.capacity_bound;
            if !offer.is_finite() || offer < -QUANTITY_TOLERANCE || offer > bound + QUANTITY_TOLERANCE {
                return Err(MarketError::OfferOutOfBounds { index, offer, bound });
            }
        }
        Ok(())
    }

    /// Splits per-canonical-seller quantities back onto the original sellers.
    pub fn split_seller_quantities(&self, quantities: &[f64]) -> Vec<(AgentId, f64)> {
        split(&self.seller_members, quantities)
    }

    /// Splits per-canonical-buyer quantities back onto the original buyers.
    pub fn split_buyer_quantities(&self, quantities: &[f64]) -> Vec<(AgentId, f64)> {
        split(&self.buyer_members, quantities)
    }
}

fn split(members: &[Vec<Member>], quantities: &[f64]) -> Vec<(AgentId, f64)> {
    members
        .iter()
        .zip(quantities)
        .flat_map(|(group, &q)| group.iter().map(move |m| (m.id.clone(), q * m.share)))
        .collect()
}

/// Per-seller offered quantities, indexed like [`MarketInstance::sellers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyVector(pub Vec<f64>);

impl StrategyVector {
    pub fn zeros(n: usize) -> Self {
        StrategyVector(vec![0.0; n])
    }

    /// Largest absolute coordinate change between two strategies.
    pub fn max_change(&self, other: &StrategyVector) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Deref for StrategyVector {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl std::ops::DerefMut for StrategyVector {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl From<Vec<f64>> for StrategyVector {
    fn from(v: Vec<f64>) -> Self {
        StrategyVector(v)
    }
}

/// Sorts both sides into canonical order and merges exact price (bid) ties.
///
/// A merged seller's capacity bound is the sum of its members' bounds and its
/// cost weight is the capacity-weighted mean; member shares are proportional
/// to capacity (demand for buyers).
pub fn canonicalize_market(
    raw_sellers: Vec<SellerProfile>,
    raw_buyers: Vec<BuyerProfile>,
) -> Result<MarketInstance, MarketError> {
    if raw_sellers.is_empty() || raw_buyers.is_empty() {
        return Err(MarketError::EmptyMarket);
    }
    for s in &raw_sellers {
        s.validate()?;
    }
    for b in &raw_buyers {
        b.validate()?;
    }

    let mut sellers_sorted = raw_sellers;
    sellers_sorted.sort_by(|a, b| a.reservation_price.total_cmp(&b.reservation_price));
    let mut buyers_sorted = raw_buyers;
    buyers_sorted.sort_by(|a, b| b.reservation_bid.total_cmp(&a.reservation_bid));

    let mut sellers = Vec::new();
    let mut seller_members = Vec::new();
    for group in sellers_sorted.chunk_by(|a, b| a.reservation_price == b.reservation_price) {
        let total: f64 = group.iter().map(|s| s.capacity_bound).sum();
        let cost_weight = group.iter().map(|s| s.cost_weight * s.capacity_bound).sum::<f64>() / total;
        seller_members.push(
            group
                .iter()
                .map(|s| Member {
                    id: s.id.clone(),
                    share: s.capacity_bound / total,
                })
                .collect(),
        );
        sellers.push(SellerProfile {
            id: merged_id(group.iter().map(|s| &s.id)),
            reservation_price: group[0].reservation_price,
            capacity_bound: total,
            cost_weight,
        });
    }

    let mut buyers = Vec::new();
    let mut buyer_members = Vec::new();
    for group in buyers_sorted.chunk_by(|a, b| a.reservation_bid == b.reservation_bid) {
        let total: f64 = group.iter().map(|b| b.demand).sum();
        buyer_members.push(
            group
                .iter()
                .map(|b| Member {
                    id: b.id.clone(),
                    share: b.demand / total,
                })
                .collect(),
        );
        buyers.push(BuyerProfile {
            id: merged_id(group.iter().map(|b| &b.id)),
            reservation_bid: group[0].reservation_bid,
            demand: total,
        });
    }

    Ok(MarketInstance {
        sellers,
        buyers,
        seller_members,
        buyer_members,
    })
}

fn merged_id<'a>(ids: impl Iterator<Item = &'a AgentId>) -> AgentId {
    let parts: Vec<&str> = ids.map(AgentId::as_str).collect();
    AgentId(parts.join("+"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seller(id: &str, price: f64, bound: f64) -> SellerProfile {
        SellerProfile::new(id, price, bound, 0.5).unwrap()
    }

    fn buyer(id: &str, bid: f64, demand: f64) -> BuyerProfile {
        BuyerProfile::new(id, bid, demand).unwrap()
    }

    #[test]
    fn sellers_sorted_ascending() {
        let m = canonicalize_market(
            vec![seller("a", 30.0, 1.0), seller("b", 10.0, 1.0), seller("c", 20.0, 1.0)],
            vec![buyer("x", 40.0, 1.0)],
        )
        .unwrap();
        assert_eq!(m.seller_prices(), vec![10.0, 20.0, 30.0]);
        assert_eq!(m.sellers()[0].id.as_str(), "b");
    }

    #[test]
    fn buyers_sorted_descending() {
        let m = canonicalize_market(
            vec![seller("a", 10.0, 1.0)],
            vec![buyer("x", 15.0, 1.0), buyer("y", 60.0, 1.0), buyer("z", 25.0, 1.0)],
        )
        .unwrap();
        assert_eq!(m.buyer_bids(), vec![60.0, 25.0, 15.0]);
    }

    #[test]
    fn equal_prices_merge_into_virtual_seller() {
        let m = canonicalize_market(
            vec![seller("a", 20.0, 5.0), seller("b", 20.0, 7.0), seller("c", 30.0, 1.0)],
            vec![buyer("x", 40.0, 1.0)],
        )
        .unwrap();
        assert_eq!(m.n_sellers(), 2);
        assert_eq!(m.sellers()[0].capacity_bound, 12.0);
        let shares: Vec<f64> = m.seller_members(0).iter().map(|mem| mem.share).collect();
        assert!((shares[0] - 5.0 / 12.0).abs() < 1e-15);
        assert!((shares[1] - 7.0 / 12.0).abs() < 1e-15);

        // any allocation to the virtual seller re-splits to the same total
        for alloc in [0.0, 1.0, 6.5, 12.0] {
            let mut q = vec![0.0; 2];
            q[0] = alloc;
            let parts = m.split_seller_quantities(&q);
            let merged: f64 = parts
                .iter()
                .filter(|(id, _)| id.as_str() == "a" || id.as_str() == "b")
                .map(|(_, q)| q)
                .sum();
            assert!((merged - alloc).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_bids_merge_into_virtual_buyer() {
        let m = canonicalize_market(
            vec![seller("a", 10.0, 1.0)],
            vec![buyer("x", 30.0, 4.0), buyer("y", 30.0, 6.0)],
        )
        .unwrap();
        assert_eq!(m.n_buyers(), 1);
        assert_eq!(m.buyers()[0].demand, 10.0);
        assert_eq!(m.buyers()[0].id.as_str(), "x+y");
    }

    #[test]
    fn empty_side_is_rejected() {
        assert_eq!(
            canonicalize_market(vec![], vec![buyer("x", 1.0, 1.0)]),
            Err(MarketError::EmptyMarket)
        );
        assert_eq!(
            canonicalize_market(vec![seller("a", 1.0, 1.0)], vec![]),
            Err(MarketError::EmptyMarket)
        );
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        assert!(SellerProfile::new("a", -1.0, 1.0, 0.5).is_err());
        assert!(SellerProfile::new("a", 1.0, 0.0, 0.5).is_err());
        assert!(SellerProfile::new("a", 1.0, 1.0, 0.0).is_err());
        assert!(BuyerProfile::new("x", 1.0, 0.0).is_err());
        assert!(BuyerProfile::new("x", f64::NAN, 1.0).is_err());
    }

    #[test]
    fn offers_checked_against_bounds() {
        let m = canonicalize_market(
            vec![seller("a", 10.0, 5.0), seller("b", 20.0, 5.0)],
            vec![buyer("x", 40.0, 1.0)],
        )
        .unwrap();
        assert!(m.check_offers(&vec![5.0, 0.0].into()).is_ok());
        assert!(matches!(
            m.check_offers(&vec![5.0].into()),
            Err(MarketError::OfferCount { .. })
        ));
        assert!(matches!(
            m.check_offers(&vec![5.5, 0.0].into()),
            Err(MarketError::OfferOutOfBounds { index: 0, .. })
        ));
    }
}
