use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::market::{canonicalize_market, BuyerProfile, MarketInstance, SellerProfile};

/// Closed interval `[lo, hi]` drawn from uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }
}

/// Recipe for one random market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n_sellers: usize,
    pub n_buyers: usize,
    /// Sellable surplus per storage unit, MWh.
    pub surplus_range: Range,
    pub seller_price_range: Range,
    pub buyer_bid_range: Range,
    pub demand_range: Range,
    pub cost_weight: f64,
    pub seed: u64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            n_sellers: 6,
            n_buyers: 5,
            surplus_range: Range::new(75.0, 220.0),
            seller_price_range: Range::new(10.0, 50.0),
            buyer_bid_range: Range::new(15.0, 60.0),
            demand_range: Range::new(20.0, 60.0),
            cost_weight: 0.5,
            seed: 0,
        }
    }
}

impl InstanceSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_sellers == 0 || self.n_buyers == 0 {
            return Err(HarnessError::InvalidSpec("need at least one seller and one buyer"));
        }
        for (r, what) in [
            (self.surplus_range, "surplus range"),
            (self.seller_price_range, "seller price range"),
            (self.buyer_bid_range, "buyer bid range"),
            (self.demand_range, "demand range"),
        ] {
            if !r.is_valid() {
                return Err(HarnessError::InvalidRange(what));
            }
        }
        if !(self.surplus_range.lo > 0.0 && self.demand_range.lo > 0.0) {
            return Err(HarnessError::InvalidSpec("quantities must be positive"));
        }
        if !(self.seller_price_range.lo >= 0.0 && self.buyer_bid_range.lo >= 0.0) {
            return Err(HarnessError::InvalidSpec("prices must be non-negative"));
        }
        if !(self.cost_weight > 0.0) {
            return Err(HarnessError::InvalidSpec("cost weight must be positive"));
        }
        Ok(())
    }
}

/// Draws `n` distinct values; a repeated value is re-drawn.
fn distinct(range: Range, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, HarnessError> {
    let mut out: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tries = 0;
        loop {
            let v = range.sample(rng);
            if !out.contains(&v) {
                out.push(v);
                break;
            }
            tries += 1;
            if tries > 1000 {
                return Err(HarnessError::InvalidSpec("price range too narrow for distinct draws"));
            }
        }
    }
    Ok(out)
}

/// Builds the market described by `spec`. Identical specs give identical
/// markets; draws come from a ChaCha stream keyed by the seed.
pub fn generate_instance(spec: &InstanceSpec) -> Result<MarketInstance, HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prices = distinct(spec.seller_price_range, spec.n_sellers, &mut rng)?;
    let surpluses: Vec<f64> = (0..spec.n_sellers)
        .map(|_| spec.surplus_range.sample(&mut rng))
        .collect();
    let bids = distinct(spec.buyer_bid_range, spec.n_buyers, &mut rng)?;
    let demands: Vec<f64> = (0..spec.n_buyers).map(|_| spec.demand_range.sample(&mut rng)).collect();

    let sellers = prices
        .iter()
        .zip(&surpluses)
        .enumerate()
        .map(|(i, (&p, &b))| SellerProfile::new(format!("s{}", i + 1).as_str(), p, b, spec.cost_weight))
        .collect::<Result<Vec<_>, _>>()?;
    let buyers = bids
        .iter()
        .zip(&demands)
        .enumerate()
        .map(|(k, (&b, &x))| BuyerProfile::new(format!("b{}", k + 1).as_str(), b, x))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(canonicalize_market(sellers, buyers)?)
}
