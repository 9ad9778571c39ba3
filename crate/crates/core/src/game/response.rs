use serde::{Deserialize, Serialize};

use super::regime::regime_argmax;
use super::{GameConfig, GameView};
use crate::market::{MarketError, MarketInstance, StrategyVector};

/// Seller `i`'s payoff `(p̄ - s_i)·Q_i - τ_i·Q_i²`; zero when it does not trade.
pub fn utility(market: &MarketInstance, offers: &StrategyVector, seller: usize) -> Result<f64, MarketError> {
    market.check_offers(offers)?;
    Ok(GameView::new(market).utility(offers, seller))
}

/// Closed-form optima of a participating seller in the current price regime.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClosedForm {
    /// Optimum when participants' supply does not exceed their demand.
    pub under_supply: Option<f64>,
    /// Optimum when the seller shares the oversupply burden; needs at least
    /// two participants.
    pub over_supply: Option<f64>,
}

impl ClosedForm {
    fn candidates(&self) -> impl Iterator<Item = f64> {
        self.under_supply.into_iter().chain(self.over_supply)
    }
}

/// Unclamped closed forms for seller `i`, holding price and participant set
/// at their values under `offers`. Empty when `i` does not participate.
pub(crate) fn closed_forms_view(view: &mut GameView, offers: &[f64], i: usize) -> ClosedForm {
    let Some(c) = view.clear(offers) else {
        return ClosedForm::default();
    };
    if !(i < c.pair.seller && offers[i] > 0.0) {
        return ClosedForm::default();
    }
    let margin = c.price - view.prices[i];
    let tau = view.costs[i];
    let under = margin / (2.0 * tau);
    let participants = c.n_participants as f64;
    let over = if c.n_participants >= 2 {
        let others = c.supply - offers[i];
        Some((margin * participants + 2.0 * tau * (others - c.demand)) / (2.0 * tau * (participants - 1.0)))
    } else {
        None
    };
    ClosedForm {
        under_supply: Some(under),
        over_supply: over,
    }
}

pub fn closed_forms(market: &MarketInstance, offers: &StrategyVector, seller: usize) -> ClosedForm {
    closed_forms_view(&mut GameView::new(market), offers, seller)
}

/// Points per zoom level after the first refinement.
const ZOOM_POINTS: usize = 21;
/// Zooming stops once the half-width falls below this fraction of `B_i`.
const ZOOM_FLOOR: f64 = 1e-13;

/// Samples `points` evenly spaced offers over `[lo, hi]`, keeping the best.
fn scan_interval(
    view: &mut GameView,
    offers: &mut [f64],
    i: usize,
    (lo, hi): (f64, f64),
    points: usize,
    best: &mut (f64, f64),
) {
    let step = (hi - lo) / (points - 1) as f64;
    for j in 0..points {
        let a = if j == points - 1 { hi } else { lo + j as f64 * step };
        let u = view.utility_at(offers, i, a);
        if u > best.1 {
            *best = (a, u);
        }
    }
}

/// Grid argmax of seller `i`'s payoff over `[0, B_i]`, refined once around
/// the best coarse cell. With `zoom`, refinement continues by factors of ten
/// down to float resolution. Ties keep the smallest offer.
pub(crate) fn grid_argmax(view: &mut GameView, offers: &mut [f64], i: usize, points: usize, zoom: bool) -> (f64, f64) {
    let bound = view.bounds[i];
    let mut best = (0.0, f64::NEG_INFINITY);
    scan_interval(view, offers, i, (0.0, bound), points, &mut best);
    let mut half = bound / (points - 1) as f64;
    let mut n = points;
    loop {
        let window = ((best.0 - half).max(0.0), (best.0 + half).min(bound));
        scan_interval(view, offers, i, window, n, &mut best);
        half = 2.0 * half / (n - 1) as f64;
        n = ZOOM_POINTS;
        if !zoom || half <= ZOOM_FLOOR * bound.max(1.0) {
            break;
        }
    }
    best
}

/// Regime optimum of seller `i`, improved by the closed forms when they do
/// better. No grid check.
pub(crate) fn regime_reply(view: &mut GameView, offers: &mut [f64], i: usize) -> (f64, f64) {
    let bound = view.bounds[i];
    let (mut best_a, mut best_u) = regime_argmax(view, offers, i);
    for cand in closed_forms_view(view, offers, i).candidates() {
        let a = cand.clamp(0.0, bound);
        let u = view.utility_at(offers, i, a);
        if u > best_u {
            (best_a, best_u) = (a, u);
        }
    }
    if best_u <= 0.0 {
        (0.0, 0.0)
    } else {
        (best_a, best_u)
    }
}

/// Best offer of seller `i` and the payoff it earns, checked against the grid.
pub(crate) fn best_reply(view: &mut GameView, offers: &mut [f64], i: usize, points: usize) -> (f64, f64) {
    let bound = view.bounds[i];
    let (mut best_a, mut best_u) = regime_reply(view, offers, i);
    // Cross-check on the coarse grid; refine only where it beats the regime
    // optimum, and let it override only when clearly better.
    let mut coarse = (0.0, f64::NEG_INFINITY);
    scan_interval(view, offers, i, (0.0, bound), points, &mut coarse);
    if coarse.1 > best_u {
        let (grid_a, grid_u) = grid_argmax(view, offers, i, points, false);
        if grid_u > best_u + 1e-12 * best_u.abs().max(1.0) {
            (best_a, best_u) = (grid_a, grid_u);
        }
    }
    if best_u <= 0.0 {
        (0.0, 0.0)
    } else {
        (best_a, best_u)
    }
}

/// Largest relative payoff gain any seller gets from switching to its best
/// reply, `gain / max(1, |U_i|)`.
pub(crate) fn equilibrium_gap(view: &mut GameView, offers: &mut [f64], points: usize) -> f64 {
    (0..view.n())
        .map(|i| {
            let current = view.utility(offers, i);
            let (_, best) = best_reply(view, offers, i, points);
            (best - current).max(0.0) / current.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// Best offer of seller `i` against the other sellers' current offers.
///
/// Walks the price regimes seller `i` can reach, takes the closed-form
/// optimum inside each, and checks the winner against a refined grid search
/// of the true payoff. Sellers that cannot earn a positive payoff get 0.
pub fn best_response(
    market: &MarketInstance,
    offers: &StrategyVector,
    seller: usize,
    config: &GameConfig,
) -> Result<f64, MarketError> {
    market.check_offers(offers)?;
    let mut view = GameView::new(market);
    let mut work = offers.0.clone();
    Ok(best_reply(&mut view, &mut work, seller, config.best_response_grid).0)
}

/// Outcome of an equilibrium check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub is_nash: bool,
    /// Largest unilateral payoff gain found, per seller.
    pub gains: Vec<f64>,
    pub worst_seller: Option<usize>,
    pub max_gain: f64,
    /// `gain / max(1, |U_i|)` of the worst seller.
    pub max_relative_gain: f64,
}

/// Searches every seller's unilateral deviations and reports the largest gain.
///
/// Candidates are a zoomed grid of `grid_points` (at least 201) over
/// `[0, B_i]`, the current offer, both closed forms and the per-regime
/// optima.
pub fn verify_nash(
    market: &MarketInstance,
    offers: &StrategyVector,
    grid_points: usize,
    tolerance: f64,
) -> Result<NashReport, MarketError> {
    market.check_offers(offers)?;
    let points = grid_points.max(201);
    let mut view = GameView::new(market);
    let mut work = offers.0.clone();
    let mut gains = Vec::with_capacity(view.n());
    let mut worst: Option<(usize, f64, f64)> = None;
    let mut is_nash = true;
    for i in 0..view.n() {
        let current = view.utility(&work, i);
        let (_, mut best) = grid_argmax(&mut view, &mut work, i, points, true);
        best = best.max(regime_argmax(&mut view, &mut work, i).1);
        for cand in closed_forms_view(&mut view, &work, i).candidates() {
            best = best.max(view.utility_at(&mut work, i, cand.clamp(0.0, view.bounds[i])));
        }
        let gain = (best - current).max(0.0);
        let rel = gain / current.abs().max(1.0);
        if rel > tolerance {
            is_nash = false;
        }
        if worst.map_or(true, |(_, _, r)| rel > r) {
            worst = Some((i, gain, rel));
        }
        gains.push(gain);
    }
    let (worst_seller, max_gain, max_relative_gain) = match worst {
        Some((i, g, r)) => (Some(i), g, r),
        None => (None, 0.0, 0.0),
    };
    Ok(NashReport {
        is_nash,
        gains,
        worst_seller,
        max_gain,
        max_relative_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{canonicalize_market, BuyerProfile, SellerProfile};

    fn market(sellers: &[(f64, f64, f64)], buyers: &[(f64, f64)]) -> MarketInstance {
        canonicalize_market(
            sellers
                .iter()
                .enumerate()
                .map(|(i, &(s, b, t))| SellerProfile::new(format!("s{i}").as_str(), s, b, t).unwrap())
                .collect(),
            buyers
                .iter()
                .enumerate()
                .map(|(k, &(b, x))| BuyerProfile::new(format!("b{k}").as_str(), b, x).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn non_trading_seller_has_zero_utility() {
        let m = market(&[(10.0, 5.0, 0.5), (20.0, 5.0, 0.5)], &[(40.0, 100.0)]);
        // seller 1 is marginal
        assert_eq!(utility(&m, &m.capacity_offers(), 1).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_cost_utility() {
        // marginal pair (seller 1 at 20, buyer 1 at 40) sets the price to 30
        let m = market(&[(10.0, 5.0, 0.5), (20.0, 100.0, 0.5)], &[(60.0, 10.0), (40.0, 100.0)]);
        let u = utility(&m, &vec![5.0, 100.0].into(), 0).unwrap();
        assert!((u - 87.5).abs() < 1e-12, "{u}");
    }

    fn under_supply_market(bound: f64) -> MarketInstance {
        market(
            &[(10.0, bound, 0.5), (20.0, 2000.0, 0.5)],
            &[(60.0, 1000.0), (40.0, 1000.0)],
        )
    }

    #[test]
    fn under_supply_best_response_is_margin_over_twice_tau() {
        let m = under_supply_market(100.0);
        let offers: StrategyVector = vec![50.0, 2000.0].into();
        let forms = closed_forms(&m, &offers, 0);
        assert_eq!(forms.under_supply, Some(20.0));
        let r = best_response(&m, &offers, 0, &GameConfig::default()).unwrap();
        assert!((r - 20.0).abs() < 1e-12, "{r}");
    }

    #[test]
    fn best_response_clamped_to_capacity() {
        let m = under_supply_market(8.0);
        let r = best_response(&m, &vec![4.0, 2000.0].into(), 0, &GameConfig::default()).unwrap();
        assert!((r - 8.0).abs() < 1e-12);
    }

    #[test]
    fn lone_seller_best_response_is_zero() {
        let m = market(&[(10.0, 50.0, 0.5)], &[(40.0, 100.0)]);
        let r = best_response(&m, &m.capacity_offers(), 0, &GameConfig::default()).unwrap();
        assert_eq!(r, 0.0);
        let report = verify_nash(&m, &m.capacity_offers(), 201, 1e-6).unwrap();
        assert!(report.is_nash);
    }
}
