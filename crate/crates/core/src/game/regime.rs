//! Exact best response by enumerating price regimes.
//!
//! With the other offers fixed, seller `i`'s payoff is piecewise in its own
//! offer `a`. The marginal pair, and with it the price and the participant
//! set, can only change where some cumulative seller step ends exactly where
//! a cumulative buyer step ends. Between two such breakpoints the payoff is
//! `m·Q(a) - τ·Q(a)²` with `Q` non-decreasing, so the per-interval optimum is
//! the offer whose sale hits `m / 2τ`, clamped to the interval.

use super::GameView;

/// Distance kept from each breakpoint, MWh. Scan tolerances blur breakpoints
/// by about `QUANTITY_TOLERANCE`; this stays well clear of that.
pub(crate) const BREAK_MARGIN: f64 = 1e-8;

/// Water level `λ ≥ 0` with `Σ max(v - λ, 0) = residual`, for
/// `0 < residual < Σ v`. Sorts `values` in place.
pub(crate) fn level_for_residual(values: &mut [f64], residual: f64) -> f64 {
    values.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut top = 0.0;
    for n in 0..values.len() {
        top += values[n];
        let level = (top - residual) / (n + 1) as f64;
        let next = values.get(n + 1).copied().unwrap_or(0.0);
        if level >= next {
            return level.max(0.0);
        }
    }
    0.0
}

/// Sorted, deduplicated offers of seller `i` at which the clearing regime can
/// change, bracketed by 0 and `B_i`.
fn breakpoints(view: &mut GameView, offers: &[f64], i: usize) -> Vec<f64> {
    let bound = view.bounds[i];
    let mut breaks = std::mem::take(&mut view.breaks);
    breaks.clear();
    breaks.push(0.0);
    breaks.push(bound);
    let mut base: f64 = offers[..i].iter().filter(|&&a| a > 0.0).sum();
    for j in i..offers.len() {
        if j != i && offers[j] > 0.0 {
            base += offers[j];
        }
        for &d in &view.cum_demand {
            let a = d - base;
            if a > 0.0 && a < bound {
                breaks.push(a);
            }
        }
    }
    breaks.sort_unstable_by(f64::total_cmp);
    breaks.dedup();
    breaks
}

/// Payoff-maximizing offer inside `[lo, hi]`, assuming the regime seen at
/// the interval midpoint holds throughout.
fn interval_candidate(view: &mut GameView, offers: &mut [f64], i: usize, lo: f64, hi: f64) -> Option<f64> {
    let saved = offers[i];
    offers[i] = 0.5 * (lo + hi);
    let clearing = view.clear(offers);
    offers[i] = saved;
    let c = clearing?;
    if i >= c.pair.seller {
        return None;
    }
    let margin = c.price - view.prices[i];
    if margin <= 0.0 {
        return Some(lo);
    }
    let target = margin / (2.0 * view.costs[i]);
    if !c.is_oversupplied() {
        return Some(target.clamp(lo, hi));
    }
    if target >= c.demand {
        return Some(hi);
    }
    let mut others = std::mem::take(&mut view.others);
    others.clear();
    others.extend(
        (0..c.pair.seller)
            .filter(|&j| j != i && offers[j] > 0.0)
            .map(|j| offers[j]),
    );
    let residual = c.demand - target;
    let supply_others: f64 = others.iter().sum();
    let a = if supply_others <= residual {
        // the others alone cannot leave a sale as small as `target`
        lo
    } else {
        level_for_residual(&mut others, residual) + target
    };
    view.others = others;
    Some(a.clamp(lo, hi))
}

/// Best offer and payoff of seller `i` over the regime intervals. Returns
/// `(0, 0)` when no positive offer earns a positive payoff.
pub(crate) fn regime_argmax(view: &mut GameView, offers: &mut [f64], i: usize) -> (f64, f64) {
    let breaks = breakpoints(view, offers, i);
    let mut best = (0.0, 0.0);
    for w in breaks.windows(2) {
        let (mut lo, mut hi) = (w[0] + BREAK_MARGIN, w[1] - BREAK_MARGIN);
        if lo > hi {
            lo = 0.5 * (w[0] + w[1]);
            hi = lo;
        }
        let Some(cand) = interval_candidate(view, offers, i, lo, hi) else {
            continue;
        };
        for a in [lo, cand, hi] {
            let u = view.utility_at(offers, i, a);
            if u > best.1 {
                best = (a, u);
            }
        }
    }
    // the last interval ends at B_i, which is a feasible offer itself
    let bound = view.bounds[i];
    let u = view.utility_at(offers, i, bound);
    if u > best.1 {
        best = (bound, u);
    }
    view.breaks = breaks;
    best
}
