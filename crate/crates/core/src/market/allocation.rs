//! Equal-burden quantity allocation for the long side of the market.
//!
//! When participating supply exceeds participating demand, every
//! participating seller carries an equal share of the excess. A seller whose
//! offer is smaller than its share sells nothing and the uncovered part of its
//! share is spread equally over the others, repeatedly. The fixpoint of that
//! procedure is a water level `λ` with `sold_i = max(a_i - λ, 0)` and
//! `Σ sold_i = D`. Buyers are handled symmetrically.

/// Water level `λ ≥ 0` such that `Σ max(v_i - λ, 0) = target`.
///
/// Returns 0 when `target ≥ Σ v_i` (short side: nobody is cut). `scratch` is
/// reused to avoid allocating on hot paths; its contents are overwritten.
pub fn equal_burden_level(values: &[f64], target: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend(values.iter().copied().filter(|&v| v > 0.0));
    let total: f64 = scratch.iter().sum();
    if target >= total || scratch.is_empty() {
        return 0.0;
    }
    let target = target.max(0.0);
    // Redistribute until no remaining value is below its share. Shares only
    // grow, so values dropped once stay dropped.
    let mut share = (total - target) / scratch.len() as f64;
    loop {
        let before = scratch.len();
        scratch.retain(|&v| v >= share);
        if scratch.len() == before {
            return share;
        }
        if scratch.is_empty() {
            // only reachable when target is 0: everyone is cut to zero
            return share;
        }
        let kept: f64 = scratch.iter().sum();
        share = (kept - target) / scratch.len() as f64;
    }
}

fn cut_to_level(values: &[f64], target: f64) -> Vec<f64> {
    let mut scratch = Vec::with_capacity(values.len());
    let level = equal_burden_level(values, target, &mut scratch);
    values
        .iter()
        .map(|&v| if v > 0.0 { (v - level).max(0.0) } else { 0.0 })
        .collect()
}

/// Quantities sold by the participating sellers given their offers and the
/// total participating demand.
///
/// Zero offers never count toward the number of sellers sharing the excess.
pub fn allocate_supply(offers: &[f64], total_demand: f64) -> Vec<f64> {
    cut_to_level(offers, total_demand)
}

/// Quantities bought by the participating buyers given their demands and the
/// total participating supply. Mirror image of [`allocate_supply`].
pub fn allocate_demand(demands: &[f64], total_supply: f64) -> Vec<f64> {
    cut_to_level(demands, total_supply)
}
