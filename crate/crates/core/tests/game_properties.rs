use proptest::prelude::*;
use storage_market::game::*;
use storage_market::harness::{generate_instance, InstanceSpec};
use storage_market::market::*;

fn seller(id: &str, price: f64, bound: f64) -> SellerProfile {
    SellerProfile::new(id, price, bound, 0.5).unwrap()
}

fn buyer(id: &str, bid: f64, demand: f64) -> BuyerProfile {
    BuyerProfile::new(id, bid, demand).unwrap()
}

fn seeded(n: usize, seed: u64) -> MarketInstance {
    generate_instance(&InstanceSpec {
        n_sellers: n,
        n_buyers: 5,
        seed,
        ..InstanceSpec::default()
    })
    .unwrap()
}

/// Price 30 from the marginal pair (25, 35); seller `a` trades alone with
/// buyer `x`.
fn price_thirty(bound: f64, demand: f64) -> MarketInstance {
    canonicalize_market(
        vec![seller("a", 10.0, bound), seller("l", 25.0, 200.0)],
        vec![buyer("x", 50.0, demand), buyer("y", 35.0, 10.0)],
    )
    .unwrap()
}

#[test]
fn utility_at_price_thirty() {
    let m = price_thirty(5.0, 5.0);
    let offers = StrategyVector(vec![5.0, 10.0]);
    assert_eq!(clear_market(&m, &offers).unwrap().trading_price, Some(30.0));
    assert_eq!(utility(&m, &offers, 0).unwrap(), 87.5);
}

#[test]
fn under_supply_best_response() {
    let m = price_thirty(100.0, 100.0);
    let offers = StrategyVector(vec![50.0, 200.0]);
    let cfg = GameConfig::default();
    let br = best_response(&m, &offers, 0, &cfg).unwrap();
    assert!((br - 20.0).abs() < 1e-6, "{br}");
    let cf = closed_forms(&m, &offers, 0);
    assert_eq!(cf.under_supply, Some(20.0));
}

#[test]
fn full_inertia_keeps_offers() {
    let m = seeded(6, 3);
    let offers = m.capacity_offers();
    let cfg = GameConfig::default().with_weight(1.0);
    assert_eq!(step_sequential(&m, &offers, &cfg).unwrap(), offers);
    assert_eq!(step_parallel(&m, &offers, &cfg).unwrap(), offers);
}

#[test]
fn parallel_step_answers_the_snapshot() {
    // seller i's parallel update equals its update when it moves first
    for seed in 0..10 {
        let m = seeded(6, seed);
        let offers = m.capacity_offers();
        let cfg = GameConfig::default();
        let par = step_parallel(&m, &offers, &cfg).unwrap();
        for i in 0..m.n_sellers() {
            let mut order = vec![i];
            order.extend((0..m.n_sellers()).filter(|&j| j != i));
            let first = GameConfig {
                order: Some(order),
                ..cfg.clone()
            };
            let seq = step_sequential(&m, &offers, &first).unwrap();
            assert_eq!(par.0[i], seq.0[i], "seed {seed} seller {i}");
        }
    }
}

#[test]
fn sequential_and_parallel_steps_can_differ() {
    let cfg = GameConfig::default();
    let differs = (0..20).any(|seed| {
        let m = seeded(6, seed);
        let offers = m.capacity_offers();
        step_sequential(&m, &offers, &cfg).unwrap() != step_parallel(&m, &offers, &cfg).unwrap()
    });
    assert!(differs);
}

#[test]
fn converged_dynamics_are_nash() {
    let cfg = GameConfig::default();
    let mut checked = 0;
    for seed in 0..30 {
        let m = seeded(4 + (seed as usize % 7), seed);
        let trace = run_dynamics(&m, &cfg, None).unwrap();
        if !trace.converged {
            continue;
        }
        checked += 1;
        let offers = trace.final_offers().unwrap();
        let report = verify_nash(&m, offers, 201, cfg.nash_tolerance).unwrap();
        assert!(report.is_nash, "seed {seed}: {report:?}");
        for i in 0..m.n_sellers() {
            let gain = report.gains[i];
            assert!(gain <= cfg.nash_tolerance * trace.final_utilities().unwrap()[i].abs().max(1.0));
        }
    }
    assert!(checked >= 20, "only {checked} runs converged");
}

#[test]
fn capacity_offers_are_usually_not_nash() {
    let found = (0..10).any(|seed| {
        let m = seeded(6, seed);
        !verify_nash(&m, &m.capacity_offers(), 201, 1e-6).unwrap().is_nash
    });
    assert!(found);
}

#[test]
fn all_zero_offers_leave_a_lone_entrant_marginal() {
    // a single positive offer makes its seller the marginal one, so nobody
    // can gain by entering alone
    for seed in 0..10 {
        let m = seeded(5, seed);
        let zeros = StrategyVector::zeros(m.n_sellers());
        let report = verify_nash(&m, &zeros, 201, 1e-6).unwrap();
        assert!(report.is_nash);
        assert_eq!(report.max_gain, 0.0);
    }
}

#[test]
fn lone_seller_game_is_trivially_nash() {
    let m = canonicalize_market(vec![seller("a", 10.0, 50.0)], vec![buyer("x", 40.0, 30.0)]).unwrap();
    for a in [0.0, 12.5, 50.0] {
        let offers = StrategyVector(vec![a]);
        assert!(verify_nash(&m, &offers, 201, 1e-6).unwrap().is_nash);
        assert_eq!(best_response(&m, &offers, 0, &GameConfig::default()).unwrap(), 0.0);
    }
}

#[test]
fn dynamics_are_bit_identical_across_runs() {
    let m = seeded(7, 11);
    for mode in [UpdateMode::Sequential, UpdateMode::Parallel] {
        let cfg = GameConfig {
            mode,
            ..GameConfig::default()
        };
        assert_eq!(
            run_dynamics(&m, &cfg, None).unwrap(),
            run_dynamics(&m, &cfg, None).unwrap()
        );
    }
}

#[test]
fn six_sellers_at_low_inertia_leave_some_out() {
    let cfg = GameConfig::default().with_weight(0.3);
    let mut with_two_out = 0;
    let mut converged = 0;
    for seed in 0..20 {
        let trace = run_dynamics(&seeded(6, seed), &cfg, None).unwrap();
        if trace.converged {
            converged += 1;
            if trace.nonparticipants.len() == 2 {
                with_two_out += 1;
            }
        }
    }
    assert!(
        converged > 0 && with_two_out > 0,
        "{converged} converged, {with_two_out} with two out"
    );
}

#[test]
fn select_weight_probes_inside_the_unit_interval() {
    let cfg = GameConfig::default();
    for seed in 0..8 {
        let m = seeded(5, seed);
        let Ok((w, trace)) = select_weight(&m, &cfg, 8) else {
            continue;
        };
        assert!(w > 0.0 && w < 1.0);
        assert!(trace.converged);
        assert_eq!(trace.inertia_weight, w);
        if run_dynamics(&m, &cfg.with_weight(0.5), None).unwrap().converged {
            assert!(w <= 0.5);
        }
    }
}

#[test]
fn raw_best_response_runs_without_inertia() {
    let m = seeded(5, 2);
    let trace = run_best_response_raw(&m, &GameConfig::default(), None).unwrap();
    assert_eq!(trace.inertia_weight, 0.0);
    let first = &trace.iterations[0].offers;
    let stepped = step_sequential(&m, &m.capacity_offers(), &GameConfig::default().with_weight(0.0)).unwrap();
    assert_eq!(first, &stepped);
}

/// Everything that fixes the payoff formula of a seller: marginal pair,
/// whether participants oversupply, and who participates.
fn regime(m: &MarketInstance, offers: &StrategyVector) -> Option<(usize, usize, bool, Vec<usize>)> {
    let out = clear_market(m, offers).unwrap();
    let l = out.marginal_seller?;
    let supply: f64 = out.participated_sellers.iter().map(|&i| offers.0[i]).sum();
    let demand: f64 = out.participated_buyers.iter().map(|&k| m.buyers()[k].demand).sum();
    let active = out
        .participated_sellers
        .iter()
        .copied()
        .filter(|&i| out.sold[i] > 0.0)
        .collect();
    Some((l, out.marginal_buyer?, supply > demand, active))
}

fn sample(
    m: &MarketInstance,
    base: &StrategyVector,
    i: usize,
    points: usize,
) -> Vec<(f64, f64, Option<(usize, usize, bool, Vec<usize>)>)> {
    let bound = m.sellers()[i].capacity_bound;
    (0..points)
        .map(|j| {
            let a = bound * j as f64 / (points - 1) as f64;
            let mut o = base.clone();
            o.0[i] = a;
            (a, utility(m, &o, i).unwrap(), regime(m, &o))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iterates_stay_feasible(seed in 0u64..10_000, n in 2usize..9, w in 0.0..1.0f64, frac in 0.0..1.0f64) {
        let m = seeded(n, seed);
        let offers = StrategyVector(m.sellers().iter().map(|s| s.capacity_bound * frac).collect());
        let cfg = GameConfig::default().with_weight(w);
        for next in [step_sequential(&m, &offers, &cfg).unwrap(), step_parallel(&m, &offers, &cfg).unwrap()] {
            prop_assert!(m.check_offers(&next).is_ok());
        }
        let trace = run_dynamics(&m, &cfg.with_weight(w.clamp(0.05, 0.95)), None).unwrap();
        for row in &trace.iterations {
            prop_assert!(m.check_offers(&row.offers).is_ok());
        }
    }

    #[test]
    fn payoff_is_unimodal_within_a_regime(seed in 0u64..10_000, n in 2usize..9, i in 0usize..8, frac in 0.05..1.0f64) {
        let m = seeded(n, seed);
        let i = i % n;
        let base = StrategyVector(m.sellers().iter().map(|s| s.capacity_bound * frac).collect());
        let samples = sample(&m, &base, i, 401);
        for run in samples.chunk_by(|a, b| a.2 == b.2) {
            let u: Vec<f64> = run.iter().map(|s| s.1).collect();
            let mut falling = false;
            for w in u.windows(2) {
                if w[1] < w[0] - 1e-9 {
                    falling = true;
                } else if falling && w[1] > w[0] + 1e-9 {
                    prop_assert!(false, "seller {} rises again after falling: {:?}", i, u);
                }
            }
        }
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn closed_form_agrees_with_grid(seed in 0u64..10_000, n in 3usize..9, i in 0usize..8, frac in 0.05..1.0f64) {
        let m = seeded(n, seed);
        let i = i % n;
        let base = StrategyVector(m.sellers().iter().map(|s| s.capacity_bound * frac).collect());
        let Some(here) = regime(&m, &base) else { return Ok(()) };
        if here.0 <= 2 || !here.3.contains(&i) {
            return Ok(());
        }
        let cf = closed_forms(&m, &base, i);
        let candidate = if here.2 { cf.over_supply } else { cf.under_supply };
        let Some(c) = candidate else { return Ok(()) };
        let bound = m.sellers()[i].capacity_bound;
        let spacing = bound / 200.0;
        if c <= 2.0 * spacing || c >= bound - 2.0 * spacing {
            return Ok(());
        }
        let at = |a: f64| {
            let mut o = base.clone();
            o.0[i] = a;
            regime(&m, &o)
        };
        // only where the regime holds on a neighborhood of the optimum
        if [c - 2.0 * spacing, c, c + 2.0 * spacing].iter().any(|&a| at(a).as_ref() != Some(&here)) {
            return Ok(());
        }
        let grid = sample(&m, &base, i, 201);
        let best = grid
            .iter()
            .filter(|s| s.2.as_ref() == Some(&here))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        prop_assert!((best.0 - c).abs() < 2.0 * spacing, "closed form {} grid {}", c, best.0);
    }
}
