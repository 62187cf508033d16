use std::sync::OnceLock;

use asip_core::coupling::{schedule, verify_schedule, BlockSet};
use asip_core::grid::BinGrid;
use asip_core::maps::IntervalMap;
use asip_core::martingale::{
    decomposition_context, martingale_path, pinelis_bound, pinelis_bound_relaxed, simulate_chain, Constants,
};
use asip_core::observables::{builtin, decompose_h, variation_norm};
use asip_core::statistics::{sigma2, LagRule};
use asip_core::transfer::{
    build_ulam, conditional_deviation, phi_finite_chain, phi_oracle, state_norm, FiniteChain, MixingOptions,
    UlamOperator, UlamOptions,
};
use proptest::prelude::*;

fn doubling_256() -> &'static UlamOperator {
    static OP: OnceLock<UlamOperator> = OnceLock::new();
    OP.get_or_init(|| {
        let map = IntervalMap::doubling();
        build_ulam(&map, &BinGrid::uniform(256).unwrap(), &UlamOptions::for_map(&map)).unwrap()
    })
}

fn chain_from(raw: Vec<Vec<f64>>) -> Option<FiniteChain> {
    let r: Vec<Vec<f64>> = raw
        .into_iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    FiniteChain::with_stationary(r).ok()
}

fn chain_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.01f64..1.0, n), n))
}

fn slopes_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0.1f64..1.0, any::<bool>()), 2..=4).prop_map(|w| {
        let total: f64 = w.iter().map(|p| p.0).sum();
        w.iter().map(|&(x, neg)| if neg { -total / x } else { total / x }).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ulam_rows_are_stochastic(slopes in slopes_strategy()) {
        let map = match IntervalMap::piecewise_linear(&slopes) {
            Ok(m) => m,
            Err(_) => return Ok(()),
        };
        let op = build_ulam(&map, &BinGrid::uniform(64).unwrap(), &UlamOptions::for_map(&map)).unwrap();
        for i in 0..op.bins() {
            let s: f64 = op.p.row(i).map(|(_, v)| v).sum();
            prop_assert!((s - 1.0).abs() < 1e-12, "row {i} sums to {s}");
            prop_assert!(op.p.row(i).all(|(_, v)| v >= 0.0));
        }
        prop_assert!((op.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(op.h.iter().all(|&h| h >= 0.0));
    }

    #[test]
    fn constants_identities(s in 0.1f64..100.0, m in 0.01f64..10.0, n in 16u64..1_000_000_000_000) {
        let c = Constants::from_sum(s, m, n).unwrap();
        let (e1, e2) = c.identity_errors();
        prop_assert!(e1 < 1e-12 && e2 < 1e-12, "{e1:e} {e2:e}");
        prop_assert!((c.c - 16.0 * s).abs() <= 1e-12 * c.c);
    }

    #[test]
    fn pinelis_bound_is_monotone_and_dominated(x in 0.0f64..50.0, dx in 0.0f64..10.0, y in 0.1f64..20.0, c in 0.1f64..5.0) {
        let a = pinelis_bound(x, y, c);
        let b = pinelis_bound(x + dx, y, c);
        prop_assert!(a <= 2.0 && b <= a * (1.0 + 1e-12));
        prop_assert!(a <= pinelis_bound_relaxed(x, y, c) * (1.0 + 1e-12));
    }

    #[test]
    fn variance_scales_quadratically(scale in -5.0f64..5.0, k in 1u32..4) {
        let op = doubling_256();
        let f = builtin::cosine(k).unwrap();
        let rule = LagRule::Fixed { lags: 20 };
        let base = sigma2(op, &f, rule).unwrap().sigma2_raw;
        let scaled = sigma2(op, &f.scaled(scale), rule).unwrap().sigma2_raw;
        prop_assert!((scaled - scale * scale * base).abs() <= 1e-10 * (1.0 + scaled.abs()));
    }

    #[test]
    fn greedy_schedule_verifies(e0 in 0.05f64..1.0, ratio in 0.3f64..0.95, levels in 2usize..6, pow2 in any::<bool>()) {
        let eps: Vec<f64> = (0..levels).map(|i| e0 * ratio.powi(i as i32)).collect();
        let blocks = if pow2 { BlockSet::PowersOfTwo } else { BlockSet::All };
        let s = schedule(&eps, &blocks, 2.0, 100).unwrap();
        prop_assert!(s.verified && verify_schedule(&eps, &s.a));
        prop_assert!(s.a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.a.iter().all(|&a| blocks.contains(a)));
    }

    #[test]
    fn phi_fast_path_matches_enumeration(raw in chain_strategy()) {
        let Some(c) = chain_from(raw) else { return Ok(()) };
        let (kmax, horizon, gap) = (5, 8, 3);
        let opts = MixingOptions { kmax, horizon: Some(horizon), pair_gap: Some(gap), ..Default::default() };
        let prof = phi_finite_chain(&c, &opts);
        let (p1, p2) = phi_oracle(&c, kmax, horizon, gap);
        for k in 0..kmax {
            prop_assert!((prof.phi1[k] - p1[k]).abs() <= 1e-13);
            prop_assert!((prof.phi2[k] - p2[k]).abs() <= 1e-13);
        }
    }

    #[test]
    fn conditional_deviation_bounded_by_phi1(raw in chain_strategy(), steps in prop::collection::vec(-1.0f64..3.0, 6), k in 1usize..6) {
        let Some(c) = chain_from(raw) else { return Ok(()) };
        let mut acc = 0.0;
        let f: Vec<f64> = steps[..c.len()].iter().map(|s| { acc += s.abs(); acc }).collect();
        let opts = MixingOptions { kmax: 6, horizon: Some(10), pair_gap: Some(2), ..Default::default() };
        let prof = phi_finite_chain(&c, &opts);
        for p in [2.0, 4.0] {
            let lhs = conditional_deviation(&c, &f, k, p);
            let rhs = 2.0 * (2.0 * prof.phi1[k - 1]).powf((p - 1.0) / p) * state_norm(&c, &f, p);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-14, "p={p}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn bv_decomposition_reconstructs(a in 0.05f64..0.95, shift in 0.0f64..0.1, m in 0.5f64..100.0, x in 1e-9f64..1.0) {
        for f in [builtin::power_law(a, shift).unwrap(), builtin::log_damped_power(a, 1.0).unwrap(), builtin::cosine(3).unwrap()] {
            let (bv, rem) = decompose_h(&f, m).unwrap();
            let v = f.eval(x);
            prop_assert!((v - bv.eval(x) - rem.eval(x)).abs() <= 1e-12 * (1.0 + v.abs()), "{} at {x}", f.name);
            prop_assert!(variation_norm(&bv).unwrap() <= 3.0 * m + 1e-9);
        }
    }

    #[test]
    fn martingale_identity_tracks_bins(seed in any::<u64>(), n in 16usize..200) {
        let op = doubling_256();
        let f = builtin::centered_linear().unwrap();
        let ctx = decomposition_context(op, &f, 1000, 0.5, None).unwrap();
        let path = simulate_chain(op, n, seed, 0);
        let mp = martingale_path(op, &ctx, &path);
        prop_assert_eq!(mp.d.len(), n);
        // Each step contributes at most the within-bin oscillation of f.
        prop_assert!(mp.identity_residual <= n as f64 / 256.0, "{}", mp.identity_residual);
    }
}
