use qlbs_core::basis::*;
use qlbs_core::bs::*;
use qlbs_core::market::*;
use qlbs_core::utility::*;

fn q_paths(n_steps: usize, n_paths: usize, seed: u64) -> PathEnsemble {
    let p = MarketParams::new(100.0, 0.03, 0.15, 0.03, 1.0, n_steps).unwrap();
    simulate_gbm(&p, n_paths, seed).unwrap()
}

fn params(gamma: f64, order: usize, method: UtilityMethod) -> UtilityParams {
    UtilityParams { gamma, order, method }
}

#[test]
fn linear_claim_is_hedged_one_for_one() {
    // On a lattice with one-hot features every function of the state lies in
    // the span, so a claim linear in S is hedged exactly.
    let p = MarketParams::new(100.0, 0.03, 0.15, 0.03, 4.0 / 24.0, 4).unwrap();
    let (chain, e) = qlbs_core::tabular::lattice_instance(&p, 9).unwrap();
    let basis = BasisSet::one_hot_nodes(&chain.grid).unwrap();
    let h: Vec<f64> = e.s(4).to_vec();
    let x = hedge_expansion(&e, &h, 3, &basis).unwrap();
    let design = basis.evaluate(e.x(3));
    for k in 0..e.n_paths() {
        let u0: f64 = design.row(k).iter().zip(x.u0.iter()).map(|(a, b)| a * b).sum();
        let u1: f64 = design.row(k).iter().zip(x.u1.iter()).map(|(a, b)| a * b).sum();
        assert!((u0 - 1.0).abs() < 1e-9, "{u0}");
        assert!(u1.abs() < 1e-9, "{u1}");
    }
    let n = numeric_hedge(&e, &h, 3, &basis, 0.05).unwrap();
    assert!((n - &x.u0).amax() < 1e-8);
    // Earlier continuation values carry E[dS | x], which is not linear in S,
    // so only the last step is checked inside the recursion.
    let c = OptionContract::call(1e-6);
    for pr in [params(0.0, 0, UtilityMethod::Expansion), params(0.05, 2, UtilityMethod::Expansion), params(0.05, 1, UtilityMethod::Numeric)] {
        let r = indifference_price_recursion(&e, &c, &basis, &pr).unwrap();
        for &x in e.x(3) {
            let u: f64 = basis.eval(x).iter().zip(r.hedge[3].iter()).map(|(a, b)| a * b).sum();
            assert!((u - 1.0).abs() < 1e-8, "{pr:?}: {u}");
        }
    }
}

/// `(1/g) log mean exp(g (h - u d))` minimised over a scalar hedge by golden
/// section, with `d` the demeaned increments.
fn one_step_oracle(h: &[f64], ds: &[f64], g: f64) -> (f64, f64) {
    let n = ds.len() as f64;
    let m = ds.iter().sum::<f64>() / n;
    let d: Vec<f64> = ds.iter().map(|v| v - m).collect();
    let f = |u: f64| (h.iter().zip(&d).map(|(a, b)| (g * (a - u * b)).exp()).sum::<f64>() / n).ln() / g;
    let (mut lo, mut hi) = (-5.0f64, 5.0f64);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let u = 0.5 * (lo + hi);
    (u, f(u))
}

#[test]
fn one_step_numeric_matches_direct_minimisation() {
    let p = MarketParams::new(100.0, 0.0, 0.3, 0.0, 1.0, 1).unwrap();
    let e = simulate_gbm(&p, 400, 8).unwrap();
    let c = OptionContract::put(105.0);
    let g = 0.2;
    let res = indifference_price_recursion(&e, &c, &BasisSet::constant(), &params(g, 1, UtilityMethod::Numeric)).unwrap();
    let h: Vec<f64> = e.s(1).iter().map(|&s| c.payoff(s)).collect();
    let (u, v) = one_step_oracle(&h, &e.delta_s(0), g);
    assert!((res.hedge0 - u).abs() < 1e-7, "{} vs {u}", res.hedge0);
    assert!((res.price0 - v).abs() < 1e-9 * v.abs(), "{} vs {v}", res.price0);
}

#[test]
fn deep_call_prices_at_forward_value() {
    let e = q_paths(6, 5000, 2);
    let basis = build_basis(&BasisSpec::bspline(6), &e.pooled_states()).unwrap();
    let c = OptionContract::call(1e-6);
    let st = e.s(6);
    let n = st.len() as f64;
    let mean = st.iter().sum::<f64>() / n;
    let se = (st.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let want = 100.0 - 1e-6 * (-0.03f64).exp();
    for p in [
        params(0.0, 0, UtilityMethod::Expansion),
        params(0.01, 1, UtilityMethod::Expansion),
        params(0.01, 2, UtilityMethod::Expansion),
        params(0.01, 1, UtilityMethod::Numeric),
    ] {
        let r = indifference_price_recursion(&e, &c, &basis, &p).unwrap();
        assert!((r.price0 - want).abs() < 4.0 * se, "{p:?}: {} vs {want}", r.price0);
        assert!((r.hedge0 - 1.0).abs() < 0.05, "{p:?}: hedge {}", r.hedge0);
    }
}

#[test]
fn risk_neutral_order_tracks_black_scholes() {
    let e = q_paths(24, 20_000, 3);
    let basis = build_basis(&BasisSpec::bspline(12), &e.pooled_states()).unwrap();
    let c = OptionContract::put(100.0);
    let r = indifference_price_recursion(&e, &c, &basis, &params(0.0, 0, UtilityMethod::Expansion)).unwrap();
    let bs = bs_quote(100.0, &c, 1.0, 0.03, 0.15).unwrap();
    assert!((r.price0 / bs.price - 1.0).abs() < 0.02, "{} vs {}", r.price0, bs.price);
    assert!((r.hedge0 - bs.delta).abs() < 0.03, "{} vs {}", r.hedge0, bs.delta);
}

#[test]
fn risk_aversion_adds_a_premium_linear_in_gamma() {
    let e = q_paths(12, 5000, 4);
    let basis = build_basis(&BasisSpec::bspline(8), &e.pooled_states()).unwrap();
    let c = OptionContract::put(100.0);
    let price = |g: f64, order: usize, method| indifference_price_recursion(&e, &c, &basis, &params(g, order, method)).unwrap().price0;
    let p0 = price(0.0, 0, UtilityMethod::Expansion);
    let slopes: Vec<f64> = [0.005, 0.01].iter().map(|&g| (price(g, 1, UtilityMethod::Expansion) - p0) / g).collect();
    assert!(slopes[0] > 0.0 && slopes[1] > 0.0);
    assert!((slopes[1] / slopes[0] - 1.0).abs() < 0.05, "{slopes:?}");
    assert!(price(0.01, 1, UtilityMethod::Numeric) > p0);
}

#[test]
fn expansion_error_is_second_order() {
    let e = q_paths(12, 4000, 5);
    let basis = build_basis(&BasisSpec::bspline(8), &e.pooled_states()).unwrap();
    let c = OptionContract::put(100.0);
    let errs: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&g| {
            let num = indifference_price_recursion(&e, &c, &basis, &params(g, 1, UtilityMethod::Numeric)).unwrap();
            let exp = indifference_price_recursion(&e, &c, &basis, &params(g, 1, UtilityMethod::Expansion)).unwrap();
            (num.price0 - exp.price0).abs()
        })
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((2.5..=6.0).contains(&ratio), "{errs:?}");
    }
}

#[test]
fn invalid_parameters() {
    let e = q_paths(2, 50, 6);
    let c = OptionContract::put(100.0);
    let b = BasisSet::constant();
    assert!(indifference_price_recursion(&e, &c, &b, &params(0.1, 3, UtilityMethod::Expansion)).is_err());
    assert!(indifference_price_recursion(&e, &c, &b, &params(-0.1, 1, UtilityMethod::Expansion)).is_err());
    assert!(indifference_price_recursion(&e, &c, &b, &params(0.0, 1, UtilityMethod::Numeric)).is_err());
    assert!(hedge_expansion(&e, &[1.0; 3], 0, &b).is_err());
    assert!(numeric_hedge(&e, &[1.0; 50], 0, &b, 0.0).is_err());
    assert_eq!("exact".parse::<UtilityMethod>().unwrap(), UtilityMethod::Numeric);
}
