use proptest::prelude::*;
use qlbs_core::bs::*;
use qlbs_core::market::*;

/// Discounted expectation of the payoff under the lognormal law, by composite
/// Simpson in the standard normal variable, split at the payoff kink.
fn simpson_price(s: f64, contract: &OptionContract, tau: f64, r: f64, sigma: f64) -> f64 {
    let drift = (r - 0.5 * sigma * sigma) * tau;
    let vol = sigma * tau.sqrt();
    let f = |z: f64| {
        let st = s * (drift + vol * z).exp();
        contract.payoff(st) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
    };
    let kink = ((contract.strike / s).ln() - drift) / vol;
    let simpson = |a: f64, b: f64, n: usize| {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        acc * h / 3.0
    };
    let (lo, hi) = (-14.0, 14.0);
    let k = kink.clamp(lo, hi);
    (-r * tau).exp() * (simpson(lo, k, 20_000) + simpson(k, hi, 20_000))
}

#[test]
fn closed_form_matches_quadrature_reference_case() {
    let put = OptionContract::put(100.0);
    let q = bs_quote(100.0, &put, 1.0, 0.0, 0.2).unwrap();
    let oracle = simpson_price(100.0, &put, 1.0, 0.0, 0.2);
    assert!((q.price - oracle).abs() < 1e-6, "{} vs {}", q.price, oracle);
}

#[test]
fn closed_form_matches_quadrature_grid() {
    for &kind in &[OptionKind::Put, OptionKind::Call] {
        for &k in &[70.0, 100.0, 135.0] {
            for &(tau, r, sigma) in &[(1.0, 0.03, 0.15), (0.25, 0.0, 0.4), (2.0, 0.05, 0.1)] {
                let c = OptionContract { kind, strike: k };
                let q = bs_price(100.0, &c, tau, r, sigma).unwrap();
                let o = simpson_price(100.0, &c, tau, r, sigma);
                assert!((q - o).abs() < 1e-6, "{kind} K={k} tau={tau}: {q} vs {o}");
            }
        }
    }
}

#[test]
fn delta_matches_finite_difference() {
    let c = OptionContract::put(100.0);
    let h = 1e-4;
    for &s in &[80.0, 100.0, 120.0] {
        let d = bs_delta(s, &c, 1.0, 0.03, 0.15).unwrap();
        let fd = (bs_price(s + h, &c, 1.0, 0.03, 0.15).unwrap() - bs_price(s - h, &c, 1.0, 0.03, 0.15).unwrap()) / (2.0 * h);
        assert!((d - fd).abs() < 1e-7);
    }
}

#[test]
fn deep_call_is_the_underlying() {
    let q = bs_quote(100.0, &OptionContract::call(1e-9), 1.0, 0.03, 0.2).unwrap();
    assert!((q.price - 100.0).abs() < 1e-6);
    assert!((q.delta - 1.0).abs() < 1e-12);
}

#[test]
fn limit_correction_examples() {
    let d = -0.4;
    assert!((limit_hedge_correction(100.0, d, 0.07, 0.05, 0.2, 1.0).unwrap() - (d + 0.0025)).abs() < 1e-15);
    assert!((limit_hedge_correction(100.0, d, 0.07, 0.05, 0.2, 1e12).unwrap() - d).abs() < 1e-9);
}

#[test]
fn norm_cdf_reference_values() {
    // Values to 16 digits from an arbitrary-precision evaluation.
    let table = [
        (-5.0, 2.866515718791939e-7),
        (-1.96, 0.024997895148220435),
        (-0.5, 0.3085375387259869),
        (1.0, 0.8413447460685429),
        (3.0, 0.9986501019683699),
    ];
    for (x, want) in table {
        assert!((norm_cdf(x) - want).abs() < 1e-15 * want.max(1e-300) + 1e-16, "x={x}");
    }
}

#[test]
fn payoff_examples() {
    assert_eq!(OptionContract::put(100.0).payoff(90.0), 10.0);
    assert_eq!(OptionContract::put(100.0).payoff(120.0), 0.0);
    assert_eq!(OptionContract::call(100.0).payoff(120.0), 20.0);
}

#[test]
fn state_map_examples() {
    let p = MarketParams::new(100.0, 0.05, 0.2, 0.01, 1.0, 4).unwrap();
    assert_eq!(to_state(1.0, 0.0, &p).unwrap(), 0.0);
    assert_eq!(from_state(0.0, 0.0, &p), 1.0);
    assert!((from_state(100.0f64.ln(), 0.0, &p) - 100.0).abs() < 1e-12);
    let flat = MarketParams::new(100.0, 0.02, 0.2, 0.01, 1.0, 4).unwrap();
    assert_eq!(from_state(0.0, 0.7, &flat), 1.0);
    assert_eq!(to_state(42.0, 0.3, &flat).unwrap(), 42.0f64.ln());
    assert!(to_state(0.0, 0.0, &p).is_err());
}

#[test]
fn zero_vol_single_step() {
    let p = MarketParams::new(100.0, 0.05, 0.0, 0.0, 1.0, 1).unwrap();
    let e = simulate_gbm(&p, 5, 9).unwrap();
    for &s in e.s(1) {
        assert!((s - 100.0 * 0.05f64.exp()).abs() < 1e-12);
    }
}

#[test]
fn same_seed_same_ensemble_different_seed_different() {
    let p = MarketParams::new(100.0, 0.05, 0.2, 0.01, 1.0, 6).unwrap();
    let a = simulate_gbm(&p, 50, 11).unwrap();
    let b = simulate_gbm(&p, 50, 11).unwrap();
    let c = simulate_gbm(&p, 50, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.s(6), c.s(6));
}

#[test]
fn paths_do_not_depend_on_ensemble_size() {
    let p = MarketParams::new(100.0, 0.05, 0.2, 0.01, 1.0, 6).unwrap();
    let small = simulate_gbm(&p, 10, 5).unwrap();
    let big = simulate_gbm(&p, 100, 5).unwrap();
    for t in 0..=6 {
        assert_eq!(small.s(t), &big.s(t)[..10]);
    }
}

#[test]
fn terminal_mean_matches_lognormal_mean() {
    let p = MarketParams::new(100.0, 0.05, 0.2, 0.0, 1.0, 1).unwrap();
    let e = simulate_gbm(&p, 100_000, 2024).unwrap();
    let st = e.s(1);
    let n = st.len() as f64;
    let mean = st.iter().sum::<f64>() / n;
    let var = st.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let exact = 100.0 * 0.05f64.exp();
    assert!((mean - exact).abs() < 3.0 * se, "mean {mean} exact {exact} se {se}");
}

#[test]
fn normals_are_standard() {
    let mut z = vec![0.0; 200_001];
    path_normals(3, 0, &mut z);
    let n = z.len() as f64;
    let m = z.iter().sum::<f64>() / n;
    let v = z.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    assert!(m.abs() < 4.0 / n.sqrt());
    assert!((v - 1.0).abs() < 0.01);
}

#[test]
fn ensemble_from_prices_rejects_bad_input() {
    let p = MarketParams::new(100.0, 0.05, 0.2, 0.01, 1.0, 2).unwrap();
    assert!(PathEnsemble::from_prices(p, &[vec![100.0, 101.0]]).is_err());
    assert!(PathEnsemble::from_prices(p, &[vec![100.0, -1.0, 3.0]]).is_err());
    let e = PathEnsemble::from_prices(p, &[vec![100.0, 90.0, 95.0]]).unwrap();
    assert_eq!(e.n_paths(), 1);
    assert!((e.delta_s(0)[0] - (90.0 - 100.0 * (0.01f64 * 0.5).exp())).abs() < 1e-12);
}

#[test]
fn invalid_market_parameters() {
    assert!(MarketParams::new(-1.0, 0.0, 0.2, 0.0, 1.0, 1).is_err());
    assert!(MarketParams::new(100.0, 0.0, -0.2, 0.0, 1.0, 1).is_err());
    assert!(MarketParams::new(100.0, 0.0, 0.2, 0.0, 0.0, 1).is_err());
    assert!(MarketParams::new(100.0, 0.0, 0.2, 0.0, 1.0, 0).is_err());
}

proptest! {
    #[test]
    fn put_call_parity(s in 10.0f64..300.0, k in 10.0f64..300.0, tau in 0.0f64..3.0, r in -0.02f64..0.1, sigma in 0.0f64..0.8) {
        let c = bs_price(s, &OptionContract::call(k), tau, r, sigma).unwrap();
        let p = bs_price(s, &OptionContract::put(k), tau, r, sigma).unwrap();
        let fwd = s - k * (-r * tau).exp();
        prop_assert!((c - p - fwd).abs() <= 1e-10 * (1.0 + s + k));
        let dc = bs_delta(s, &OptionContract::call(k), tau, r, sigma).unwrap();
        let dp = bs_delta(s, &OptionContract::put(k), tau, r, sigma).unwrap();
        if sigma * tau.sqrt() > 0.0 {
            prop_assert!((dc - dp - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn price_within_no_arbitrage_bounds(s in 10.0f64..300.0, k in 10.0f64..300.0, tau in 0.0f64..3.0, r in 0.0f64..0.1, sigma in 0.0f64..0.8) {
        let kd = k * (-r * tau).exp();
        let c = bs_price(s, &OptionContract::call(k), tau, r, sigma).unwrap();
        let p = bs_price(s, &OptionContract::put(k), tau, r, sigma).unwrap();
        let tol = 1e-9 * (s + k);
        prop_assert!(c >= (s - kd).max(0.0) - tol && c <= s + tol);
        prop_assert!(p >= (kd - s).max(0.0) - tol && p <= kd + tol);
    }

    #[test]
    fn state_roundtrip(s in 1e-3f64..1e4, time in 0.0f64..5.0, mu in -0.1f64..0.2, sigma in 0.0f64..1.0) {
        let p = MarketParams::new(100.0, mu, sigma, 0.0, 5.0, 10).unwrap();
        let back = from_state(to_state(s, time, &p).unwrap(), time, &p);
        prop_assert!((back - s).abs() <= 1e-12 * s);
    }

    #[test]
    fn cdf_is_monotone_and_bounded(x in -40.0f64..40.0, h in 0.0f64..1.0) {
        let a = norm_cdf(x);
        let b = norm_cdf(x + h);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }
}
