use proptest::prelude::*;
use qlbs_core::basis::*;
use qlbs_core::dataset::*;
use qlbs_core::dp::*;
use qlbs_core::fqi::*;
use qlbs_core::market::*;
use qlbs_core::portfolio::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gbm(n_steps: usize, n_paths: usize, seed: u64) -> PathEnsemble {
    let p = MarketParams::new(100.0, 0.04, 0.2, 0.02, 1.0, n_steps).unwrap();
    simulate_gbm(&p, n_paths, seed).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn dp_dataset(e: &PathEnsemble, lambda: f64, m: usize) -> (TransitionDataset, DpSolution, BasisSet, RiskParams) {
    let c = OptionContract::put(100.0);
    let basis = build_basis(&BasisSpec::bspline(m), &e.pooled_states()).unwrap();
    let risk = RiskParams::new(lambda, e.params()).unwrap();
    let sol = solve_dp(e, &c, &risk, &basis, &DpConfig::default()).unwrap();
    let ro = rollout_portfolio(e, &sol.strategy(), &c, &risk, &basis, Centering::Conditional).unwrap();
    (TransitionDataset::from_rollout(e, &ro, &c, lambda, "dp_optimal").unwrap(), sol, basis, risk)
}

#[test]
fn bellman_target_parabola_reconstruction() {
    let e = gbm(10, 500, 31);
    let c = OptionContract::call(95.0);
    let lambda = 0.02;
    let risk = RiskParams::new(lambda, e.params()).unwrap();
    let ro = rollout_portfolio(&e, &HedgeStrategy::Constant(0.4), &c, &risk, &BasisSet::constant(), Centering::CrossSectional)
        .unwrap();
    let g = risk.gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let t = rng.random_range(0..10);
        let k = rng.random_range(0..500);
        let ds = e.delta_s(t);
        let (md, mp) = (mean(&ds), mean(&ro.pi[t + 1]));
        let (d, dh, ph) = (ds[k], ds[k] - md, ro.pi[t + 1][k] - mp);
        let q_next: f64 = rng.random_range(-20.0..0.0);
        // Expanded by hand: gamma a d - lambda gamma^2 (ph^2 - 2 a ph dh + a^2 dh^2) + gamma q_next.
        let target = |a: f64| g * a * d - lambda * g * g * (ph * ph - 2.0 * a * ph * dh + a * a * dh * dh) + g * q_next;
        let nodes = [rng.random_range(-2.0..-0.7), rng.random_range(-0.6..0.6), rng.random_range(0.7..2.0)];
        let u = parabola_through(nodes, nodes.map(target)).unwrap();
        let held_out = rng.random_range(-3.0..3.0);
        let want = target(held_out);
        assert!((q_value(&u, held_out) - want).abs() <= 1e-10 * want.abs().max(1.0), "t={t} k={k}");

        let a_star = sample_optimal_action(d, dh, ph, &risk).unwrap();
        let vertex = -u[1] / u[2];
        assert!(u[2] < 0.0);
        assert!((a_star - vertex).abs() <= 1e-10 * a_star.abs().max(1.0), "{a_star} vs {vertex}");
        // The library reward agrees with the hand expansion.
        let lib = reward(d, dh, ph, held_out, &risk) + g * q_next;
        assert!((lib - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn parabola_needs_distinct_nodes() {
    assert!(parabola_through([0.0, 0.0, 1.0], [1.0, 2.0, 3.0]).is_err());
    let risk = RiskParams::with_gamma(0.0, 0.99).unwrap();
    assert!(sample_optimal_action(1.0, 1.0, 1.0, &risk).is_err());
}

#[test]
fn features_reconstruct_the_quadratic() {
    let samples: Vec<f64> = (0..50).map(|i| 4.0 + 0.02 * i as f64).collect();
    let basis = build_basis(&BasisSpec::bspline(6), &samples).unwrap();
    let m = basis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = nalgebra::DMatrix::from_fn(3, m, |_, _| rng.random_range(-1.0..1.0));
    for &(x, a) in &[(4.1, -0.3), (4.55, 1.7), (4.98, 0.0)] {
        let psi = build_features(x, a, &basis);
        assert_eq!(psi.len(), 3 * m);
        // Column-major vec(W) pairs with the (1, a, a^2/2) (x) Phi ordering.
        let lin: f64 = w.as_slice().iter().zip(&psi).map(|(p, q)| p * q).sum();
        let quad = q_value(&parabola_at(&w, &basis.eval(x)), a);
        assert!((lin - quad).abs() < 1e-13);
    }
}

fn one_step_dataset(actions: [f64; 4], rewards: [f64; 4], s1: [f64; 4]) -> TransitionDataset {
    let p = MarketParams::new(100.0, 0.0, 0.2, 0.0, 1.0, 1).unwrap();
    let x0 = to_state(100.0, 0.0, &p).unwrap();
    let records = (0..4)
        .map(|k| TransitionRecord {
            path: k,
            t: 0,
            x: x0,
            a: actions[k],
            r: rewards[k],
            x_next: to_state(s1[k], 1.0, &p).unwrap(),
        })
        .collect();
    let header = DatasetHeader {
        n_paths: 4,
        n_steps: 1,
        mu: 0.0,
        sigma: 0.2,
        r: 0.0,
        dt: 1.0,
        lambda: 0.5,
        seed: None,
        contract: OptionContract::put(100.0),
        policy: "hand".into(),
    };
    TransitionDataset::new(header, records).unwrap()
}

/// Solve a 3x3 system by Cramer's rule.
fn cramer(a: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(a);
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for i in 0..3 {
            m[i][j] = b[i];
        }
        *o = det(m) / d;
    }
    out
}

#[test]
fn four_record_least_squares_by_hand() {
    let actions = [-1.0, -0.5, 0.5, 1.5];
    let rewards = [0.3, -0.2, 0.1, -0.4];
    let s1 = [90.0, 96.0, 104.0, 111.0];
    let data = one_step_dataset(actions, rewards, s1);
    let lambda = 0.5;
    let risk = RiskParams::with_gamma(lambda, 1.0).unwrap();
    let cfg = FqiConfig { rewards: RewardSource::Stored, centering: Centering::CrossSectional, ..Default::default() };
    let sol = fqi_backward(&data, &BasisSet::constant(), &risk, &cfg).unwrap();

    let payoff: Vec<f64> = s1.iter().map(|s| (100.0 - s).max(0.0)).collect();
    let pm = mean(&payoff);
    let var = payoff.iter().map(|p| (p - pm) * (p - pm)).sum::<f64>() / 4.0;
    let y: Vec<f64> = (0..4).map(|k| rewards[k] - payoff[k] - lambda * var).collect();
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for k in 0..4 {
        let f = [1.0, actions[k], 0.5 * actions[k] * actions[k]];
        for i in 0..3 {
            aty[i] += f[i] * y[k];
            for j in 0..3 {
                ata[i][j] += f[i] * f[j];
            }
        }
    }
    let want = cramer(ata, aty);
    for i in 0..3 {
        // The fixed ridge perturbs the solution at the 1e-8 level.
        assert!((sol.w[0][(i, 0)] - want[i]).abs() < 1e-6 * (1.0 + want[i].abs()), "{i}: {} vs {}", sol.w[0][(i, 0)], want[i]);
    }
    assert!(sol.curvature_identified[0]);
}

#[test]
fn on_policy_fqi_reproduces_dp() {
    let e = gbm(12, 4000, 12);
    let (data, dp, basis, risk) = dp_dataset(&e, 1e-2, 8);
    let sol = fqi_backward(&data, &basis, &risk, &FqiConfig::default()).unwrap();
    assert!((sol.price0 / dp.price0 - 1.0).abs() < 1e-6, "{} vs {}", sol.price0, dp.price0);
    assert!((sol.hedge0 - dp.hedge0).abs() < 1e-6);
    // Stored rewards coincide with relabelled ones when the data is on-policy.
    let stored = fqi_backward(&data, &basis, &risk, &FqiConfig { rewards: RewardSource::Stored, ..Default::default() }).unwrap();
    assert!((stored.price0 / dp.price0 - 1.0).abs() < 1e-6);
    // On-policy actions are a function of the state: no curvature information.
    assert!(sol.curvature_identified.iter().all(|b| !b));
    let (p, h) = extract_price_hedge(&sol, sol.x0, 0).unwrap();
    assert_eq!(h, sol.hedge0);
    assert_eq!(p, sol.price0);
}

#[test]
fn off_policy_fqi_recovers_dp_and_a_concave_q() {
    let e = gbm(12, 8000, 13);
    let (_, dp, basis, risk) = dp_dataset(&e, 1e-2, 8);
    let c = OptionContract::put(100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let acts: Vec<Vec<f64>> = (0..12).map(|_| (0..8000).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let ro = rollout_portfolio(&e, &HedgeStrategy::Recorded(acts), &c, &risk, &basis, Centering::Conditional).unwrap();
    let data = TransitionDataset::from_rollout(&e, &ro, &c, 1e-2, "random").unwrap();
    let sol = fqi_backward(&data, &basis, &risk, &FqiConfig::default()).unwrap();
    assert!((sol.price0 / dp.price0 - 1.0).abs() < 0.05, "{} vs {}", sol.price0, dp.price0);
    assert!((sol.hedge0 - dp.hedge0).abs() < 0.1);
    assert!(sol.curvature_identified.iter().all(|&b| b));
    let u = parabola_at(&sol.w[0], &basis.eval(sol.x0));
    assert!(u[2] < 0.0);
    let (_, vertex) = extract_price_hedge(&sol, sol.x0, 0).unwrap();
    assert!((vertex + u[1] / u[2]).abs() < 1e-12);
}

#[test]
fn csv_roundtrip_preserves_the_solution() {
    let e = gbm(6, 300, 14);
    let (data, _, basis, risk) = dp_dataset(&e, 1e-2, 6);
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = TransitionDataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, data);
    let a = fqi_backward(&data, &basis, &risk, &FqiConfig::default()).unwrap();
    let b = fqi_backward(&back, &basis, &risk, &FqiConfig::default()).unwrap();
    assert_eq!(a, b);
}

fn csv_of(data: &TransitionDataset) -> String {
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

#[test]
fn malformed_datasets_are_rejected() {
    let data = one_step_dataset([-1.0, -0.5, 0.5, 1.5], [0.0; 4], [90.0, 96.0, 104.0, 111.0]);
    let text = csv_of(&data);
    let read = |s: &str| TransitionDataset::read_csv(s.as_bytes());
    assert!(read(&text).is_ok());
    assert!(read(&text.replace("#sigma=", "#vol=")).is_err());
    assert!(read(&text.replace(COLUMNS, "path,t,x,a,r")).is_err());
    let last = text.lines().last().unwrap();
    assert!(read(&text.replace(last, &format!("{last},7"))).is_err());
    assert!(read(&text.replace(last, &last.replacen('3', "2", 1))).is_err());
    assert!(read(&text.replace("#n_paths=4", "#n_paths=5")).is_err());
    let err = read(&text.replace(last, &last.replace(",0,", ",zero,"))).unwrap_err();
    assert!(err.to_string().contains("zero"), "{err}");
}

#[test]
fn broken_path_chain_is_rejected() {
    let e = gbm(3, 5, 15);
    let (data, ..) = dp_dataset(&e, 1e-2, 4);
    let mut recs = data.records().to_vec();
    recs[1].x += 0.01;
    let bad = TransitionDataset::new(data.header.clone(), recs).unwrap();
    assert!(bad.to_ensemble().is_err());
}

#[test]
fn zero_lambda_is_rejected() {
    let data = one_step_dataset([-1.0, -0.5, 0.5, 1.5], [0.0; 4], [90.0, 96.0, 104.0, 111.0]);
    let risk = RiskParams::with_gamma(0.0, 1.0).unwrap();
    assert!(fqi_backward(&data, &BasisSet::constant(), &risk, &FqiConfig::default()).is_err());
}

proptest! {
    #[test]
    fn reward_parabola_is_exact(
        d in -10.0f64..10.0, dh in 0.05f64..10.0, ph in -30.0f64..30.0,
        lambda in 1e-4f64..1.0, gamma in 0.9f64..1.0, held in -5.0f64..5.0,
    ) {
        let risk = RiskParams::with_gamma(lambda, gamma).unwrap();
        let f = |a: f64| reward(d, dh, ph, a, &risk);
        let u = parabola_through([-1.0, 0.25, 1.0], [f(-1.0), f(0.25), f(1.0)]).unwrap();
        let want = f(held);
        let scale = want.abs().max(f(0.0).abs()).max(1e-3);
        prop_assert!((q_value(&u, held) - want).abs() <= 1e-10 * scale);
        let a = sample_optimal_action(d, dh, ph, &risk).unwrap();
        prop_assert!((a + u[1] / u[2]).abs() <= 1e-9 * a.abs().max(1.0));
    }
}
