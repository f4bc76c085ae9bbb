//! One function per subcommand. Each reads the effective configuration,
//! runs the engine and writes its reports; the returned text is the summary.

use std::fs::File;
use std::io::BufReader;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qlbs_core::basis::{build_basis, BasisKind, BasisSet, BasisSpec};
use qlbs_core::bs::bs_quote;
use qlbs_core::dataset::TransitionDataset;
use qlbs_core::dp::{price_and_hedge_surface, solve_dp, DpConfig, DpSolution};
use qlbs_core::fqi::{extract_price_hedge, fqi_backward, ActionEstimator, FqiConfig, RewardSource};
use qlbs_core::market::{from_state, simulate_gbm, MarketParams, OptionContract, PathEnsemble};
use qlbs_core::portfolio::{
    ask_price, local_risk_strategy, rollout_portfolio, self_financing_error, Centering, HedgeStrategy, RiskParams,
};
use qlbs_core::tabular::{
    action_grid, discretize_chain, exact_backward_induction, lattice_instance, q_learn, qlbs_mdp, ActionMax,
    LearningRate,
};
use qlbs_core::utility::{indifference_price_recursion, UtilityMethod, UtilityParams};

use crate::config::Config;
use crate::error::CliError;
use crate::io::{load_price_panel, Reporter, Summary};

pub fn market(cfg: &Config) -> Result<MarketParams, CliError> {
    Ok(MarketParams::new(
        cfg.get("market.s0")?,
        cfg.get("market.mu")?,
        cfg.get("market.sigma")?,
        cfg.get("market.r")?,
        cfg.get("market.maturity")?,
        cfg.get("market.n_steps")?,
    )?)
}

fn contract(cfg: &Config) -> Result<OptionContract, CliError> {
    let c = OptionContract { kind: cfg.get("contract.type")?, strike: cfg.get("contract.strike")? };
    c.validate()?;
    Ok(c)
}

/// Simulated paths, or the ingested panel when `input.prices` is set.
fn ensemble(cfg: &Config, params: &MarketParams) -> Result<PathEnsemble, CliError> {
    match cfg.optional::<String>("input.prices")? {
        Some(path) => load_price_panel(path.as_ref(), *params),
        None => Ok(simulate_gbm(params, cfg.get("mc.n_paths")?, cfg.get("mc.seed")?)?),
    }
}

fn basis(cfg: &Config, samples: &[f64]) -> Result<BasisSet, CliError> {
    let spec = BasisSpec {
        kind: cfg.get::<BasisKind>("basis.kind")?,
        m: cfg.get("basis.m")?,
        degree: cfg.get("basis.degree")?,
        bandwidth: cfg.optional("basis.bandwidth")?,
    };
    Ok(build_basis(&spec, samples)?)
}

fn positive_lambda(cfg: &Config, params: &MarketParams, solver: &str) -> Result<RiskParams, CliError> {
    let lambda: f64 = cfg.get("risk.lambda")?;
    if !(lambda > 0.0) {
        return Err(CliError::Config(format!(
            "the {solver} solver requires risk.lambda > 0 (got {lambda}); the hedge equations divide by lambda"
        )));
    }
    Ok(RiskParams::new(lambda, params)?)
}

fn dp_config(cfg: &Config) -> Result<DpConfig, CliError> {
    Ok(DpConfig { centering: cfg.get("solver.centering")?, drift: cfg.get("solver.drift")? })
}

/// Hedging rules usable for rollouts and behaviour policies.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Policy {
    DpOptimal,
    LocalRisk,
    Zero,
    Constant(f64),
    Random(f64, f64),
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let args = |body: &str| -> Result<Vec<f64>, String> {
            body.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))).collect()
        };
        if let Some(body) = s.strip_prefix("random(").and_then(|b| b.strip_suffix(')')) {
            return match args(body)?.as_slice() {
                [lo, hi] if lo < hi => Ok(Policy::Random(*lo, *hi)),
                _ => Err("random(lo,hi) needs lo < hi".into()),
            };
        }
        if let Some(body) = s.strip_prefix("constant(").and_then(|b| b.strip_suffix(')')) {
            return match args(body)?.as_slice() {
                [c] => Ok(Policy::Constant(*c)),
                _ => Err("constant(c) takes one value".into()),
            };
        }
        match s {
            "dp_optimal" | "dp" => Ok(Policy::DpOptimal),
            "local_risk" => Ok(Policy::LocalRisk),
            "zero" => Ok(Policy::Zero),
            "random" => Ok(Policy::Random(-1.5, 1.5)),
            _ => Err(format!("unknown policy `{s}`")),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::DpOptimal => write!(f, "dp_optimal"),
            Policy::LocalRisk => write!(f, "local_risk"),
            Policy::Zero => write!(f, "zero"),
            Policy::Constant(c) => write!(f, "constant({c})"),
            Policy::Random(lo, hi) => write!(f, "random({lo},{hi})"),
        }
    }
}

struct Setup {
    params: MarketParams,
    contract: OptionContract,
    paths: PathEnsemble,
    basis: BasisSet,
}

fn setup(cfg: &Config) -> Result<Setup, CliError> {
    let params = market(cfg)?;
    let contract = contract(cfg)?;
    let paths = ensemble(cfg, &params)?;
    let basis = basis(cfg, &paths.pooled_states())?;
    Ok(Setup { params, contract, paths, basis })
}

fn strategy(cfg: &Config, s: &Setup, policy: Policy, seed: u64) -> Result<HedgeStrategy, CliError> {
    let centering: Centering = cfg.get("solver.centering")?;
    Ok(match policy {
        Policy::Zero => HedgeStrategy::Zero,
        Policy::Constant(c) => HedgeStrategy::Constant(c),
        Policy::LocalRisk => local_risk_strategy(&s.paths, &s.contract, &s.basis, centering)?,
        Policy::DpOptimal => {
            let risk = positive_lambda(cfg, &s.params, "dp")?;
            solve_dp(&s.paths, &s.contract, &risk, &s.basis, &dp_config(cfg)?)?.strategy()
        }
        Policy::Random(lo, hi) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = s.paths.n_paths();
            HedgeStrategy::Recorded(
                (0..s.paths.n_steps()).map(|_| (0..n).map(|_| rng.random_range(lo..hi)).collect()).collect(),
            )
        }
    })
}

fn lambda_for_rewards(cfg: &Config) -> Result<f64, CliError> {
    let lambda: f64 = cfg.get("risk.lambda")?;
    if !(lambda >= 0.0) {
        return Err(CliError::Config(format!("risk.lambda must be non-negative (got {lambda})")));
    }
    Ok(lambda)
}

fn bs_reference(s: &Setup, summary: &mut Summary) -> Result<(f64, f64), CliError> {
    let p = &s.params;
    let q = bs_quote(p.s0, &s.contract, p.maturity, p.r, p.sigma)?;
    summary.f("bs_price", q.price).f("bs_delta", q.delta);
    Ok((q.price, q.delta))
}

/// States at which surfaces are reported: the start state at `t = 0`, an
/// even grid over the sampled range afterwards.
fn surface_states(xs: &[f64], t: usize, points: usize) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if t == 0 || points < 2 || lo == hi {
        return vec![xs.iter().sum::<f64>() / xs.len() as f64];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

pub fn simulate(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    let params = market(cfg)?;
    let paths = ensemble(cfg, &params)?;
    let mut csv = rep.csv("paths.csv", "path,t,s,x")?;
    for k in 0..paths.n_paths() {
        for t in 0..=paths.n_steps() {
            csv.row(&[k.into(), t.into(), paths.price(k, t).into(), paths.x(t)[k].into()])?;
        }
    }
    csv.finish()?;
    let mut price_csv = rep.csv("prices.csv", crate::io::PRICE_COLUMNS)?;
    for k in 0..paths.n_paths() {
        for t in 0..=paths.n_steps() {
            price_csv.row(&[k.into(), t.into(), paths.price(k, t).into()])?;
        }
    }
    price_csv.finish()?;
    let st = paths.s(paths.n_steps());
    let mean = st.iter().sum::<f64>() / st.len() as f64;
    let mut out = Summary::default();
    out.s("n_paths", paths.n_paths())
        .s("n_steps", paths.n_steps())
        .f("mean_terminal_price", mean)
        .f("model_terminal_mean", params.s0 * (params.mu * params.maturity).exp());
    Ok(out)
}

pub fn rollout(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    let s = setup(cfg)?;
    let policy = match cfg.raw("rollout.strategy") {
        "constant" => Policy::Constant(cfg.get("rollout.constant")?),
        _ => cfg.get("rollout.strategy")?,
    };
    let strat = strategy(cfg, &s, policy, cfg.get("dataset.seed")?)?;
    let risk = RiskParams::new(lambda_for_rewards(cfg)?, &s.params)?;
    let ro = rollout_portfolio(&s.paths, &strat, &s.contract, &risk, &s.basis, cfg.get("solver.centering")?)?;
    let mut csv = rep.csv("rollout.csv", "path,t,S,X,a,Pi,B,R")?;
    for k in 0..s.paths.n_paths() {
        for t in 0..=s.paths.n_steps() {
            csv.row(&[
                k.into(),
                t.into(),
                s.paths.price(k, t).into(),
                s.paths.x(t)[k].into(),
                ro.actions[t][k].into(),
                ro.pi[t][k].into(),
                ro.bank[t][k].into(),
                ro.rewards[t][k].into(),
            ])?;
        }
    }
    csv.finish()?;
    let pi0 = &ro.pi[0];
    let mean = pi0.iter().sum::<f64>() / pi0.len() as f64;
    let mut out = Summary::default();
    out.s("strategy", policy)
        .f("fair_price", mean)
        .f("ask_price", ask_price(&ro, &risk))
        .f("self_financing_error", self_financing_error(&s.paths, &ro, &risk));
    Ok(out)
}

fn write_dp_reports(rep: &Reporter, s: &Setup, sol: &DpSolution, points: usize) -> Result<(), CliError> {
    let n_t = sol.n_steps();
    let mut coef = rep.csv("coefficients.csv", "t,n,phi,omega")?;
    for t in 0..=n_t {
        for n in 0..s.basis.len() {
            let phi = if t < n_t { sol.phi[t][n] } else { 0.0 };
            coef.row(&[t.into(), n.into(), phi.into(), sol.omega[t][n].into()])?;
        }
    }
    coef.finish()?;
    let mut surf = rep.csv("surface.csv", "t,s,x,price,hedge")?;
    let mut report = rep.csv("report.csv", "t,mean_price,mean_hedge")?;
    for t in 0..=n_t {
        let xs = surface_states(s.paths.x(t), t, points);
        let (price, hedge) = price_and_hedge_surface(sol, &xs, t)?;
        for i in 0..xs.len() {
            let spot = from_state(xs[i], s.params.time(t), &s.params);
            surf.row(&[t.into(), spot.into(), xs[i].into(), price[i].into(), hedge[i].into()])?;
        }
        let (price, hedge) = price_and_hedge_surface(sol, s.paths.x(t), t)?;
        let n = price.len() as f64;
        report.row(&[t.into(), (price.iter().sum::<f64>() / n).into(), (hedge.iter().sum::<f64>() / n).into()])?;
    }
    surf.finish()?;
    report.finish()
}

pub fn dp_solve(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    let params = market(cfg)?;
    let risk = positive_lambda(cfg, &params, "dp")?;
    let s = setup(cfg)?;
    let sol = solve_dp(&s.paths, &s.contract, &risk, &s.basis, &dp_config(cfg)?)?;
    write_dp_reports(rep, &s, &sol, cfg.get("report.surface_points")?)?;
    let centering = cfg.get("solver.centering")?;
    let ro = rollout_portfolio(&s.paths, &sol.strategy(), &s.contract, &risk, &s.basis, centering)?;
    let mut out = Summary::default();
    out.f("lambda", risk.lambda).f("price0", sol.price0).f("hedge0", sol.hedge0).f("ask_price", ask_price(&ro, &risk));
    let (bp, bd) = bs_reference(&s, &mut out)?;
    out.f("price_rel_error_vs_bs", (sol.price0 - bp) / bp).f("hedge_error_vs_bs", sol.hedge0 - bd);
    Ok(out)
}

fn build_dataset(cfg: &Config, s: &Setup) -> Result<(TransitionDataset, Policy), CliError> {
    let policy: Policy = cfg.get("dataset.policy")?;
    let lambda = lambda_for_rewards(cfg)?;
    let strat = strategy(cfg, s, policy, cfg.get("dataset.seed")?)?;
    let risk = RiskParams::new(lambda, &s.params)?;
    let ro = rollout_portfolio(&s.paths, &strat, &s.contract, &risk, &s.basis, cfg.get("solver.centering")?)?;
    Ok((TransitionDataset::from_rollout(&s.paths, &ro, &s.contract, lambda, &policy.to_string())?, policy))
}

pub fn make_dataset(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    let s = setup(cfg)?;
    let (data, policy) = build_dataset(cfg, &s)?;
    data.write_csv(std::io::BufWriter::new(File::create(rep.path("dataset.csv"))?))?;
    let recs = data.records();
    let mut out = Summary::default();
    out.s("policy", policy)
        .s("n_records", recs.len())
        .f("mean_action", recs.iter().map(|r| r.a).sum::<f64>() / recs.len() as f64)
        .f("mean_reward", recs.iter().map(|r| r.r).sum::<f64>() / recs.len() as f64);
    Ok(out)
}

pub fn fqi_solve(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    let (data, source) = match cfg.optional::<String>("fqi.dataset")? {
        Some(path) => {
            let f = File::open(&path).map_err(|e| CliError::Config(format!("cannot open dataset `{path}`: {e}")))?;
            (TransitionDataset::read_csv(BufReader::new(f))?, path)
        }
        None => {
            let s = setup(cfg)?;
            let (d, policy) = build_dataset(cfg, &s)?;
            (d, format!("generated:{policy}"))
        }
    };
    let paths = data.to_ensemble()?;
    let params = *paths.params();
    let risk = positive_lambda(cfg, &params, "fqi")?;
    let basis = basis(cfg, &paths.pooled_states())?;
    let fcfg = FqiConfig {
        centering: cfg.get("solver.centering")?,
        drift: cfg.get("solver.drift")?,
        rewards: cfg.get::<RewardSource>("fqi.rewards")?,
        actions: cfg.get::<ActionEstimator>("fqi.actions")?,
    };
    let sol = fqi_backward(&data, &basis, &risk, &fcfg)?;

    let n_t = data.n_steps();
    let mut coef = rep.csv("coefficients.csv", "t,n,w0,w1,w2,action")?;
    for t in 0..n_t {
        for n in 0..basis.len() {
            let w = &sol.w[t];
            coef.row(&[t.into(), n.into(), w[(0, n)].into(), w[(1, n)].into(), w[(2, n)].into(), sol.action_coeffs[t][n].into()])?;
        }
    }
    coef.finish()?;
    let points = cfg.get("report.surface_points")?;
    let mut surf = rep.csv("surface.csv", "t,s,x,price,hedge,curvature_identified")?;
    for t in 0..n_t {
        for x in surface_states(paths.x(t), t, points) {
            let (p, h) = extract_price_hedge(&sol, x, t)?;
            let spot = from_state(x, params.time(t), &params);
            let id = if sol.curvature_identified[t] { "1" } else { "0" };
            surf.row(&[t.into(), spot.into(), x.into(), p.into(), h.into(), id.into()])?;
        }
    }
    surf.finish()?;
    let (vp, vh) = extract_price_hedge(&sol, sol.x0, 0)?;
    let mut out = Summary::default();
    out.s("dataset", source)
        .s("dataset_policy", &data.header.policy)
        .s("rewards", fcfg.rewards)
        .f("lambda", risk.lambda)
        .f("price0", sol.price0)
        .f("hedge0", sol.hedge0)
        .f("surface_price0", vp)
        .f("surface_hedge0", vh)
        .s("curvature_identified_steps", sol.curvature_identified.iter().filter(|b| **b).count())
        .s("warnings", sol.warnings.len());
    for (i, w) in sol.warnings.iter().enumerate() {
        out.s(&format!("warning.{i}"), w);
    }
    Ok(out)
}

pub fn tabular_q(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    let contract = contract(cfg)?;
    let n_x: usize = cfg.get("tabular.n_x")?;
    let kind = cfg.raw("tabular.chain").to_string();
    let mut params = market(cfg)?;
    if kind == "lattice" {
        // The lattice keeps the market's step size over a shorter horizon.
        let n: usize = cfg.get("tabular.n_steps")?;
        params = MarketParams::new(params.s0, params.mu, params.sigma, params.r, params.dt() * n as f64, n)?;
    }
    let lambda: f64 = cfg.get("tabular.lambda")?;
    if !(lambda > 0.0) {
        return Err(CliError::Config(format!("the tabular solver requires tabular.lambda > 0 (got {lambda})")));
    }
    let risk = RiskParams::new(lambda, &params)?;
    let chain = match kind.as_str() {
        "lattice" => lattice_instance(&params, n_x)?.0,
        "simulated" => discretize_chain(&ensemble(cfg, &params)?, n_x)?,
        other => return Err(CliError::Config(format!("unknown tabular.chain `{other}`; use lattice or simulated"))),
    };
    let actions = action_grid(cfg.get("tabular.n_a")?, (cfg.get("tabular.a_min")?, cfg.get("tabular.a_max")?))?;
    let (mdp, sol) = qlbs_mdp(&chain, &contract, &risk, actions, cfg.get("solver.centering")?)?;
    let exact = exact_backward_induction(&mdp, ActionMax::Grid)?;
    let schedule = LearningRate::Harmonic { alpha0: cfg.get("tabular.alpha0")?, k0: cfg.get("tabular.k0")? };
    let learned = q_learn(&mdp, &schedule, cfg.get("tabular.updates")?, cfg.get("tabular.seed")?)?;
    for (name, table) in [("qtable.csv", &learned), ("qtable_exact.csv", &exact)] {
        let mut w = rep.stamped(name)?;
        table.write_csv(&mut w)?;
        std::io::Write::flush(&mut w)?;
    }
    let x0 = chain.x0_state;
    let scale = exact.scale();
    let err = learned.sup_distance(&exact, false);
    let mut out = Summary::default();
    out.s("chain", kind)
        .s("n_states", chain.n_states())
        .s("n_actions", mdp.actions.len())
        .f("price0", -sol.value[0][x0])
        .f("hedge0", sol.hedge[0][x0])
        .f("grid_hedge0", mdp.actions[exact.greedy(0, x0)])
        .f("learned_hedge0", mdp.actions[learned.greedy(0, x0)])
        .f("q_scale", scale)
        .f("sup_error", err)
        .f("sup_error_rel", if scale > 0.0 { err / scale } else { 0.0 });
    Ok(out)
}

pub fn utility_price(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    // Indifference prices are expectations under the pricing measure, so
    // simulated paths use the risk-free drift.
    let mut q_cfg = cfg.clone();
    let r = cfg.raw("market.r").to_string();
    q_cfg.set("market.mu", &r)?;
    let s = setup(&q_cfg)?;
    let up = UtilityParams {
        gamma: cfg.get("utility.gamma")?,
        order: cfg.get("utility.order")?,
        method: cfg.get::<UtilityMethod>("utility.method")?,
    };
    let res = indifference_price_recursion(&s.paths, &s.contract, &s.basis, &up)?;
    let mut coef = rep.csv("hedge_coefficients.csv", "t,n,u")?;
    for (t, c) in res.hedge.iter().enumerate() {
        for (n, v) in c.iter().enumerate() {
            coef.row(&[t.into(), n.into(), (*v).into()])?;
        }
    }
    coef.finish()?;
    let mut report = rep.csv("report.csv", "t,mean_price")?;
    for (t, h) in res.h.iter().enumerate() {
        report.row(&[t.into(), (h.iter().sum::<f64>() / h.len() as f64).into()])?;
    }
    report.finish()?;
    let mut out = Summary::default();
    out.f("gamma", up.gamma).s("order", up.order).s("method", up.method).f("price0", res.price0).f("hedge0", res.hedge0);
    bs_reference(&s, &mut out)?;
    Ok(out)
}

pub fn bs_quote_cmd(cfg: &Config, _rep: &Reporter) -> Result<Summary, CliError> {
    let p = market(cfg)?;
    let c = contract(cfg)?;
    let q = bs_quote(p.s0, &c, p.maturity, p.r, p.sigma)?;
    let mut out = Summary::default();
    out.f("price", q.price).f("delta", q.delta);
    Ok(out)
}

pub fn compare(cfg: &Config, rep: &Reporter) -> Result<Summary, CliError> {
    let params = market(cfg)?;
    let risk = positive_lambda(cfg, &params, "dp")?;
    let contract = contract(cfg)?;
    let sizes: Vec<usize> = cfg
        .raw("compare.n_paths")
        .split(',')
        .map(|v| v.trim().parse().map_err(|e| CliError::Config(format!("compare.n_paths `{v}`: {e}"))))
        .collect::<Result<_, _>>()?;
    if sizes.is_empty() {
        return Err(CliError::Config("compare.n_paths lists no path counts".into()));
    }
    let q = bs_quote(params.s0, &contract, params.maturity, params.r, params.sigma)?;
    let seed: u64 = cfg.get("mc.seed")?;
    let mut csv = rep.csv("compare.csv", "n_paths,price0,hedge0,bs_price,bs_delta,price_rel_error,hedge_error")?;
    let mut table = String::from("n_paths    price0        hedge0        rel_err      hedge_err\n");
    for &n in &sizes {
        let paths = simulate_gbm(&params, n, seed)?;
        let b = basis(cfg, &paths.pooled_states())?;
        let sol = solve_dp(&paths, &contract, &risk, &b, &dp_config(cfg)?)?;
        let rel = (sol.price0 - q.price) / q.price;
        let herr = sol.hedge0 - q.delta;
        csv.row(&[n.into(), sol.price0.into(), sol.hedge0.into(), q.price.into(), q.delta.into(), rel.into(), herr.into()])?;
        table.push_str(&format!("{n:<10} {:<13.6} {:<13.6} {:<12.4e} {:.4e}\n", sol.price0, sol.hedge0, rel, herr));
    }
    csv.finish()?;
    rep.write_text("compare_table.txt", &table)?;
    print!("{table}");
    let mut out = Summary::default();
    out.f("bs_price", q.price).f("bs_delta", q.delta).s("rows", sizes.len());
    Ok(out)
}
