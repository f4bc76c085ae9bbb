//! Hedge portfolio accounting along simulated paths.
//!
//! A hedge holds `u_t` units of stock and a bank account `B_t`; the portfolio
//! value is `Pi_t = u_t S_t + B_t`. Working backwards from `Pi_T = H(S_T)`:
//!
//! ```text
//! Pi_t = gamma (Pi_{t+1} - u_t dS_t),        dS_t = S_{t+1} - e^{r dt} S_t
//! B_t  = gamma (B_{t+1} + (u_{t+1} - u_t) S_{t+1})
//! ```
//!
//! Hatted quantities are deviations from a mean taken over the time-`t`
//! cross-section, either the plain sample mean or a regression estimate of
//! the conditional mean given `X_t`. Variances use the 1/N normalisation.

use nalgebra::DVector;
use std::fmt;
use std::str::FromStr;

use crate::basis::{BasisSet, Design};
use crate::error::{QlbsError, Result};
use crate::linalg::{self, Projector};
use crate::market::{MarketParams, OptionContract, PathEnsemble};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskParams {
    /// Risk aversion.
    pub lambda: f64,
    /// One-step discount factor `exp(-r dt)`.
    pub gamma: f64,
}

impl RiskParams {
    pub fn new(lambda: f64, params: &MarketParams) -> Result<Self> {
        Self::with_gamma(lambda, params.gamma())
    }

    pub fn with_gamma(lambda: f64, gamma: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(QlbsError::invalid("risk.lambda", "risk aversion must be non-negative"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(QlbsError::invalid("gamma", "discount factor must be positive"));
        }
        Ok(RiskParams { lambda, gamma })
    }
}

/// How cross-sectional means are taken when forming hatted quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// Plain sample mean over all paths.
    CrossSectional,
    /// Regression estimate of `E[. | X_t]` on the solver's basis.
    #[default]
    Conditional,
}

impl FromStr for Centering {
    type Err = QlbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_sectional" | "global" => Ok(Centering::CrossSectional),
            "conditional" => Ok(Centering::Conditional),
            _ => Err(QlbsError::invalid("solver.centering", format!("unknown centering `{s}`"))),
        }
    }
}

impl fmt::Display for Centering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Centering::CrossSectional => "cross_sectional",
            Centering::Conditional => "conditional",
        })
    }
}

/// Centres values on the time-`t` information set.
pub(crate) struct Centerer<'a> {
    projector: Option<Projector<'a>>,
}

impl<'a> Centerer<'a> {
    pub fn new(design: &'a Design, centering: Centering, module: &'static str, t: usize) -> Self {
        let projector = match centering {
            Centering::CrossSectional => None,
            Centering::Conditional => Some(Projector::new(design, module, Some(t))),
        };
        Centerer { projector }
    }

    pub fn mean(&self, y: &[f64]) -> Result<Vec<f64>> {
        match &self.projector {
            None => Ok(vec![linalg::mean(y); y.len()]),
            Some(p) => p.fit(y),
        }
    }

    pub fn center(&self, y: &[f64]) -> Result<Vec<f64>> {
        let m = self.mean(y)?;
        Ok(y.iter().zip(&m).map(|(a, b)| a - b).collect())
    }
}

/// A hedging rule: units of stock held at each step before maturity.
#[derive(Debug, Clone, PartialEq)]
pub enum HedgeStrategy {
    Zero,
    Constant(f64),
    /// `u_t(X) = coeffs[t]^T Phi(X)`, one coefficient vector per step.
    Basis { basis: BasisSet, coeffs: Vec<DVector<f64>> },
    /// Explicit actions indexed `[t][path]`.
    Recorded(Vec<Vec<f64>>),
}

impl HedgeStrategy {
    pub fn actions(&self, paths: &PathEnsemble, t: usize) -> Result<Vec<f64>> {
        let n = paths.n_paths();
        if t >= paths.n_steps() {
            return Ok(vec![0.0; n]);
        }
        match self {
            HedgeStrategy::Zero => Ok(vec![0.0; n]),
            HedgeStrategy::Constant(c) => Ok(vec![*c; n]),
            HedgeStrategy::Basis { basis, coeffs } => {
                let beta = coeffs.get(t).ok_or_else(|| {
                    QlbsError::shape("portfolio", format!("strategy has {} steps, asked for step {t}", coeffs.len()))
                })?;
                if beta.len() != basis.len() {
                    return Err(QlbsError::shape("portfolio", "coefficient length differs from basis size"));
                }
                let mut phi = vec![0.0; basis.len()];
                Ok(paths
                    .x(t)
                    .iter()
                    .map(|&x| {
                        basis.eval_into(x, &mut phi);
                        linalg::dot_row(&phi, beta)
                    })
                    .collect())
            }
            HedgeStrategy::Recorded(a) => {
                let row = a.get(t).ok_or_else(|| QlbsError::shape("portfolio", format!("no recorded actions at step {t}")))?;
                if row.len() != n {
                    return Err(QlbsError::shape("portfolio", format!("{} recorded actions for {n} paths", row.len())));
                }
                Ok(row.clone())
            }
        }
    }
}

/// Per-path accounting of one hedge strategy, every vector indexed `[t][path]`
/// for `t = 0..=T`. Actions at `T` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioRollout {
    pub pi: Vec<Vec<f64>>,
    pub bank: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<Vec<f64>>,
    /// Per-path variance contributions; their cross-sectional mean at `t`
    /// estimates `Var[Pi_t | X_t]`.
    pub risk: Vec<Vec<f64>>,
}

/// One-step reward for a single sample:
/// `gamma a dS - lambda gamma^2 (pi_hat_next - a dS_hat)^2`.
pub fn reward(ds: f64, ds_hat: f64, pi_hat_next: f64, a: f64, risk: &RiskParams) -> f64 {
    let e = pi_hat_next - a * ds_hat;
    risk.gamma * a * ds - risk.lambda * risk.gamma * risk.gamma * e * e
}

/// Cross-sectional quantities for step `t` given `Pi_{t+1}`.
pub(crate) struct StepData {
    pub ds: Vec<f64>,
    pub ds_hat: Vec<f64>,
    pub pi_hat: Vec<f64>,
}

pub(crate) fn step_data(paths: &PathEnsemble, t: usize, pi_next: &[f64], centerer: &Centerer) -> Result<StepData> {
    let mut ds = paths.delta_s(t);
    let mut ds_hat = centerer.center(&ds)?;
    // Increments at rounding level relative to the price carry no risk to
    // hedge; left alone they turn the hedge ratio into noise over noise.
    let level = paths.s(t + 1).iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let floor = 1e-12 * level;
    if ds.iter().chain(&ds_hat).all(|d| d.abs() <= floor) {
        ds.iter_mut().for_each(|d| *d = 0.0);
        ds_hat.iter_mut().for_each(|d| *d = 0.0);
    }
    let pi_hat = centerer.center(pi_next)?;
    Ok(StepData { ds, ds_hat, pi_hat })
}

/// Per-path estimate of `Var[Pi_T | X_T]`: regressions of `Pi` and `Pi^2`,
/// floored at zero.
pub fn terminal_variance(pi_t: &[f64], design: &Design, centering: Centering) -> Result<Vec<f64>> {
    let c = Centerer::new(design, centering, "portfolio", usize::MAX);
    let m1 = c.mean(pi_t)?;
    let sq: Vec<f64> = pi_t.iter().map(|v| v * v).collect();
    let m2 = c.mean(&sq)?;
    Ok(m1.iter().zip(&m2).map(|(a, b)| (b - a * a).max(0.0)).collect())
}

/// Roll a hedge strategy backwards along every path.
///
/// `basis` defines the conditioning used for centring and for the terminal
/// variance; with `Centering::CrossSectional` it is not consulted.
pub fn rollout_portfolio(
    paths: &PathEnsemble,
    strategy: &HedgeStrategy,
    contract: &OptionContract,
    risk: &RiskParams,
    basis: &BasisSet,
    centering: Centering,
) -> Result<PortfolioRollout> {
    contract.validate()?;
    let n_t = paths.n_steps();
    let n = paths.n_paths();
    let mut pi = vec![Vec::new(); n_t + 1];
    let mut bank = vec![Vec::new(); n_t + 1];
    let mut actions = vec![vec![0.0; n]; n_t + 1];
    let mut rewards = vec![Vec::new(); n_t + 1];
    let mut risk_terms = vec![Vec::new(); n_t + 1];

    let payoff: Vec<f64> = paths.s(n_t).iter().map(|&s| contract.payoff(s)).collect();
    let design_t = basis.evaluate(paths.x(n_t));
    let var_t = terminal_variance(&payoff, &design_t, centering)?;
    rewards[n_t] = var_t.iter().map(|v| -risk.lambda * v).collect();
    risk_terms[n_t] = var_t;
    pi[n_t] = payoff.clone();
    bank[n_t] = payoff;

    let g = risk.gamma;
    for t in (0..n_t).rev() {
        let a = strategy.actions(paths, t)?;
        let design = basis.evaluate(paths.x(t));
        let centerer = Centerer::new(&design, centering, "portfolio", t);
        let sd = step_data(paths, t, &pi[t + 1], &centerer)?;
        let s_next = paths.s(t + 1);
        let pi_t: Vec<f64> = (0..n).map(|k| g * (pi[t + 1][k] - a[k] * sd.ds[k])).collect();
        let bank_t: Vec<f64> = (0..n)
            .map(|k| g * (bank[t + 1][k] + (actions[t + 1][k] - a[k]) * s_next[k]))
            .collect();
        let mut rew = Vec::with_capacity(n);
        let mut rsk = Vec::with_capacity(n);
        for k in 0..n {
            let e = sd.pi_hat[k] - a[k] * sd.ds_hat[k];
            let r2 = g * g * e * e;
            rsk.push(r2);
            rew.push(g * a[k] * sd.ds[k] - risk.lambda * r2);
        }
        if pi_t.iter().any(|v| !v.is_finite()) {
            return Err(QlbsError::NonFinite {
                module: "portfolio",
                t: Some(t),
                condition: "portfolio value overflowed".into(),
            });
        }
        pi[t] = pi_t;
        bank[t] = bank_t;
        actions[t] = a;
        rewards[t] = rew;
        risk_terms[t] = rsk;
    }
    Ok(PortfolioRollout { pi, bank, actions, rewards, risk: risk_terms })
}

/// `mean(Pi_0) + lambda * sum_t gamma^t mean(risk_t)`.
pub fn ask_price(rollout: &PortfolioRollout, risk: &RiskParams) -> f64 {
    let mut total = linalg::mean(&rollout.pi[0]);
    let mut disc = 1.0;
    for r in &rollout.risk {
        total += risk.lambda * disc * linalg::mean(r);
        disc *= risk.gamma;
    }
    total
}

/// Largest relative violation of the accounting identities
/// `Pi_t = u_t S_t + B_t` and `u_t S_{t+1} + e^{r dt} B_t = u_{t+1} S_{t+1} + B_{t+1}`.
pub fn self_financing_error(paths: &PathEnsemble, rollout: &PortfolioRollout, risk: &RiskParams) -> f64 {
    let mut worst: f64 = 0.0;
    for t in 0..=paths.n_steps() {
        let s = paths.s(t);
        for k in 0..paths.n_paths() {
            let u = rollout.actions[t][k];
            let b = rollout.bank[t][k];
            let value = u * s[k] + b;
            let scale = 1.0_f64.max(rollout.pi[t][k].abs()).max((u * s[k]).abs());
            worst = worst.max((rollout.pi[t][k] - value).abs() / scale);
            if t < paths.n_steps() {
                let sn = paths.price(k, t + 1);
                let lhs = u * sn + b / risk.gamma;
                let rhs = rollout.actions[t + 1][k] * sn + rollout.bank[t + 1][k];
                let scale = 1.0_f64.max(lhs.abs()).max((u * sn).abs());
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
    }
    worst
}

/// Weights `w_k = (1/N) [1 - (dS_k - m) m / v]` of the signed measure that
/// absorbs the optimal one-step hedge into the expectation.
pub fn signed_measure_weights(paths: &PathEnsemble, t: usize) -> Result<Vec<f64>> {
    if t >= paths.n_steps() {
        return Err(QlbsError::invalid("t", "weights are defined for t < T"));
    }
    weights_from_increments(&paths.delta_s(t))
}

pub fn weights_from_increments(ds: &[f64]) -> Result<Vec<f64>> {
    let n = ds.len() as f64;
    let m = linalg::mean(ds);
    let v = linalg::variance(ds);
    if v == 0.0 {
        if m == 0.0 {
            return Ok(vec![1.0 / n; ds.len()]);
        }
        return Err(QlbsError::degenerate("portfolio", None, "increments have zero variance and non-zero mean"));
    }
    Ok(ds.iter().map(|d| (1.0 - (d - m) * m / v) / n).collect())
}

/// Sample local-risk hedge `Cov(Pi_{t+1}, dS) / Var(dS)` on one cross-section.
pub fn sample_local_hedge(ds: &[f64], pi_next: &[f64]) -> Result<f64> {
    let m = linalg::mean(ds);
    let p = linalg::mean(pi_next);
    let v = linalg::variance(ds);
    if v == 0.0 {
        return Err(QlbsError::degenerate("portfolio", None, "increments have zero variance"));
    }
    let cov = linalg::mean(&ds.iter().zip(pi_next).map(|(d, q)| (d - m) * (q - p)).collect::<Vec<_>>());
    Ok(cov / v)
}

/// Local-risk hedge coefficients at step `t`:
/// `(sum Phi Phi^T dS_hat^2) phi = sum Phi Pi_hat_{t+1} dS_hat`.
pub fn local_risk_hedge(
    paths: &PathEnsemble,
    pi_next: &[f64],
    t: usize,
    basis: &BasisSet,
    centering: Centering,
) -> Result<DVector<f64>> {
    if pi_next.len() != paths.n_paths() {
        return Err(QlbsError::shape("portfolio", "portfolio values do not match path count"));
    }
    let design = basis.evaluate(paths.x(t));
    let centerer = Centerer::new(&design, centering, "portfolio", t);
    let sd = step_data(paths, t, pi_next, &centerer)?;
    let w: Vec<f64> = sd.ds_hat.iter().map(|d| d * d).collect();
    let a = linalg::weighted_gram(&design, Some(&w));
    let y: Vec<f64> = sd.pi_hat.iter().zip(&sd.ds_hat).map(|(p, d)| p * d).collect();
    let b = linalg::design_t_times(&design, &y);
    linalg::ridge_solve(&a, &b, "portfolio", Some(t))
}

/// Backward pass producing the full local-risk (variance-minimising) strategy.
pub fn local_risk_strategy(
    paths: &PathEnsemble,
    contract: &OptionContract,
    basis: &BasisSet,
    centering: Centering,
) -> Result<HedgeStrategy> {
    let n_t = paths.n_steps();
    let g = paths.params().gamma();
    let mut pi: Vec<f64> = paths.s(n_t).iter().map(|&s| contract.payoff(s)).collect();
    let mut coeffs = vec![DVector::zeros(basis.len()); n_t];
    for t in (0..n_t).rev() {
        let phi = local_risk_hedge(paths, &pi, t, basis, centering)?;
        let design = basis.evaluate(paths.x(t));
        let a = linalg::fitted(&design, &phi);
        let ds = paths.delta_s(t);
        pi = (0..pi.len()).map(|k| g * (pi[k] - a[k] * ds[k])).collect();
        coeffs[t] = phi;
    }
    Ok(HedgeStrategy::Basis { basis: basis.clone(), coeffs })
}
