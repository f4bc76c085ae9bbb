//! Backward dynamic programming for the risk-adjusted hedging MDP.
//!
//! At each step the optimal hedge coefficients `phi_t` solve
//!
//! ```text
//! (sum_k Phi_k Phi_k^T dS_hat_k^2) phi_t = sum_k Phi_k [dS_hat_k Pi_hat_k + D_k / (2 gamma lambda)]
//! ```
//!
//! where `D_k` is the drift term (see [`DriftTerm`]), and the optimal
//! Q-function coefficients `omega_t` regress `R_t + gamma Q_{t+1}` on the
//! basis. The terminal condition is `Q_T = -Pi_T - lambda Var[Pi_T | X_T]`,
//! used path by path.

use nalgebra::DVector;
use std::fmt;
use std::str::FromStr;

use crate::basis::{BasisSet, Design};
use crate::error::{QlbsError, Result};
use crate::linalg;
use crate::market::{OptionContract, PathEnsemble};
use crate::portfolio::{self, Centerer, Centering, HedgeStrategy, RiskParams};

/// Source of the expected-increment term in the hedge equation.
///
/// The term is scaled by `1/(2 gamma lambda)`, so for small `lambda` the raw
/// sample increments inject noise of that magnitude into the hedge. With a
/// known model, the conditional mean `S_t (e^{mu dt} - e^{r dt})` carries the
/// same information without the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftTerm {
    /// Realised `dS_t` of each path.
    Sample,
    /// Model-implied `E[dS_t | S_t]`.
    #[default]
    Model,
}

impl FromStr for DriftTerm {
    type Err = QlbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(DriftTerm::Sample),
            "model" => Ok(DriftTerm::Model),
            _ => Err(QlbsError::invalid("solver.drift", format!("unknown drift term `{s}`"))),
        }
    }
}

impl fmt::Display for DriftTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriftTerm::Sample => "sample",
            DriftTerm::Model => "model",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DpConfig {
    pub centering: Centering,
    pub drift: DriftTerm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub basis: BasisSet,
    /// Hedge coefficients for `t = 0..T`.
    pub phi: Vec<DVector<f64>>,
    /// Q-function coefficients for `t = 0..=T`.
    pub omega: Vec<DVector<f64>>,
    pub price0: f64,
    pub hedge0: f64,
    pub x0: f64,
}

impl DpSolution {
    pub fn strategy(&self) -> HedgeStrategy {
        HedgeStrategy::Basis { basis: self.basis.clone(), coeffs: self.phi.clone() }
    }

    pub fn n_steps(&self) -> usize {
        self.phi.len()
    }
}

pub(crate) fn drift_values(paths: &PathEnsemble, t: usize, ds: &[f64], drift: DriftTerm) -> Vec<f64> {
    match drift {
        DriftTerm::Sample => ds.to_vec(),
        DriftTerm::Model => paths.expected_delta_s(t),
    }
}

/// Solve the hedge normal equations from per-sample quantities.
pub(crate) fn action_coeffs_from_samples(
    design: &Design,
    ds_hat: &[f64],
    pi_hat: &[f64],
    drift: &[f64],
    risk: &RiskParams,
    t: usize,
    module: &'static str,
) -> Result<DVector<f64>> {
    if !(risk.lambda > 0.0) {
        return Err(QlbsError::invalid(
            "risk.lambda",
            "the risk-adjusted hedge needs lambda > 0; use the local-risk hedge for lambda = 0",
        ));
    }
    let scale = 1.0 / (2.0 * risk.gamma * risk.lambda);
    let w: Vec<f64> = ds_hat.iter().map(|d| d * d).collect();
    let a = linalg::weighted_gram(design, Some(&w));
    let y: Vec<f64> = (0..ds_hat.len()).map(|k| ds_hat[k] * pi_hat[k] + scale * drift[k]).collect();
    let b = linalg::design_t_times(design, &y);
    linalg::ridge_solve(&a, &b, module, Some(t))
}

/// Optimal hedge coefficients at step `t` given `Pi_{t+1}` on every path.
pub fn optimal_action_coeffs(
    paths: &PathEnsemble,
    pi_next: &[f64],
    basis: &BasisSet,
    risk: &RiskParams,
    t: usize,
    cfg: &DpConfig,
) -> Result<DVector<f64>> {
    let design = basis.evaluate(paths.x(t));
    let centerer = Centerer::new(&design, cfg.centering, "dp_solver", t);
    let sd = portfolio::step_data(paths, t, pi_next, &centerer)?;
    let drift = drift_values(paths, t, &sd.ds, cfg.drift);
    action_coeffs_from_samples(&design, &sd.ds_hat, &sd.pi_hat, &drift, risk, t, "dp_solver")
}

/// Regress Bellman targets `R_t + gamma Q_{t+1}` on the basis.
pub fn optimal_q_coeffs(design: &Design, targets: &[f64], t: usize) -> Result<DVector<f64>> {
    if design.rows() != targets.len() {
        return Err(QlbsError::shape("dp_solver", "targets do not match design rows"));
    }
    let c = linalg::weighted_gram(design, None);
    let d = linalg::design_t_times(design, targets);
    linalg::ridge_solve(&c, &d, "dp_solver", Some(t))
}

fn check_finite(v: &[f64], t: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(QlbsError::NonFinite { module: "dp_solver", t: Some(t), condition: format!("{what} is not finite") })
    }
}

pub fn solve_dp(
    paths: &PathEnsemble,
    contract: &OptionContract,
    risk: &RiskParams,
    basis: &BasisSet,
    cfg: &DpConfig,
) -> Result<DpSolution> {
    contract.validate()?;
    if !(risk.lambda > 0.0) {
        return Err(QlbsError::invalid(
            "risk.lambda",
            "the risk-adjusted hedge needs lambda > 0; use the local-risk hedge for lambda = 0",
        ));
    }
    let n_t = paths.n_steps();
    let n = paths.n_paths();
    let g = risk.gamma;

    let mut pi: Vec<f64> = paths.s(n_t).iter().map(|&s| contract.payoff(s)).collect();
    let design_t = basis.evaluate(paths.x(n_t));
    let var_t = portfolio::terminal_variance(&pi, &design_t, cfg.centering)?;
    // Raw per-path terminal values feed the step T-1 regression.
    let mut q_next: Vec<f64> = pi.iter().zip(&var_t).map(|(p, v)| -p - risk.lambda * v).collect();
    let mut omega = vec![DVector::zeros(basis.len()); n_t + 1];
    omega[n_t] = optimal_q_coeffs(&design_t, &q_next, n_t)?;
    let mut phi = vec![DVector::zeros(basis.len()); n_t];

    for t in (0..n_t).rev() {
        let design = basis.evaluate(paths.x(t));
        let centerer = Centerer::new(&design, cfg.centering, "dp_solver", t);
        let sd = portfolio::step_data(paths, t, &pi, &centerer)?;
        let drift = drift_values(paths, t, &sd.ds, cfg.drift);
        let phi_t = action_coeffs_from_samples(&design, &sd.ds_hat, &sd.pi_hat, &drift, risk, t, "dp_solver")?;
        let a = linalg::fitted(&design, &phi_t);
        check_finite(&a, t, "hedge")?;

        let targets: Vec<f64> = (0..n)
            .map(|k| portfolio::reward(sd.ds[k], sd.ds_hat[k], sd.pi_hat[k], a[k], risk) + g * q_next[k])
            .collect();
        let omega_t = optimal_q_coeffs(&design, &targets, t)?;
        q_next = linalg::fitted(&design, &omega_t);
        check_finite(&q_next, t, "Q-function")?;
        pi = (0..n).map(|k| g * (pi[k] - a[k] * sd.ds[k])).collect();
        phi[t] = phi_t;
        omega[t] = omega_t;
    }

    let x0 = linalg::mean(paths.x(0));
    let phi0 = basis.eval(x0);
    let price0 = -linalg::dot_row(&phi0, &omega[0]);
    let hedge0 = linalg::dot_row(&phi0, &phi[0]);
    Ok(DpSolution { basis: basis.clone(), phi, omega, price0, hedge0, x0 })
}

/// Price `-Q*_t(x, a*)` and hedge `a*_t(x)` at arbitrary states.
pub fn price_and_hedge_surface(sol: &DpSolution, states: &[f64], t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if t > sol.n_steps() {
        return Err(QlbsError::invalid("t", format!("step {t} beyond maturity {}", sol.n_steps())));
    }
    let mut phi = vec![0.0; sol.basis.len()];
    let mut price = Vec::with_capacity(states.len());
    let mut hedge = Vec::with_capacity(states.len());
    for &x in states {
        sol.basis.eval_into(x, &mut phi);
        price.push(-linalg::dot_row(&phi, &sol.omega[t]));
        hedge.push(if t < sol.n_steps() { linalg::dot_row(&phi, &sol.phi[t]) } else { 0.0 });
    }
    Ok((price, hedge))
}
