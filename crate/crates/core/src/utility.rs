//! Exponential-utility indifference prices and hedges.
//!
//! With risk aversion `g`, the one-step seller price solves
//! `h_t = (1/g) log E^Q[exp(g (h_{t+1} - u dS_t))]` minimised over the hedge
//! `u`. Small-`g` expansions give
//!
//! ```text
//! u  = u0 + g u1,   u0 = Cov(h, dS) / Var(dS),   u1 = E[dS h~^2] / (2 Var(dS))
//! h  = E[h~] + g/2 Var(h~) + g^2/6 E[(h~ - E h~)^3],   h~ = h_{t+1} - u0 dS
//! ```
//!
//! Conditional expectations are regressions on a basis of `X_t`. Increments
//! are centred on their regression mean before use, so the sample is a
//! martingale on every basis direction and the expansions above are exact
//! Taylor expansions of the sample problem.

use nalgebra::DVector;
use std::fmt;
use std::str::FromStr;

use crate::basis::{BasisSet, Design};
use crate::error::{QlbsError, Result};
use crate::linalg::{self, Projector};
use crate::market::{OptionContract, PathEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UtilityMethod {
    #[default]
    Expansion,
    /// Exact log-expectation with the hedge found by Newton's method.
    Numeric,
}

impl FromStr for UtilityMethod {
    type Err = QlbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expansion" => Ok(UtilityMethod::Expansion),
            "numeric" | "exact" => Ok(UtilityMethod::Numeric),
            _ => Err(QlbsError::invalid("utility.method", format!("unknown method `{s}`"))),
        }
    }
}

impl fmt::Display for UtilityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UtilityMethod::Expansion => "expansion",
            UtilityMethod::Numeric => "numeric",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityParams {
    /// Risk aversion.
    pub gamma: f64,
    /// Number of moments beyond the mean kept by the expansion (0, 1 or 2).
    pub order: usize,
    pub method: UtilityMethod,
}

impl UtilityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(QlbsError::invalid("utility.gamma", "risk aversion must be non-negative"));
        }
        if self.order > 2 {
            return Err(QlbsError::invalid("utility.order", "expansion order must be 0, 1 or 2"));
        }
        if self.method == UtilityMethod::Numeric && self.gamma == 0.0 {
            return Err(QlbsError::invalid("utility.gamma", "the numeric method needs a positive risk aversion"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedgeExpansion {
    pub u0: DVector<f64>,
    pub u1: DVector<f64>,
}

impl HedgeExpansion {
    pub fn coeffs(&self, gamma: f64) -> DVector<f64> {
        &self.u0 + gamma * &self.u1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndifferenceResult {
    /// Price per path, `[t][path]` for `t = 0..=T`.
    pub h: Vec<Vec<f64>>,
    /// Hedge coefficients for `t = 0..T`.
    pub hedge: Vec<DVector<f64>>,
    pub price0: f64,
    pub hedge0: f64,
}

struct Step {
    design: Design,
    ds: Vec<f64>,
}

fn step(paths: &PathEnsemble, t: usize, basis: &BasisSet) -> Result<Step> {
    let design = basis.evaluate(paths.x(t));
    let ds = Projector::new(&design, "exp_utility", Some(t)).residual(&paths.delta_s(t))?;
    Ok(Step { design, ds })
}

fn expansion_on(step: &Step, h_next: &[f64], t: usize) -> Result<HedgeExpansion> {
    let w: Vec<f64> = step.ds.iter().map(|d| d * d).collect();
    let a = linalg::weighted_gram(&step.design, Some(&w));
    let y: Vec<f64> = step.ds.iter().zip(h_next).map(|(d, h)| d * h).collect();
    let u0 = linalg::pinv_solve(&a, &linalg::design_t_times(&step.design, &y), "exp_utility", Some(t))?;
    let u0_path = linalg::fitted(&step.design, &u0);
    let y1: Vec<f64> = (0..h_next.len())
        .map(|k| {
            let r = h_next[k] - u0_path[k] * step.ds[k];
            0.5 * step.ds[k] * r * r
        })
        .collect();
    let u1 = linalg::pinv_solve(&a, &linalg::design_t_times(&step.design, &y1), "exp_utility", Some(t))?;
    Ok(HedgeExpansion { u0, u1 })
}

/// First two terms of the small-risk-aversion hedge at step `t`.
pub fn hedge_expansion(q_paths: &PathEnsemble, h_next: &[f64], t: usize, basis: &BasisSet) -> Result<HedgeExpansion> {
    check_len(q_paths, h_next)?;
    expansion_on(&step(q_paths, t, basis)?, h_next, t)
}

fn check_len(paths: &PathEnsemble, h: &[f64]) -> Result<()> {
    if h.len() != paths.n_paths() {
        return Err(QlbsError::shape("exp_utility", format!("{} values for {} paths", h.len(), paths.n_paths())));
    }
    Ok(())
}

const NEWTON_TOL: f64 = 1e-12;

fn newton_on(step: &Step, h_next: &[f64], gamma: f64, start: DVector<f64>, t: usize) -> Result<DVector<f64>> {
    let n = h_next.len();
    let exponent = |theta: &DVector<f64>| -> Vec<f64> {
        let u = linalg::fitted(&step.design, theta);
        (0..n).map(|k| gamma * (h_next[k] - u[k] * step.ds[k])).collect()
    };
    let objective = |e: &[f64], shift: f64| e.iter().map(|v| (v - shift).exp()).sum::<f64>();
    let mut theta = start;
    for _ in 0..100 {
        let e = exponent(&theta);
        let shift = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let wts: Vec<f64> = e.iter().map(|v| (v - shift).exp()).collect();
        let hw: Vec<f64> = (0..n).map(|k| gamma * gamma * step.ds[k] * step.ds[k] * wts[k]).collect();
        let hess = linalg::weighted_gram(&step.design, Some(&hw));
        let gy: Vec<f64> = (0..n).map(|k| gamma * step.ds[k] * wts[k]).collect();
        // Gradient of the objective is -Phi^T gy; Newton step solves H d = Phi^T gy.
        let rhs = linalg::design_t_times(&step.design, &gy);
        let delta = linalg::pinv_solve(&hess, &rhs, "exp_utility", Some(t))?;
        let f0 = objective(&e, shift);
        // Newton decrement relative to the objective; scale free.
        let decrement = rhs.dot(&delta) / f0;
        if decrement <= NEWTON_TOL * NEWTON_TOL {
            return Ok(&theta + &delta);
        }
        let mut s = 1.0;
        let mut next = &theta + &delta;
        while objective(&exponent(&next), shift) > f0 && s > 1e-8 {
            s *= 0.5;
            next = &theta + s * &delta;
        }
        if s <= 1e-8 {
            // No decrease is representable: rounding limits further progress.
            if decrement <= NEWTON_TOL {
                return Ok(theta);
            }
            break;
        }
        theta = next;
    }
    Err(QlbsError::NoConvergence {
        module: "exp_utility",
        t: Some(t),
        condition: "Newton iteration for the utility hedge".into(),
    })
}

/// Hedge minimising the sample exponential objective over the basis span.
pub fn numeric_hedge(q_paths: &PathEnsemble, h_next: &[f64], t: usize, basis: &BasisSet, gamma: f64) -> Result<DVector<f64>> {
    check_len(q_paths, h_next)?;
    if !(gamma > 0.0) {
        return Err(QlbsError::invalid("utility.gamma", "the numeric hedge needs a positive risk aversion"));
    }
    let st = step(q_paths, t, basis)?;
    let start = expansion_on(&st, h_next, t)?.coeffs(gamma);
    newton_on(&st, h_next, gamma, start, t)
}

pub fn indifference_price_recursion(
    q_paths: &PathEnsemble,
    contract: &OptionContract,
    basis: &BasisSet,
    params: &UtilityParams,
) -> Result<IndifferenceResult> {
    params.validate()?;
    contract.validate()?;
    let n_t = q_paths.n_steps();
    let disc = q_paths.params().gamma();
    let g = params.gamma;
    let mut h = vec![Vec::new(); n_t + 1];
    h[n_t] = q_paths.s(n_t).iter().map(|&s| contract.payoff(s)).collect();
    let mut hedge = vec![DVector::zeros(basis.len()); n_t];

    for t in (0..n_t).rev() {
        let st = step(q_paths, t, basis)?;
        let proj = Projector::new(&st.design, "exp_utility", Some(t));
        let exp = expansion_on(&st, &h[t + 1], t)?;
        // Both methods split the one-step value into the regression mean
        // `m1` of `y = h_{t+1} - u dS` and a risk term in the residual
        // `c = y - m1`, so they agree order by order in `g`.
        let coeffs = match params.method {
            UtilityMethod::Expansion if params.order == 0 => exp.u0.clone(),
            UtilityMethod::Expansion => exp.coeffs(g),
            UtilityMethod::Numeric => newton_on(&st, &h[t + 1], g, exp.coeffs(g), t)?,
        };
        let u = linalg::fitted(&st.design, &coeffs);
        let y: Vec<f64> = (0..u.len()).map(|k| h[t + 1][k] - u[k] * st.ds[k]).collect();
        let m1 = proj.fit(&y)?;
        let c: Vec<f64> = y.iter().zip(&m1).map(|(a, b)| a - b).collect();
        let mut value = m1;
        match params.method {
            UtilityMethod::Expansion => {
                if params.order >= 1 {
                    let var = proj.fit(&c.iter().map(|a| a * a).collect::<Vec<_>>())?;
                    for (v, s2) in value.iter_mut().zip(&var) {
                        *v += 0.5 * g * s2;
                    }
                }
                if params.order >= 2 {
                    let k3 = proj.fit(&c.iter().map(|a| a * a * a).collect::<Vec<_>>())?;
                    for (v, k) in value.iter_mut().zip(&k3) {
                        *v += g * g / 6.0 * k;
                    }
                }
            }
            UtilityMethod::Numeric => {
                // (1/g) log E[e^{g c}] with E[c] = 0, written through the
                // non-negative remainder z = (e^{g c} - 1 - g c) / g.
                let z: Vec<f64> = c.iter().map(|a| ((g * a).exp_m1() - g * a) / g).collect();
                let fz = proj.fit(&z)?;
                for (v, &m) in value.iter_mut().zip(&fz) {
                    let arg = g * m;
                    if !(arg > -1.0) || !arg.is_finite() {
                        return Err(QlbsError::NonFinite {
                            module: "exp_utility",
                            t: Some(t),
                            condition: "regression estimate of the exponential moment is not positive".into(),
                        });
                    }
                    *v += arg.ln_1p() / g;
                }
            }
        }
        h[t] = value.iter().map(|v| disc * v).collect();
        hedge[t] = coeffs;
    }
    let x0 = linalg::mean(q_paths.x(0));
    let phi0 = basis.eval(x0);
    let price0 = linalg::mean(&h[0]);
    let hedge0 = linalg::dot_row(&phi0, &hedge[0]);
    Ok(IndifferenceResult { h, hedge, price0, hedge0 })
}
