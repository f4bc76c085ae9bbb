//! Fitted Q-iteration on recorded transitions.
//!
//! The Q-function is quadratic in the action,
//! `Q_t(x, a) = U0(x) + a U1(x) + a^2/2 U2(x)` with `U = W_t Phi(x)`, so each
//! backward step is one linear regression of Bellman targets on the features
//! `Psi(x, a) = vec((1, a, a^2/2) (x) Phi(x))`.
//!
//! The maximising action inside the targets is not read off the fitted
//! parabola. It comes from the hedge normal equations evaluated on portfolio
//! values rebuilt along the recorded paths under the greedy policy, which
//! keeps the curvature estimate out of the recursion.

use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;

use crate::basis::{BasisSet, Design};
use crate::dataset::TransitionDataset;
use crate::dp::{self, DriftTerm};
use crate::error::{QlbsError, Result};
use crate::linalg::{self, Projector};
use crate::portfolio::{self, Centerer, Centering, RiskParams};

/// Where the rewards in the Bellman targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardSource {
    /// The reward column of the dataset.
    Stored,
    /// Recompute each reward for the recorded action, with the risk term
    /// measured against the greedy continuation portfolio. Needed whenever
    /// the behaviour policy differs from the greedy one, because the reward
    /// depends on future hedges through `Pi_{t+1}`.
    #[default]
    Relabel,
}

impl FromStr for RewardSource {
    type Err = QlbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stored" => Ok(RewardSource::Stored),
            "relabel" => Ok(RewardSource::Relabel),
            _ => Err(QlbsError::invalid("fqi.rewards", format!("unknown reward source `{s}`"))),
        }
    }
}

impl fmt::Display for RewardSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardSource::Stored => "stored",
            RewardSource::Relabel => "relabel",
        })
    }
}

/// How the greedy action at the next state is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionEstimator {
    /// Hedge normal equations on rebuilt portfolio values.
    #[default]
    Analytic,
    /// Parabola vertex of a fit on the other half of the paths (split by
    /// path parity); falls back to the analytic action where that fit is not
    /// concave or the curvature is not identified.
    CrossFit,
}

impl FromStr for ActionEstimator {
    type Err = QlbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(ActionEstimator::Analytic),
            "crossfit" | "cross_fit" => Ok(ActionEstimator::CrossFit),
            _ => Err(QlbsError::invalid("fqi.actions", format!("unknown action estimator `{s}`"))),
        }
    }
}

impl fmt::Display for ActionEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionEstimator::Analytic => "analytic",
            ActionEstimator::CrossFit => "crossfit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FqiConfig {
    pub centering: Centering,
    pub drift: DriftTerm,
    pub rewards: RewardSource,
    pub actions: ActionEstimator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FqiSolution {
    pub basis: BasisSet,
    /// `W_t` (3 x M) for `t = 0..T`.
    pub w: Vec<DMatrix<f64>>,
    /// Coefficients of the analytic greedy action for `t = 0..T`.
    pub action_coeffs: Vec<DVector<f64>>,
    /// Whether the recorded actions at step `t` vary enough, beyond what the
    /// state explains, for the curvature `U2` to be estimated.
    pub curvature_identified: Vec<bool>,
    pub price0: f64,
    pub hedge0: f64,
    pub x0: f64,
    pub warnings: Vec<String>,
}

/// `Psi(x, a)`: entries `(Phi_j, a Phi_j, a^2/2 Phi_j)` for `j = 1..M`.
pub fn build_features(x: f64, a: f64, basis: &BasisSet) -> Vec<f64> {
    let phi = basis.eval(x);
    let mut out = vec![0.0; 3 * phi.len()];
    fill_features(&phi, a, &mut out);
    out
}

fn fill_features(phi: &[f64], a: f64, out: &mut [f64]) {
    let h = 0.5 * a * a;
    for (j, &p) in phi.iter().enumerate() {
        out[3 * j] = p;
        out[3 * j + 1] = a * p;
        out[3 * j + 2] = h * p;
    }
}

fn feature_design(design: &Design, a: &[f64]) -> Design {
    let m = design.cols();
    let mut data = vec![0.0; design.rows() * 3 * m];
    for k in 0..design.rows() {
        fill_features(design.row(k), a[k], &mut data[k * 3 * m..(k + 1) * 3 * m]);
    }
    Design::from_rows(design.rows(), 3 * m, data)
}

/// `(U0, U1, U2) = W Phi`.
pub fn parabola_at(w: &DMatrix<f64>, phi: &[f64]) -> [f64; 3] {
    let mut u = [0.0; 3];
    for (j, &p) in phi.iter().enumerate() {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui += w[(i, j)] * p;
        }
    }
    u
}

pub fn q_value(u: &[f64; 3], a: f64) -> f64 {
    u[0] + a * u[1] + 0.5 * a * a * u[2]
}

/// Coefficients `(U0, U1, U2)` of the parabola `U0 + a U1 + a^2/2 U2` through
/// three points with distinct abscissae.
pub fn parabola_through(a: [f64; 3], q: [f64; 3]) -> Result<[f64; 3]> {
    let (d01, d02, d12) = (a[0] - a[1], a[0] - a[2], a[1] - a[2]);
    if d01 == 0.0 || d02 == 0.0 || d12 == 0.0 {
        return Err(QlbsError::invalid("a", "abscissae must be distinct"));
    }
    // Newton divided differences.
    let f01 = (q[0] - q[1]) / d01;
    let f12 = (q[1] - q[2]) / d12;
    let c2 = (f01 - f12) / d02;
    let c1 = f01 - c2 * (a[0] + a[1]);
    let c0 = q[0] - c1 * a[0] - c2 * a[0] * a[0];
    Ok([c0, c1, 2.0 * c2])
}

/// Maximiser of one sample's reward parabola:
/// `(dS_hat Pi_hat + dS / (2 gamma lambda)) / dS_hat^2`.
pub fn sample_optimal_action(ds: f64, ds_hat: f64, pi_hat: f64, risk: &RiskParams) -> Result<f64> {
    if !(risk.lambda > 0.0) || ds_hat == 0.0 {
        return Err(QlbsError::degenerate("fqi_solver", None, "reward is not strictly concave in the action"));
    }
    Ok((ds_hat * pi_hat + ds / (2.0 * risk.gamma * risk.lambda)) / (ds_hat * ds_hat))
}

const IDENTIFIED_TOL: f64 = 1e-6;

fn action_dispersion(design: &Design, a: &[f64], t: usize) -> Result<f64> {
    let proj = Projector::new(design, "fqi_solver", Some(t));
    let resid = proj.residual(a)?;
    let ms_a = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
    let ms_r = resid.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
    Ok(if ms_a == 0.0 { 0.0 } else { ms_r / ms_a })
}

fn regress(design: &Design, y: &[f64], rows: Option<&[bool]>, t: usize) -> Result<DMatrix<f64>> {
    let weights: Option<Vec<f64>> = rows.map(|r| r.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect());
    let s = linalg::weighted_gram(design, weights.as_deref());
    let y_masked: Vec<f64> = match rows {
        Some(r) => y.iter().zip(r).map(|(v, &b)| if b { *v } else { 0.0 }).collect(),
        None => y.to_vec(),
    };
    let m = linalg::design_t_times(design, &y_masked);
    let w = linalg::ridge_solve(&s, &m, "fqi_solver", Some(t))?;
    Ok(DMatrix::from_column_slice(3, design.cols() / 3, w.as_slice()))
}

pub fn fqi_backward(data: &TransitionDataset, basis: &BasisSet, risk: &RiskParams, cfg: &FqiConfig) -> Result<FqiSolution> {
    if !(risk.lambda > 0.0) {
        return Err(QlbsError::invalid("risk.lambda", "fitted Q-iteration needs lambda > 0"));
    }
    let contract = data.header.contract;
    contract.validate()?;
    let paths = data.to_ensemble()?;
    let n_t = data.n_steps();
    let n = data.n_paths();
    let g = risk.gamma;
    let m = basis.len();

    let mut pi: Vec<f64> = paths.s(n_t).iter().map(|&s| contract.payoff(s)).collect();
    let design_t = basis.evaluate(paths.x(n_t));
    let var_t = portfolio::terminal_variance(&pi, &design_t, cfg.centering)?;
    let mut q_next: Vec<f64> = pi.iter().zip(&var_t).map(|(p, v)| -p - risk.lambda * v).collect();

    let mut w = vec![DMatrix::zeros(3, m); n_t];
    let mut action_coeffs = vec![DVector::zeros(m); n_t];
    let mut identified = vec![false; n_t];
    let mut warnings = Vec::new();
    let fold: Vec<bool> = (0..n).map(|k| k % 2 == 0).collect();
    let other: Vec<bool> = fold.iter().map(|b| !b).collect();

    for t in (0..n_t).rev() {
        let rec = data.step(t);
        let design = basis.evaluate(&rec.x);
        let centerer = Centerer::new(&design, cfg.centering, "fqi_solver", t);
        let sd = portfolio::step_data(&paths, t, &pi, &centerer)?;
        let drift = dp::drift_values(&paths, t, &sd.ds, cfg.drift);
        let phi_t = dp::action_coeffs_from_samples(&design, &sd.ds_hat, &sd.pi_hat, &drift, risk, t, "fqi_solver")?;
        let a_star = linalg::fitted(&design, &phi_t);

        let rewards: Vec<f64> = match cfg.rewards {
            RewardSource::Stored => rec.r.clone(),
            RewardSource::Relabel => (0..n)
                .map(|k| portfolio::reward(sd.ds[k], sd.ds_hat[k], sd.pi_hat[k], rec.a[k], risk))
                .collect(),
        };
        let y: Vec<f64> = (0..n).map(|k| rewards[k] + g * q_next[k]).collect();
        let psi = feature_design(&design, &rec.a);
        let w_t = regress(&psi, &y, None, t)?;
        identified[t] = action_dispersion(&design, &rec.a, t)? > IDENTIFIED_TOL;

        let x_mid = {
            let mut xs = rec.x.clone();
            xs.sort_by(f64::total_cmp);
            xs[xs.len() / 2]
        };
        let u_mid = parabola_at(&w_t, &basis.eval(x_mid));
        if identified[t] && u_mid[2] > 0.0 {
            warnings.push(format!("t={t}: fitted Q is convex in the action at the median state (U2={:e})", u_mid[2]));
        }

        // Greedy action at every recorded state of step t.
        let greedy: Vec<f64> = match cfg.actions {
            ActionEstimator::CrossFit if identified[t] => {
                let w_even = regress(&psi, &y, Some(&fold), t)?;
                let w_odd = regress(&psi, &y, Some(&other), t)?;
                (0..n)
                    .map(|k| {
                        let held_out = if fold[k] { &w_odd } else { &w_even };
                        let u = parabola_at(held_out, design.row(k));
                        if u[2] < 0.0 {
                            -u[1] / u[2]
                        } else {
                            a_star[k]
                        }
                    })
                    .collect()
            }
            _ => a_star.clone(),
        };

        q_next = (0..n).map(|k| q_value(&parabola_at(&w_t, design.row(k)), greedy[k])).collect();
        if q_next.iter().any(|v| !v.is_finite()) {
            return Err(QlbsError::NonFinite { module: "fqi_solver", t: Some(t), condition: "fitted Q-values".into() });
        }
        pi = (0..n).map(|k| g * (pi[k] - greedy[k] * sd.ds[k])).collect();
        w[t] = w_t;
        action_coeffs[t] = phi_t;
    }

    let x0 = linalg::mean(paths.x(0));
    let phi0 = basis.eval(x0);
    let hedge0 = linalg::dot_row(&phi0, &action_coeffs[0]);
    let price0 = -q_value(&parabola_at(&w[0], &phi0), hedge0);
    Ok(FqiSolution {
        basis: basis.clone(),
        w,
        action_coeffs,
        curvature_identified: identified,
        price0,
        hedge0,
        x0,
        warnings,
    })
}

/// Price and hedge at state `x` and step `t` from the fitted parabola.
///
/// Uses the vertex `-U1/U2` when the curvature is identified and negative,
/// otherwise the analytic action stored with the solution.
pub fn extract_price_hedge(sol: &FqiSolution, x: f64, t: usize) -> Result<(f64, f64)> {
    let w = sol.w.get(t).ok_or_else(|| QlbsError::invalid("t", format!("no fitted step {t}")))?;
    let phi = sol.basis.eval(x);
    let u = parabola_at(w, &phi);
    let hedge = if sol.curvature_identified[t] && u[2] < 0.0 {
        -u[1] / u[2]
    } else {
        linalg::dot_row(&phi, &sol.action_coeffs[t])
    };
    Ok((-q_value(&u, hedge), hedge))
}
