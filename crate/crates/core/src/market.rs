//! Geometric Brownian motion paths and the drift-removed state variable.
//!
//! Prices follow the exact log-Euler step
//! `S_{t+1} = S_t exp((mu - sigma^2/2) dt + sigma sqrt(dt) z)`.
//! The state `X_t = ln S_t - (mu - sigma^2/2) t` is a driftless Brownian
//! motion, which makes a single basis usable at every time step.
//!
//! Randomness: path `i` draws from a ChaCha8 generator seeded with the run
//! seed and switched to stream `i`, so each path is reproducible on its own
//! and independent of the ensemble size. Normals come from the Box-Muller
//! transform, using both the cosine and sine halves of each uniform pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

use crate::error::{QlbsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub r: f64,
    /// Maturity in years.
    pub maturity: f64,
    pub n_steps: usize,
}

impl MarketParams {
    pub fn new(s0: f64, mu: f64, sigma: f64, r: f64, maturity: f64, n_steps: usize) -> Result<Self> {
        let p = MarketParams { s0, mu, sigma, r, maturity, n_steps };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(QlbsError::invalid("market.s0", "initial price must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(QlbsError::invalid("market.sigma", "volatility must be non-negative"));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(QlbsError::invalid("market.maturity", "maturity must be positive"));
        }
        if self.n_steps == 0 {
            return Err(QlbsError::invalid("market.n_steps", "need at least one step"));
        }
        if !self.mu.is_finite() || !self.r.is_finite() {
            return Err(QlbsError::invalid("market.mu", "drift and rate must be finite"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.maturity / self.n_steps as f64
    }

    /// Calendar time of step `t`.
    pub fn time(&self, t: usize) -> f64 {
        t as f64 * self.dt()
    }

    /// One-step discount factor `exp(-r dt)`.
    pub fn gamma(&self) -> f64 {
        (-self.r * self.dt()).exp()
    }

    /// Drift of `ln S` per unit time.
    pub fn log_drift(&self) -> f64 {
        self.mu - 0.5 * self.sigma * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Put,
    Call,
}

impl FromStr for OptionKind {
    type Err = QlbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "put" => Ok(OptionKind::Put),
            "call" => Ok(OptionKind::Call),
            _ => Err(QlbsError::invalid("contract.type", format!("expected put or call, got `{s}`"))),
        }
    }
}

impl fmt::Display for OptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptionKind::Put => "put",
            OptionKind::Call => "call",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptionContract {
    pub kind: OptionKind,
    pub strike: f64,
}

impl OptionContract {
    pub fn put(strike: f64) -> Self {
        OptionContract { kind: OptionKind::Put, strike }
    }
    pub fn call(strike: f64) -> Self {
        OptionContract { kind: OptionKind::Call, strike }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(QlbsError::invalid("contract.strike", "strike must be positive"));
        }
        Ok(())
    }

    pub fn payoff(&self, s: f64) -> f64 {
        terminal_payoff(s, self)
    }
}

pub fn terminal_payoff(s: f64, contract: &OptionContract) -> f64 {
    match contract.kind {
        OptionKind::Put => (contract.strike - s).max(0.0),
        OptionKind::Call => (s - contract.strike).max(0.0),
    }
}

/// `X = ln s - (mu - sigma^2/2) time`.
pub fn to_state(s: f64, time: f64, params: &MarketParams) -> Result<f64> {
    if !(s > 0.0) {
        return Err(QlbsError::invalid("s", format!("price must be positive, got {s}")));
    }
    Ok(s.ln() - params.log_drift() * time)
}

pub fn from_state(x: f64, time: f64, params: &MarketParams) -> f64 {
    (x + params.log_drift() * time).exp()
}

/// N paths over T steps; cross-sections are stored contiguously by time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    params: MarketParams,
    seed: Option<u64>,
    s: Vec<Vec<f64>>,
    x: Vec<Vec<f64>>,
}

/// Two independent standard normals from two uniforms.
fn box_muller<R: Rng>(rng: &mut R) -> (f64, f64) {
    // random::<f64>() is in [0, 1); shift the first uniform into (0, 1].
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    let rad = (-2.0 * u1.ln()).sqrt();
    let ang = std::f64::consts::TAU * u2;
    (rad * ang.cos(), rad * ang.sin())
}

/// Fill `out` with standard normals from path stream `path` of `seed`.
pub fn path_normals(seed: u64, path: u64, out: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    let mut i = 0;
    while i < out.len() {
        let (a, b) = box_muller(&mut rng);
        out[i] = a;
        if i + 1 < out.len() {
            out[i + 1] = b;
        }
        i += 2;
    }
}

pub fn simulate_gbm(params: &MarketParams, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    params.validate()?;
    if n_paths == 0 {
        return Err(QlbsError::invalid("mc.n_paths", "need at least one path"));
    }
    let n = params.n_steps;
    let dt = params.dt();
    let drift = params.log_drift() * dt;
    let vol = params.sigma * dt.sqrt();
    let mut s = vec![vec![0.0; n_paths]; n + 1];
    let mut z = vec![0.0; n];
    for p in 0..n_paths {
        path_normals(seed, p as u64, &mut z);
        let mut ln_s = params.s0.ln();
        s[0][p] = params.s0;
        for t in 0..n {
            ln_s += drift + vol * z[t];
            s[t + 1][p] = ln_s.exp();
        }
    }
    PathEnsemble::build(*params, Some(seed), s)
}

impl PathEnsemble {
    /// Wrap observed prices, indexed `[path][t]`, into an ensemble.
    pub fn from_prices(params: MarketParams, prices: &[Vec<f64>]) -> Result<Self> {
        params.validate()?;
        let n = params.n_steps;
        if prices.is_empty() {
            return Err(QlbsError::invalid("prices", "no paths supplied"));
        }
        let mut s = vec![vec![0.0; prices.len()]; n + 1];
        for (p, row) in prices.iter().enumerate() {
            if row.len() != n + 1 {
                return Err(QlbsError::shape(
                    "market_sim",
                    format!("path {p} has {} prices, expected {}", row.len(), n + 1),
                ));
            }
            for (t, &v) in row.iter().enumerate() {
                s[t][p] = v;
            }
        }
        PathEnsemble::build(params, None, s)
    }

    fn build(params: MarketParams, seed: Option<u64>, s: Vec<Vec<f64>>) -> Result<Self> {
        let mut x = Vec::with_capacity(s.len());
        for (t, col) in s.iter().enumerate() {
            let time = params.time(t);
            let xs = col
                .iter()
                .map(|&v| {
                    if v > 0.0 && v.is_finite() {
                        Ok(v.ln() - params.log_drift() * time)
                    } else {
                        Err(QlbsError::NonFinite {
                            module: "market_sim",
                            t: Some(t),
                            condition: format!("price {v} is not a positive finite number"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            x.push(xs);
        }
        Ok(PathEnsemble { params, seed, s, x })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn n_paths(&self) -> usize {
        self.s[0].len()
    }
    pub fn n_steps(&self) -> usize {
        self.params.n_steps
    }
    /// Prices of all paths at step `t`.
    pub fn s(&self, t: usize) -> &[f64] {
        &self.s[t]
    }
    /// States of all paths at step `t`.
    pub fn x(&self, t: usize) -> &[f64] {
        &self.x[t]
    }
    pub fn price(&self, path: usize, t: usize) -> f64 {
        self.s[t][path]
    }
    /// `dS_t = S_{t+1} - e^{r dt} S_t` for every path.
    pub fn delta_s(&self, t: usize) -> Vec<f64> {
        let growth = (self.params.r * self.params.dt()).exp();
        self.s[t + 1].iter().zip(&self.s[t]).map(|(n, c)| n - growth * c).collect()
    }
    /// Model-implied `E[dS_t | S_t] = S_t (e^{mu dt} - e^{r dt})`.
    pub fn expected_delta_s(&self, t: usize) -> Vec<f64> {
        let dt = self.params.dt();
        let f = (self.params.mu * dt).exp() - (self.params.r * dt).exp();
        self.s[t].iter().map(|c| c * f).collect()
    }
    /// Every state of every step, for fitting a basis.
    pub fn pooled_states(&self) -> Vec<f64> {
        self.x.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_vol_is_deterministic() {
        let p = MarketParams::new(100.0, 0.05, 0.0, 0.0, 1.0, 4).unwrap();
        let e = simulate_gbm(&p, 3, 1).unwrap();
        for t in 0..=4 {
            let want = 100.0 * (0.05 * p.time(t)).exp();
            for &v in e.s(t) {
                assert!((v - want).abs() < 1e-12 * want);
            }
        }
    }

    #[test]
    fn state_roundtrip() {
        let p = MarketParams::new(100.0, 0.07, 0.3, 0.01, 2.0, 8).unwrap();
        for &s in &[1e-3, 1.0, 87.0, 1e4] {
            let x = to_state(s, 0.75, &p).unwrap();
            assert!((from_state(x, 0.75, &p) - s).abs() < 1e-12 * s);
        }
        assert!(to_state(0.0, 0.0, &p).is_err());
    }

    #[test]
    fn payoffs() {
        assert_eq!(terminal_payoff(90.0, &OptionContract::put(100.0)), 10.0);
        assert_eq!(terminal_payoff(110.0, &OptionContract::put(100.0)), 0.0);
        assert_eq!(terminal_payoff(110.0, &OptionContract::call(100.0)), 10.0);
    }

    #[test]
    fn paths_do_not_depend_on_ensemble_size() {
        let p = MarketParams::new(100.0, 0.05, 0.2, 0.01, 1.0, 5).unwrap();
        let a = simulate_gbm(&p, 3, 9).unwrap();
        let b = simulate_gbm(&p, 10, 9).unwrap();
        for t in 0..=5 {
            assert_eq!(a.s(t), &b.s(t)[..3]);
        }
    }

    #[test]
    fn single_step_example() {
        let p = MarketParams::new(100.0, 0.05, 0.0, 0.0, 1.0, 1).unwrap();
        let e = simulate_gbm(&p, 1, 0).unwrap();
        assert!((e.price(0, 1) - 100.0 * 0.05f64.exp()).abs() < 1e-12);
        assert!((e.x(1)[0] - e.x(0)[0]).abs() < 1e-12);
    }
}
