//! Finite-state version of the hedging MDP.
//!
//! A [`MarkovChain`] on a grid of states carries one transition matrix per
//! step. [`qlbs_mdp`] turns it into a [`DiscreteMDP`] whose rewards are
//! quadratic in the action; the quadratic coefficients per `(t, x, x')` come
//! from the first two conditional moments of the continuation portfolio,
//! which are propagated backwards under the optimal hedge. The result can be
//! solved exactly by [`exact_backward_induction`] or learned from sampled
//! transitions by [`q_learn`].

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;

use crate::dataset::fmt_f64;
use crate::error::{QlbsError, Result};
use crate::market::{from_state, MarketParams, OptionContract, PathEnsemble};
use crate::portfolio::{Centering, RiskParams};

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    /// State values on the `X` axis, increasing.
    pub grid: Vec<f64>,
    /// Row-stochastic transition matrices for steps `0..T`.
    pub transitions: Vec<DMatrix<f64>>,
    /// Map from the original bins to merged states (identity when no bin was
    /// empty).
    pub remap: Vec<usize>,
    pub x0_state: usize,
    /// Market used to turn states into prices; `None` for abstract chains.
    pub params: Option<MarketParams>,
}

impl MarkovChain {
    pub fn new(grid: Vec<f64>, transitions: Vec<DMatrix<f64>>, x0_state: usize, params: Option<MarketParams>) -> Result<Self> {
        let n = grid.len();
        if n == 0 || transitions.is_empty() {
            return Err(QlbsError::invalid("chain", "need at least one state and one step"));
        }
        if x0_state >= n {
            return Err(QlbsError::invalid("x0_state", "initial state outside the grid"));
        }
        for (t, p) in transitions.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                return Err(QlbsError::shape("tabular_q", format!("step {t} matrix is {}x{}", p.nrows(), p.ncols())));
            }
            for i in 0..n {
                let row = p.row(i);
                if row.iter().any(|&v| v < 0.0) || (row.sum() - 1.0).abs() > 1e-12 {
                    return Err(QlbsError::invalid("transitions", format!("row {i} of step {t} is not a distribution")));
                }
            }
        }
        Ok(MarkovChain { grid, transitions, remap: (0..n).collect(), x0_state, params })
    }

    pub fn n_states(&self) -> usize {
        self.grid.len()
    }

    pub fn n_steps(&self) -> usize {
        self.transitions.len()
    }

    /// Transition frequencies pooled over all steps (rows weighted equally
    /// per step).
    pub fn pooled_transitions(&self) -> DMatrix<f64> {
        let n = self.n_states();
        let mut p = DMatrix::zeros(n, n);
        for m in &self.transitions {
            p += m;
        }
        p / self.n_steps() as f64
    }

    /// State distribution at each step, starting from `x0_state`.
    pub fn occupancy(&self) -> Vec<Vec<f64>> {
        let n = self.n_states();
        let mut dist = vec![0.0; n];
        dist[self.x0_state] = 1.0;
        let mut out = vec![dist.clone()];
        for p in &self.transitions {
            let mut next = vec![0.0; n];
            for i in 0..n {
                if dist[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    next[j] += dist[i] * p[(i, j)];
                }
            }
            out.push(next.clone());
            dist = next;
        }
        out
    }

    fn price(&self, x: usize, t: usize) -> Result<f64> {
        let p = self.params.as_ref().ok_or_else(|| QlbsError::invalid("chain", "chain carries no market parameters"))?;
        Ok(from_state(self.grid[x], p.time(t), p))
    }
}

/// Quantile grid of `n_x` bins over the pooled states, with per-step
/// transition frequencies. Empty bins are merged into a neighbour; rows of
/// states not visited at some step fall back to the pooled frequencies.
pub fn discretize_chain(paths: &PathEnsemble, n_x: usize) -> Result<MarkovChain> {
    if n_x < 1 {
        return Err(QlbsError::invalid("tabular.n_x", "need at least one state"));
    }
    let mut pooled = paths.pooled_states();
    pooled.sort_by(f64::total_cmp);
    let (min, max) = (pooled[0], pooled[pooled.len() - 1]);
    let q = |p: f64| {
        let h = p * (pooled.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(pooled.len() - 1);
        pooled[lo] + (h - lo as f64) * (pooled[hi] - pooled[lo])
    };
    // A spread at rounding level is a single state.
    let flat = max - min <= 1e-12 * (1.0 + max.abs().max(min.abs()));
    let edges: Vec<f64> = if flat { Vec::new() } else { (1..n_x).map(|i| q(i as f64 / n_x as f64)).collect() };
    let n_x = edges.len() + 1;
    let bin = |x: f64| edges.partition_point(|&e| e <= x);

    let mut counts = vec![0usize; n_x];
    for &x in &pooled {
        counts[bin(x)] += 1;
    }
    let occupied: Vec<usize> = (0..n_x).filter(|&i| counts[i] > 0).collect();
    let remap: Vec<usize> = (0..n_x)
        .map(|i| {
            // Nearest occupied bin, preferring the lower neighbour on ties.
            let pos = occupied.partition_point(|&o| o < i);
            if pos < occupied.len() && occupied[pos] == i {
                pos
            } else if pos == 0 {
                0
            } else if pos == occupied.len() || i - occupied[pos - 1] <= occupied[pos] - i {
                pos - 1
            } else {
                pos
            }
        })
        .collect();
    let n = occupied.len();
    let lo_edge = |i: usize| if i == 0 { min } else { edges[i - 1] };
    let hi_edge = |i: usize| if i + 1 == n_x { max } else { edges[i] };
    let grid: Vec<f64> = (0..n)
        .map(|s| {
            let members: Vec<usize> = (0..n_x).filter(|&i| remap[i] == s).collect();
            0.5 * (lo_edge(members[0]) + hi_edge(*members.last().unwrap()))
        })
        .collect();
    let state = |x: f64| remap[bin(x)];

    let n_t = paths.n_steps();
    let mut step_counts = vec![DMatrix::<f64>::zeros(n, n); n_t];
    for (t, c) in step_counts.iter_mut().enumerate() {
        for (a, b) in paths.x(t).iter().zip(paths.x(t + 1)) {
            c[(state(*a), state(*b))] += 1.0;
        }
    }
    let mut pooled_counts = DMatrix::<f64>::zeros(n, n);
    for c in &step_counts {
        pooled_counts += c;
    }
    let normalise = |c: &DMatrix<f64>, i: usize| -> Option<Vec<f64>> {
        let s: f64 = c.row(i).sum();
        (s > 0.0).then(|| c.row(i).iter().map(|v| v / s).collect())
    };
    let transitions = step_counts
        .iter()
        .map(|c| {
            let mut p = DMatrix::zeros(n, n);
            for i in 0..n {
                let row = normalise(c, i).or_else(|| normalise(&pooled_counts, i)).unwrap_or_else(|| {
                    let mut r = vec![0.0; n];
                    r[i] = 1.0;
                    r
                });
                for j in 0..n {
                    p[(i, j)] = row[j];
                }
            }
            p
        })
        .collect();
    let x0_state = state(paths.x(0)[0]);
    Ok(MarkovChain { grid, transitions, remap, x0_state, params: Some(*paths.params()) })
}

/// Recombining trinomial lattice in `X` with moves `-h, 0, +h` of
/// probabilities `1/4, 1/2, 1/4`, `h = sigma sqrt(2 dt)` (matching the
/// per-step variance of `X`), clamped at the grid ends. Also returns the
/// path set that lists every lattice path with multiplicity proportional to
/// its probability, `4^T` paths in total; on it, sample averages equal
/// expectations under the chain exactly.
pub fn lattice_instance(params: &MarketParams, n_x: usize) -> Result<(MarkovChain, PathEnsemble)> {
    params.validate()?;
    if n_x < 1 || n_x % 2 == 0 {
        return Err(QlbsError::invalid("tabular.n_x", "lattice needs an odd number of states"));
    }
    if params.n_steps > 10 {
        return Err(QlbsError::invalid("market.n_steps", "the exhaustive lattice path set is limited to 10 steps"));
    }
    if !(params.sigma > 0.0) {
        return Err(QlbsError::invalid("market.sigma", "lattice spacing needs sigma > 0"));
    }
    let h = params.sigma * (2.0 * params.dt()).sqrt();
    let c = n_x / 2;
    let x0 = params.s0.ln();
    let grid: Vec<f64> = (0..n_x).map(|j| x0 + (j as f64 - c as f64) * h).collect();
    let step = |j: usize, m: usize| -> usize {
        match m {
            0 => j.saturating_sub(1),
            3 => (j + 1).min(n_x - 1),
            _ => j,
        }
    };
    let mut p = DMatrix::zeros(n_x, n_x);
    for j in 0..n_x {
        for m in 0..4 {
            p[(j, step(j, m))] += 0.25;
        }
    }
    let chain = MarkovChain::new(grid.clone(), vec![p; params.n_steps], c, Some(*params))?;

    let n_t = params.n_steps;
    let n_paths = 4usize.pow(n_t as u32);
    let mut prices = Vec::with_capacity(n_paths);
    for code in 0..n_paths {
        let mut j = c;
        let mut row = vec![params.s0];
        let mut rest = code;
        for t in 0..n_t {
            j = step(j, rest % 4);
            rest /= 4;
            row.push(from_state(grid[j], params.time(t + 1), params));
        }
        prices.push(row);
    }
    Ok((chain, PathEnsemble::from_prices(*params, &prices)?))
}

/// Finite-horizon MDP with rewards quadratic in the action:
/// `R_t(x, a, x') = c0 + c1 a + c2 a^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMDP {
    pub chain: MarkovChain,
    pub actions: Vec<f64>,
    pub gamma: f64,
    /// Coefficients indexed `[t][x * n_x + x']`.
    pub rewards: Vec<Vec<[f64; 3]>>,
    /// `Q_T(x)`, the same for every action.
    pub terminal: Vec<f64>,
}

impl DiscreteMDP {
    pub fn new(chain: MarkovChain, actions: Vec<f64>, gamma: f64, rewards: Vec<Vec<[f64; 3]>>, terminal: Vec<f64>) -> Result<Self> {
        let n = chain.n_states();
        if actions.is_empty() {
            return Err(QlbsError::invalid("tabular.n_a", "need at least one action"));
        }
        if rewards.len() != chain.n_steps() || rewards.iter().any(|r| r.len() != n * n) || terminal.len() != n {
            return Err(QlbsError::shape("tabular_q", "reward or terminal table does not match the chain"));
        }
        Ok(DiscreteMDP { chain, actions, gamma, rewards, terminal })
    }

    pub fn reward(&self, t: usize, x: usize, a: f64, x_next: usize) -> f64 {
        let c = self.rewards[t][x * self.chain.n_states() + x_next];
        c[0] + c[1] * a + c[2] * a * a
    }
}

/// Exact solution of the finite-state hedging problem with continuous actions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSolution {
    /// Optimal values `V_t(x)` for `t = 0..=T`.
    pub value: Vec<Vec<f64>>,
    /// Optimal hedges for `t = 0..T`.
    pub hedge: Vec<Vec<f64>>,
}

/// Vertex of `A + B a + C a^2` when strictly concave; a flat function gives 0.
fn concave_max(a: f64, b: f64, c: f64, t: usize) -> Result<(f64, f64)> {
    if c < 0.0 {
        let arg = -b / (2.0 * c);
        Ok((arg, a + b * arg + c * arg * arg))
    } else if c == 0.0 && b.abs() <= 1e-12 * (1.0 + a.abs()) {
        Ok((0.0, a))
    } else {
        Err(QlbsError::degenerate("tabular_q", Some(t), format!("Q is not concave in the action (curvature {c:e}, slope {b:e})")))
    }
}

/// Build the hedging MDP on a chain and solve it with continuous actions.
pub fn qlbs_mdp(
    chain: &MarkovChain,
    contract: &OptionContract,
    risk: &RiskParams,
    actions: Vec<f64>,
    centering: Centering,
) -> Result<(DiscreteMDP, ChainSolution)> {
    contract.validate()?;
    let params = chain.params.ok_or_else(|| QlbsError::invalid("chain", "chain carries no market parameters"))?;
    let n = chain.n_states();
    let n_t = chain.n_steps();
    let g = risk.gamma;
    let lam = risk.lambda;
    let growth = (params.r * params.dt()).exp();
    let occ = chain.occupancy();

    let mut m1: Vec<f64> = (0..n).map(|x| chain.price(x, n_t).map(|s| contract.payoff(s))).collect::<Result<_>>()?;
    let mut m2: Vec<f64> = m1.iter().map(|v| v * v).collect();
    let terminal_var = match centering {
        Centering::Conditional => 0.0,
        Centering::CrossSectional => {
            let mean: f64 = (0..n).map(|x| occ[n_t][x] * m1[x]).sum();
            (0..n).map(|x| occ[n_t][x] * m2[x]).sum::<f64>() - mean * mean
        }
    };
    let terminal: Vec<f64> = (0..n).map(|x| -m1[x] - lam * (m2[x] - m1[x] * m1[x] + terminal_var)).collect();
    let mut value = vec![Vec::new(); n_t + 1];
    value[n_t] = terminal.clone();
    let mut hedge = vec![Vec::new(); n_t];
    let mut rewards = vec![Vec::new(); n_t];

    for t in (0..n_t).rev() {
        let p = &chain.transitions[t];
        let s_now: Vec<f64> = (0..n).map(|x| chain.price(x, t)).collect::<Result<_>>()?;
        let s_next: Vec<f64> = (0..n).map(|x| chain.price(x, t + 1)).collect::<Result<_>>()?;
        let ds = |x: usize, y: usize| s_next[y] - growth * s_now[x];

        // Centring constants per current state.
        let (c_pi, c_ds): (Vec<f64>, Vec<f64>) = match centering {
            Centering::Conditional => (0..n)
                .map(|x| {
                    let cp: f64 = (0..n).map(|y| p[(x, y)] * m1[y]).sum();
                    let cs: f64 = (0..n).map(|y| p[(x, y)] * ds(x, y)).sum();
                    (cp, cs)
                })
                .unzip(),
            Centering::CrossSectional => {
                let cp: f64 = (0..n).map(|y| occ[t + 1][y] * m1[y]).sum();
                let cs: f64 = (0..n)
                    .map(|x| occ[t][x] * (0..n).map(|y| p[(x, y)] * ds(x, y)).sum::<f64>())
                    .sum();
                (vec![cp; n], vec![cs; n])
            }
        };

        let mut coef = vec![[0.0; 3]; n * n];
        let mut v_t = vec![0.0; n];
        let mut h_t = vec![0.0; n];
        let mut m1_t = vec![0.0; n];
        let mut m2_t = vec![0.0; n];
        for x in 0..n {
            let (mut qa, mut qb, mut qc) = (0.0, 0.0, 0.0);
            for y in 0..n {
                let d = ds(x, y);
                let dh = d - c_ds[x];
                let e1 = m1[y] - c_pi[x];
                let e2 = m2[y] - 2.0 * c_pi[x] * m1[y] + c_pi[x] * c_pi[x];
                let c = [-lam * g * g * e2, g * d + 2.0 * lam * g * g * dh * e1, -lam * g * g * dh * dh];
                coef[x * n + y] = c;
                let w = p[(x, y)];
                if w != 0.0 {
                    qa += w * (c[0] + g * value[t + 1][y]);
                    qb += w * c[1];
                    qc += w * c[2];
                }
            }
            let (a, v) = concave_max(qa, qb, qc, t)?;
            h_t[x] = a;
            v_t[x] = v;
            for y in 0..n {
                let w = p[(x, y)];
                if w != 0.0 {
                    let d = ds(x, y);
                    m1_t[x] += w * g * (m1[y] - a * d);
                    m2_t[x] += w * g * g * (m2[y] - 2.0 * a * d * m1[y] + a * a * d * d);
                }
            }
        }
        rewards[t] = coef;
        value[t] = v_t;
        hedge[t] = h_t;
        m1 = m1_t;
        m2 = m2_t;
    }
    let mdp = DiscreteMDP::new(chain.clone(), actions, g, rewards, terminal)?;
    Ok((mdp, ChainSolution { value, hedge }))
}

/// Build the MDP from simulated paths: quantile grid plus QLBS rewards.
pub fn discretize(
    paths: &PathEnsemble,
    contract: &OptionContract,
    risk: &RiskParams,
    n_x: usize,
    n_a: usize,
    action_range: (f64, f64),
    centering: Centering,
) -> Result<DiscreteMDP> {
    let chain = discretize_chain(paths, n_x)?;
    let actions = action_grid(n_a, action_range)?;
    Ok(qlbs_mdp(&chain, contract, risk, actions, centering)?.0)
}

pub fn action_grid(n_a: usize, range: (f64, f64)) -> Result<Vec<f64>> {
    if n_a < 2 || !(range.0 < range.1) {
        return Err(QlbsError::invalid("tabular.n_a", "need at least two actions over a non-empty range"));
    }
    Ok((0..n_a).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n_a - 1) as f64).collect())
}

/// How the maximum over next-step actions is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMax {
    /// Over the action grid.
    Grid,
    /// Over all real actions (the Q-function is a concave parabola).
    Continuous,
}

/// Q-values on the action grid for `t = 0..=T`, plus visit counts when
/// learned from samples.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_steps: usize,
    pub n_states: usize,
    pub actions: Vec<f64>,
    q: Vec<f64>,
    visits: Vec<u64>,
    /// `max_a Q_t(x, a)` under the chosen maximisation.
    pub value: Vec<Vec<f64>>,
}

impl QTable {
    fn zeros(n_steps: usize, n_states: usize, actions: &[f64]) -> Self {
        let len = (n_steps + 1) * n_states * actions.len();
        QTable {
            n_steps,
            n_states,
            actions: actions.to_vec(),
            q: vec![0.0; len],
            visits: vec![0; len],
            value: vec![vec![0.0; n_states]; n_steps + 1],
        }
    }

    fn idx(&self, t: usize, x: usize, a: usize) -> usize {
        (t * self.n_states + x) * self.actions.len() + a
    }

    pub fn q(&self, t: usize, x: usize, a: usize) -> f64 {
        self.q[self.idx(t, x, a)]
    }

    pub fn visits(&self, t: usize, x: usize, a: usize) -> u64 {
        self.visits[self.idx(t, x, a)]
    }

    /// Index of the best grid action.
    pub fn greedy(&self, t: usize, x: usize) -> usize {
        (0..self.actions.len())
            .fold(0, |best, a| if self.q(t, x, a) > self.q(t, x, best) { a } else { best })
    }

    fn grid_max(&self, t: usize, x: usize) -> f64 {
        self.q(t, x, self.greedy(t, x))
    }

    /// Largest `|Q|` over the table.
    pub fn scale(&self) -> f64 {
        self.q.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Sup-norm distance over steps `0..T`; with `visited_only`, cells this
    /// table never updated are skipped.
    pub fn sup_distance(&self, other: &QTable, visited_only: bool) -> f64 {
        let mut worst = 0.0f64;
        for t in 0..self.n_steps {
            for x in 0..self.n_states {
                for a in 0..self.actions.len() {
                    if visited_only && self.visits(t, x, a) == 0 {
                        continue;
                    }
                    worst = worst.max((self.q(t, x, a) - other.q(t, x, a)).abs());
                }
            }
        }
        worst
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,state_index,action_index,q,visits")?;
        for t in 0..=self.n_steps {
            for x in 0..self.n_states {
                for a in 0..self.actions.len() {
                    writeln!(w, "{t},{x},{a},{},{}", fmt_f64(self.q(t, x, a)), self.visits(t, x, a))?;
                }
            }
        }
        Ok(())
    }
}

pub fn exact_backward_induction(mdp: &DiscreteMDP, mode: ActionMax) -> Result<QTable> {
    let n = mdp.chain.n_states();
    let n_t = mdp.chain.n_steps();
    let mut table = QTable::zeros(n_t, n, &mdp.actions);
    for x in 0..n {
        for a in 0..mdp.actions.len() {
            let i = table.idx(n_t, x, a);
            table.q[i] = mdp.terminal[x];
        }
        table.value[n_t][x] = mdp.terminal[x];
    }
    for t in (0..n_t).rev() {
        let p = &mdp.chain.transitions[t];
        for x in 0..n {
            let (mut qa, mut qb, mut qc) = (0.0, 0.0, 0.0);
            for y in 0..n {
                let w = p[(x, y)];
                if w != 0.0 {
                    let c = mdp.rewards[t][x * n + y];
                    qa += w * (c[0] + mdp.gamma * table.value[t + 1][y]);
                    qb += w * c[1];
                    qc += w * c[2];
                }
            }
            for (ai, &a) in mdp.actions.iter().enumerate() {
                let i = table.idx(t, x, ai);
                table.q[i] = qa + qb * a + qc * a * a;
            }
            table.value[t][x] = match mode {
                ActionMax::Grid => table.grid_max(t, x),
                ActionMax::Continuous => concave_max(qa, qb, qc, t)?.1,
            };
        }
    }
    Ok(table)
}

/// Step size `alpha0 / (1 + k / k0)` for the `k`-th update of a cell
/// (`k` starting at zero), or a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Harmonic { alpha0: f64, k0: f64 },
    Constant(f64),
}

impl LearningRate {
    pub fn alpha(&self, k: u64) -> f64 {
        match *self {
            LearningRate::Harmonic { alpha0, k0 } => alpha0 / (1.0 + k as f64 / k0),
            LearningRate::Constant(a) => a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LearningRate::Harmonic { alpha0, k0 } => alpha0 > 0.0 && alpha0 <= 1.0 && k0 > 0.0,
            LearningRate::Constant(a) => a > 0.0 && a <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(QlbsError::invalid("tabular.alpha0", "step sizes must lie in (0, 1]"))
        }
    }
}

impl Default for LearningRate {
    /// Running average of the targets seen by each cell.
    fn default() -> Self {
        LearningRate::Harmonic { alpha0: 1.0, k0: 1.0 }
    }
}

/// One sampled transition for tabular learning; `a` indexes the action grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub x: usize,
    pub a: usize,
    pub r: f64,
    pub x_next: usize,
}

fn init_learning_table(mdp: &DiscreteMDP) -> QTable {
    let n = mdp.chain.n_states();
    let n_t = mdp.chain.n_steps();
    let mut table = QTable::zeros(n_t, n, &mdp.actions);
    for x in 0..n {
        for a in 0..mdp.actions.len() {
            let i = table.idx(n_t, x, a);
            table.q[i] = mdp.terminal[x];
        }
        table.value[n_t][x] = mdp.terminal[x];
    }
    table
}

fn update(table: &mut QTable, gamma: f64, schedule: &LearningRate, tr: &Transition) {
    let target = tr.r + gamma * table.value[tr.t + 1][tr.x_next];
    let i = table.idx(tr.t, tr.x, tr.a);
    let alpha = schedule.alpha(table.visits[i]);
    table.q[i] += alpha * (target - table.q[i]);
    table.visits[i] += 1;
}

fn finish_slice(table: &mut QTable, t: usize) {
    for x in 0..table.n_states {
        table.value[t][x] = table.grid_max(t, x);
    }
}

/// Tabular Q-learning with exploring starts, one time slice at a time from
/// `T-1` down to 0. Each slice receives `updates_per_slice` updates from
/// uniformly drawn `(x, a)` pairs with `x'` sampled from the chain.
pub fn q_learn(mdp: &DiscreteMDP, schedule: &LearningRate, updates_per_slice: usize, seed: u64) -> Result<QTable> {
    schedule.validate()?;
    let n = mdp.chain.n_states();
    let n_a = mdp.actions.len();
    let mut table = init_learning_table(mdp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in (0..mdp.chain.n_steps()).rev() {
        let p = &mdp.chain.transitions[t];
        let cumulative: Vec<Vec<f64>> = (0..n)
            .map(|x| {
                let mut acc = 0.0;
                p.row(x).iter().map(|v| {
                    acc += v;
                    acc
                }).collect()
            })
            .collect();
        for _ in 0..updates_per_slice {
            let x = rng.random_range(0..n);
            let a = rng.random_range(0..n_a);
            let u: f64 = rng.random::<f64>() * cumulative[x][n - 1];
            let x_next = cumulative[x].partition_point(|&c| c <= u).min(n - 1);
            let r = mdp.reward(t, x, mdp.actions[a], x_next);
            update(&mut table, mdp.gamma, schedule, &Transition { t, x, a, r, x_next });
        }
        finish_slice(&mut table, t);
    }
    Ok(table)
}

/// Q-learning from a recorded stream of transitions; the MDP supplies the
/// grid, discount and terminal values. Transitions are replayed slice by
/// slice from `T-1` down to 0, in their original order within a slice.
pub fn q_learn_stream(mdp: &DiscreteMDP, schedule: &LearningRate, stream: &[Transition]) -> Result<QTable> {
    schedule.validate()?;
    let n = mdp.chain.n_states();
    let n_t = mdp.chain.n_steps();
    if let Some(bad) = stream.iter().find(|tr| tr.t >= n_t || tr.x >= n || tr.x_next >= n || tr.a >= mdp.actions.len()) {
        return Err(QlbsError::invalid("transitions", format!("transition {bad:?} is outside the MDP")));
    }
    let mut table = init_learning_table(mdp);
    for t in (0..n_t).rev() {
        for tr in stream.iter().filter(|tr| tr.t == t) {
            update(&mut table, mdp.gamma, schedule, tr);
        }
        finish_slice(&mut table, t);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_schedule() {
        let s = LearningRate::Harmonic { alpha0: 0.5, k0: 100.0 };
        assert_eq!(s.alpha(0), 0.5);
        assert_eq!(s.alpha(100), 0.25);
        assert!(LearningRate::Constant(1.5).validate().is_err());
    }

    #[test]
    fn action_grid_spans_range() {
        let g = action_grid(5, (-1.0, 1.0)).unwrap();
        assert_eq!(g, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn lattice_paths_count() {
        let p = MarketParams::new(100.0, 0.03, 0.15, 0.03, 5.0 / 24.0, 3).unwrap();
        let (chain, paths) = lattice_instance(&p, 7).unwrap();
        assert_eq!(paths.n_paths(), 64);
        assert_eq!(chain.n_states(), 7);
        for t in 0..=3 {
            for &x in paths.x(t) {
                assert!(chain.grid.iter().any(|g| (g - x).abs() < 1e-12));
            }
        }
    }
}
