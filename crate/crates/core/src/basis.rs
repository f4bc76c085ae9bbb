//! Basis functions of the one-dimensional state variable.
//!
//! Three families are available: one-hot indicators (finite-state case),
//! clamped B-splines with knots at sample quantiles, and Gaussian radial
//! basis functions. A fitted [`BasisSet`] is immutable and evaluates any
//! state, clamping to the fitted range for the smooth families.

use std::fmt;
use std::str::FromStr;

use crate::error::{QlbsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    OneHot,
    BSpline,
    Rbf,
}

impl FromStr for BasisKind {
    type Err = QlbsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_hot" | "one_hot_grid" | "onehot" => Ok(BasisKind::OneHot),
            "bspline" | "b_spline" => Ok(BasisKind::BSpline),
            "rbf" => Ok(BasisKind::Rbf),
            _ => Err(QlbsError::invalid("basis.kind", format!("unknown basis family `{s}`"))),
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisKind::OneHot => "one_hot",
            BasisKind::BSpline => "bspline",
            BasisKind::Rbf => "rbf",
        })
    }
}

/// What to build; the sample fixes knots, bins or centres.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub m: usize,
    /// Spline degree (ignored by the other families).
    pub degree: usize,
    /// RBF bandwidth; `None` picks the mean centre spacing.
    pub bandwidth: Option<f64>,
}

impl BasisSpec {
    pub fn bspline(m: usize) -> Self {
        BasisSpec { kind: BasisKind::BSpline, m, degree: 3, bandwidth: None }
    }
    pub fn one_hot(m: usize) -> Self {
        BasisSpec { kind: BasisKind::OneHot, m, degree: 0, bandwidth: None }
    }
    pub fn rbf(m: usize, bandwidth: Option<f64>) -> Self {
        BasisSpec { kind: BasisKind::Rbf, m, degree: 0, bandwidth }
    }
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::bspline(12)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// `m` bins split at `edges` (length m-1, non-decreasing). A state falls
    /// in bin `i` when `edges[i-1] <= x < edges[i]`.
    OneHot { edges: Vec<f64> },
    /// Full clamped knot vector of length `m + degree + 1`.
    BSpline { knots: Vec<f64>, degree: usize },
    Rbf { centers: Vec<f64>, bandwidth: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    repr: Repr,
}

/// Dense row-major N x M design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }
    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.data[k * self.cols + j]
    }
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Design { rows, cols, data }
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    // Linear interpolation between order statistics.
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(QlbsError::invalid("samples", "empty sample"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(QlbsError::invalid("samples", "non-finite state value"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Fit a basis to pooled state samples.
pub fn build_basis(spec: &BasisSpec, samples: &[f64]) -> Result<BasisSet> {
    if spec.m == 0 {
        return Err(QlbsError::invalid("basis.m", "must be at least 1"));
    }
    let sorted = sorted_finite(samples)?;
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    match spec.kind {
        BasisKind::OneHot => {
            let mut distinct = sorted.clone();
            distinct.dedup();
            if spec.m > distinct.len() {
                return Err(QlbsError::invalid(
                    "basis.m",
                    format!("{} one-hot bins exceed the {} distinct sample values", spec.m, distinct.len()),
                ));
            }
            if spec.m == distinct.len() {
                return BasisSet::one_hot_nodes(&distinct);
            }
            let w = (max - min) / spec.m as f64;
            let edges = (1..spec.m).map(|i| min + w * i as f64).collect();
            Ok(BasisSet { repr: Repr::OneHot { edges } })
        }
        BasisKind::BSpline => {
            let degree = spec.degree;
            if spec.m < degree + 1 {
                return Err(QlbsError::invalid(
                    "basis.m",
                    format!("a degree-{degree} spline needs at least {} functions", degree + 1),
                ));
            }
            let n_int = spec.m - degree - 1;
            let (lo, hi) = widen(min, max);
            let mut inner: Vec<f64> = (1..=n_int)
                .map(|i| quantile_sorted(&sorted, i as f64 / (n_int + 1) as f64))
                .collect();
            let increasing = inner.iter().all(|&k| k > lo && k < hi) && inner.windows(2).all(|w| w[0] < w[1]);
            if !increasing {
                let step = (hi - lo) / (n_int + 1) as f64;
                inner = (1..=n_int).map(|i| lo + step * i as f64).collect();
            }
            let pad = (hi - lo) / (n_int + 1) as f64;
            let mut breaks = Vec::with_capacity(n_int + 2);
            breaks.push(lo - pad);
            breaks.extend(inner);
            breaks.push(hi + pad);
            BasisSet::bspline_with_breakpoints(&breaks, degree)
        }
        BasisKind::Rbf => {
            let (lo, hi) = widen(min, max);
            let centers: Vec<f64> = (0..spec.m)
                .map(|i| quantile_sorted(&sorted, (i as f64 + 0.5) / spec.m as f64))
                .collect();
            let bandwidth = spec.bandwidth.unwrap_or((hi - lo) / spec.m as f64);
            BasisSet::rbf_with_centers(&centers, bandwidth, lo, hi)
        }
    }
}

/// Guard against a zero-width sample range.
fn widen(min: f64, max: f64) -> (f64, f64) {
    if max - min > 1e-12 * (1.0 + min.abs().max(max.abs())) {
        (min, max)
    } else {
        let h = 1e-3 * (1.0 + min.abs());
        (min - h, max + h)
    }
}

impl BasisSet {
    /// A single constant function; regression on it is the sample mean.
    pub fn constant() -> Self {
        BasisSet { repr: Repr::OneHot { edges: Vec::new() } }
    }

    /// One indicator per grid node, splitting at midpoints between nodes.
    pub fn one_hot_nodes(nodes: &[f64]) -> Result<Self> {
        if nodes.is_empty() || nodes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QlbsError::invalid("nodes", "grid nodes must be non-empty and strictly increasing"));
        }
        let edges = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(BasisSet { repr: Repr::OneHot { edges } })
    }

    /// Clamped spline on the given breakpoints (first and last are the
    /// boundary knots, repeated `degree + 1` times).
    pub fn bspline_with_breakpoints(breaks: &[f64], degree: usize) -> Result<Self> {
        if breaks.len() < 2 || breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QlbsError::invalid("breakpoints", "need at least two strictly increasing breakpoints"));
        }
        let mut knots = vec![breaks[0]; degree];
        knots.extend_from_slice(breaks);
        knots.extend(std::iter::repeat(breaks[breaks.len() - 1]).take(degree));
        Ok(BasisSet { repr: Repr::BSpline { knots, degree } })
    }

    pub fn rbf_with_centers(centers: &[f64], bandwidth: f64, lo: f64, hi: f64) -> Result<Self> {
        if centers.is_empty() || !(bandwidth > 0.0) || !(lo <= hi) {
            return Err(QlbsError::invalid("rbf", "need centres, a positive bandwidth and lo <= hi"));
        }
        Ok(BasisSet {
            repr: Repr::Rbf { centers: centers.to_vec(), bandwidth, lo, hi },
        })
    }

    pub fn kind(&self) -> BasisKind {
        match self.repr {
            Repr::OneHot { .. } => BasisKind::OneHot,
            Repr::BSpline { .. } => BasisKind::BSpline,
            Repr::Rbf { .. } => BasisKind::Rbf,
        }
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::OneHot { edges } => edges.len() + 1,
            Repr::BSpline { knots, degree } => knots.len() - degree - 1,
            Repr::Rbf { centers, .. } => centers.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// True when the functions sum to one at every state.
    pub fn is_partition_of_unity(&self) -> bool {
        !matches!(self.repr, Repr::Rbf { .. })
    }

    /// Index of the one-hot bin containing `x` (None for other families).
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        match &self.repr {
            Repr::OneHot { edges } => Some(edges.partition_point(|&e| e <= x)),
            _ => None,
        }
    }

    /// Write `Phi(x)` into `out` (length `len()`).
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.repr {
            Repr::OneHot { edges } => {
                out[edges.partition_point(|&e| e <= x)] = 1.0;
            }
            Repr::BSpline { knots, degree } => {
                let m = knots.len() - degree - 1;
                let lo = knots[*degree];
                let hi = knots[m];
                let x = x.clamp(lo, hi);
                // Span index with knots[span] <= x < knots[span+1]; the
                // right boundary belongs to the last non-empty span.
                let span = (knots.partition_point(|&k| k <= x) - 1).min(m - 1);
                let vals = cox_de_boor(knots, *degree, span, x);
                out[span - degree..=span].copy_from_slice(&vals);
            }
            Repr::Rbf { centers, bandwidth, lo, hi } => {
                let x = x.clamp(*lo, *hi);
                let s2 = 2.0 * bandwidth * bandwidth;
                for (o, c) in out.iter_mut().zip(centers) {
                    *o = (-(x - c) * (x - c) / s2).exp();
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.eval_into(x, &mut v);
        v
    }

    /// N x M design matrix for a cross-section of states.
    pub fn evaluate(&self, states: &[f64]) -> Design {
        let m = self.len();
        let mut data = vec![0.0; states.len() * m];
        for (k, &x) in states.iter().enumerate() {
            self.eval_into(x, &mut data[k * m..(k + 1) * m]);
        }
        Design { rows: states.len(), cols: m, data }
    }
}

/// Non-zero B-spline values `N_{span-d..=span, d}(x)` by the triangular
/// Cox-de Boor scheme.
fn cox_de_boor(knots: &[f64], degree: usize, span: usize, x: f64) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    n[0] = 1.0;
    for j in 1..=degree {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
    }
    n
}
