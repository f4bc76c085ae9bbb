//! Small dense least-squares helpers shared by the solvers.
//!
//! Every normal-equation solve adds a ridge of `1e-8 * trace(A) / M` to the
//! diagonal, factors with Cholesky and falls back to LU.

use nalgebra::{DMatrix, DVector};

use crate::basis::Design;
use crate::error::{QlbsError, Result};

pub const RIDGE_SCALE: f64 = 1e-8;

/// Weighted Gram matrix `sum_k w_k phi_k phi_k^T`.
pub fn weighted_gram(design: &Design, weights: Option<&[f64]>) -> DMatrix<f64> {
    let m = design.cols();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for k in 0..design.rows() {
        let w = weights.map_or(1.0, |w| w[k]);
        if w == 0.0 {
            continue;
        }
        let row = design.row(k);
        for i in 0..m {
            let pi = row[i];
            if pi == 0.0 {
                continue;
            }
            let wpi = w * pi;
            for j in i..m {
                let pj = row[j];
                if pj != 0.0 {
                    a[(i, j)] += wpi * pj;
                }
            }
        }
    }
    symmetrize_upper(&mut a);
    a
}

/// `sum_k phi_k y_k`.
pub fn design_t_times(design: &Design, y: &[f64]) -> DVector<f64> {
    let m = design.cols();
    let mut b = DVector::<f64>::zeros(m);
    for (k, &yk) in y.iter().enumerate() {
        if yk == 0.0 {
            continue;
        }
        for (i, &p) in design.row(k).iter().enumerate() {
            b[i] += p * yk;
        }
    }
    b
}

/// Fitted values `phi_k^T beta` for every row.
pub fn fitted(design: &Design, beta: &DVector<f64>) -> Vec<f64> {
    (0..design.rows()).map(|k| dot_row(design.row(k), beta)).collect()
}

pub fn dot_row(row: &[f64], beta: &DVector<f64>) -> f64 {
    row.iter().zip(beta.iter()).map(|(p, b)| p * b).sum()
}

pub(crate) fn symmetrize_upper(a: &mut DMatrix<f64>) {
    let m = a.nrows();
    for i in 0..m {
        for j in 0..i {
            a[(i, j)] = a[(j, i)];
        }
    }
}

fn ridge_of(a: &DMatrix<f64>) -> f64 {
    let m = a.nrows().max(1);
    RIDGE_SCALE * a.trace() / m as f64
}

fn factor_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Solve `(A + eps I) x = b` with `eps = 1e-8 trace(A)/M`.
///
/// A zero matrix is accepted only together with a zero right-hand side, in
/// which case the solution is the zero vector.
pub fn ridge_solve(a: &DMatrix<f64>, b: &DVector<f64>, module: &'static str, t: Option<usize>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(QlbsError::shape(module, format!("{}x{} system with rhs of length {}", a.nrows(), a.ncols(), b.len())));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(QlbsError::NonFinite {
            module,
            t,
            condition: "normal equations contain NaN or infinity".into(),
        });
    }
    let tr = a.trace();
    if tr <= 0.0 {
        let bscale = b.amax();
        if bscale == 0.0 {
            return Ok(DVector::zeros(b.len()));
        }
        return Err(QlbsError::degenerate(
            module,
            t,
            format!("normal matrix is zero but right-hand side has magnitude {bscale:e}"),
        ));
    }
    let mut reg = a.clone();
    let eps = ridge_of(a);
    for i in 0..reg.nrows() {
        reg[(i, i)] += eps;
    }
    factor_solve(&reg, b).ok_or_else(|| QlbsError::SingularSystem {
        module,
        t,
        condition: format!("Cholesky and LU both failed (trace {tr:e})"),
    })
}

/// Minimum-norm least-squares solve of `A x = b` for symmetric positive
/// semi-definite `A`, by eigendecomposition. Directions with curvature below
/// `1e-13` of the largest eigenvalue are treated as null.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DVector<f64>, module: &'static str, t: Option<usize>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(QlbsError::shape(module, "system and right-hand side differ in size"));
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(QlbsError::NonFinite { module, t, condition: "non-finite entry in a least-squares system".into() });
    }
    let eig = a.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if top == 0.0 {
        if b.amax() == 0.0 {
            return Ok(DVector::zeros(b.len()));
        }
        return Err(QlbsError::degenerate(module, t, "least-squares system is identically zero"));
    }
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter().zip(eig.eigenvalues.iter()).map(|(p, &l)| if l > 1e-13 * top { p / l } else { 0.0 }),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Least-squares projection onto the columns of a fixed design.
///
/// Used for conditional means and conditional moments: `E[y | X]` is read off
/// as the fitted values of a regression of `y` on the basis.
pub struct Projector<'a> {
    design: &'a Design,
    gram: DMatrix<f64>,
    module: &'static str,
    t: Option<usize>,
}

impl<'a> Projector<'a> {
    pub fn new(design: &'a Design, module: &'static str, t: Option<usize>) -> Self {
        Projector {
            design,
            gram: weighted_gram(design, None),
            module,
            t,
        }
    }

    pub fn coeffs(&self, y: &[f64]) -> Result<DVector<f64>> {
        let rhs = design_t_times(self.design, y);
        pinv_solve(&self.gram, &rhs, self.module, self.t)
    }

    pub fn fit(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(fitted(self.design, &self.coeffs(y)?))
    }

    /// `y - E[y | X]`.
    pub fn residual(&self, y: &[f64]) -> Result<Vec<f64>> {
        let f = self.fit(y)?;
        Ok(y.iter().zip(&f).map(|(a, b)| a - b).collect())
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Biased (1/N) variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    mean(&v.iter().map(|x| (x - m) * (x - m)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_system_with_zero_rhs_gives_zero() {
        let a = DMatrix::zeros(2, 2);
        let b = DVector::zeros(2);
        assert_eq!(ridge_solve(&a, &b, "t", None).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn zero_system_with_nonzero_rhs_is_degenerate() {
        let a = DMatrix::zeros(2, 2);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let err = ridge_solve(&a, &b, "t", Some(3)).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn pinv_matches_exact_solve_and_skips_null_directions() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let exact = a.clone().lu().solve(&b).unwrap();
        let plain = ridge_solve(&a, &b, "t", None).unwrap();
        assert!((plain - &exact).amax() > 1e-10);
        assert!((pinv_solve(&a, &b, "t", None).unwrap() - exact).amax() < 1e-14);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let x = pinv_solve(&s, &DVector::from_vec(vec![3.0, 0.0]), "t", None).unwrap();
        assert_eq!(x, DVector::from_vec(vec![3.0, 0.0]));
    }

    #[test]
    fn biased_variance() {
        assert_eq!(variance(&[1.0, 3.0]), 1.0);
    }
}
