//! Rank-revealing solves and pseudo-inverses for symmetric PSD systems.
//!
//! Every solve goes through an eigendecomposition with an explicit relative
//! tolerance. Rank deficiency is reported by naming the coefficient labels
//! that dominate the null directions, so collinear regressor or instrument
//! columns are diagnosable from the error alone.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative eigenvalue cutoff below which a direction counts as deficient.
pub const RANK_REL_TOL: f64 = 1e-10;

/// (A + A') / 2, guarding against asymmetry from accumulated roundoff.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (a + a.transpose())
}

fn check_finite(a: &DMatrix<f64>, context: &str) -> Result<()> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite entries in {context}")));
    }
    Ok(())
}

/// Labels of the null-space directions of a symmetric PSD matrix.
fn deficient_labels(
    eigenvalues: &DVector<f64>,
    eigenvectors: &DMatrix<f64>,
    labels: &[String],
    cutoff: f64,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for (j, &lam) in eigenvalues.iter().enumerate() {
        if lam <= cutoff {
            let col = eigenvectors.column(j);
            let mut best = 0usize;
            let mut best_abs = 0.0;
            for (i, &v) in col.iter().enumerate() {
                if v.abs() > best_abs {
                    best_abs = v.abs();
                    best = i;
                }
            }
            let label = labels
                .get(best)
                .cloned()
                .unwrap_or_else(|| format!("column {best}"));
            if !out.contains(&label) {
                out.push(label);
            }
        }
    }
    out
}

/// Solve A x = b for symmetric PSD `a`, erroring on rank deficiency.
///
/// `labels` names the columns of `a` for diagnostics; `context` identifies
/// the solve site in error messages.
pub fn solve_psd(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    labels: &[String],
    context: &str,
) -> Result<DVector<f64>> {
    check_finite(a, context)?;
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = max_ev * RANK_REL_TOL;
    if max_ev <= 0.0 || eig.eigenvalues.iter().any(|&l| l <= cutoff) {
        let bad = deficient_labels(&eig.eigenvalues, &eig.eigenvectors, labels, cutoff);
        return Err(Error::Singular {
            context: context.to_string(),
            labels: bad,
        });
    }
    // x = V diag(1/lambda) V' b
    let vt_b = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        vt_b.len(),
        vt_b.iter().zip(eig.eigenvalues.iter()).map(|(v, l)| v / l),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix.
///
/// Returns the pseudo-inverse and the numerical rank at [`RANK_REL_TOL`].
pub fn pinv_psd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    check_finite(a, "pseudo-inverse")?;
    let sym = symmetrize(a);
    let n = sym.nrows();
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = max_ev * RANK_REL_TOL;
    let mut rank = 0usize;
    let mut inv_ev = DVector::zeros(n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cutoff && l > 0.0 {
            inv_ev[i] = 1.0 / l;
            rank += 1;
        }
    }
    let mut pinv = DMatrix::zeros(n, n);
    for i in 0..n {
        let vi = eig.eigenvectors.column(i);
        if inv_ev[i] != 0.0 {
            pinv += inv_ev[i] * &vi * vi.transpose();
        }
    }
    Ok((symmetrize(&pinv), rank))
}

/// Full inverse of a symmetric PSD matrix, erroring on rank deficiency.
pub fn inv_psd(a: &DMatrix<f64>, labels: &[String], context: &str) -> Result<DMatrix<f64>> {
    check_finite(a, context)?;
    let sym = symmetrize(a);
    let n = sym.nrows();
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = max_ev * RANK_REL_TOL;
    if max_ev <= 0.0 || eig.eigenvalues.iter().any(|&l| l <= cutoff) {
        let bad = deficient_labels(&eig.eigenvalues, &eig.eigenvectors, labels, cutoff);
        return Err(Error::Singular {
            context: context.to_string(),
            labels: bad,
        });
    }
    let mut inv = DMatrix::zeros(n, n);
    for i in 0..n {
        let vi = eig.eigenvectors.column(i);
        inv += (1.0 / eig.eigenvalues[i]) * &vi * vi.transpose();
    }
    Ok(symmetrize(&inv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn solve_well_conditioned() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let x = solve_psd(&a, &b, &labels(2), "test").unwrap();
        let back = &a * &x;
        assert!((back - b).norm() < 1e-12);
    }

    #[test]
    fn singular_names_zero_column() {
        // column 1 is identically zero -> null direction is e1
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let b = DVector::from_column_slice(&[1.0, 0.0]);
        let err = solve_psd(&a, &b, &["x".into(), "cdp".into()], "test").unwrap_err();
        match err {
            Error::Singular { labels, .. } => assert_eq!(labels, vec!["cdp".to_string()]),
            other => panic!("expected singular error, got {other}"),
        }
    }

    #[test]
    fn pinv_matches_inverse_on_full_rank() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let (p, rank) = pinv_psd(&a).unwrap();
        assert_eq!(rank, 2);
        let ident = &a * &p;
        assert!((ident - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn pinv_rank_deficient() {
        // rank-one matrix v v' with v = (1, 1)
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (p, rank) = pinv_psd(&a).unwrap();
        assert_eq!(rank, 1);
        // A P A = A for a pseudo-inverse
        let apa = &a * &p * &a;
        assert!((apa - &a).norm() < 1e-12);
    }
}
