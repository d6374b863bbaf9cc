//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// `(A + A^T) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// non-increasing and eigenvector columns permuted to match.
pub fn sorted_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn eigenvalues_desc(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| y.total_cmp(x));
    v
}

pub fn lambda_min(a: &DMatrix<f64>) -> f64 {
    eigenvalues_desc(a).last().copied().unwrap_or(0.0)
}

pub fn lambda_max(a: &DMatrix<f64>) -> f64 {
    eigenvalues_desc(a).first().copied().unwrap_or(0.0)
}

/// Spectral norm of a symmetric matrix: largest absolute eigenvalue.
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    eigenvalues_desc(a)
        .into_iter()
        .fold(0.0, |m, v| m.max(v.abs()))
}

/// Spectral norm of a general matrix via its singular values.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |m, &s| m.max(s))
}

/// Signed log-determinant via partial-pivot LU: `(sign, ln|det|)`.
///
/// Working in log space keeps determinants of `n = 100` Gram matrices with
/// tiny eigenvalues representable.
pub fn log_det(a: &DMatrix<f64>) -> (f64, f64) {
    let n = a.nrows();
    if n == 0 {
        return (1.0, 0.0);
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let mut sign = if lu.p().determinant::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let mut acc = 0.0;
    for i in 0..n {
        let d = u[(i, i)];
        if d == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if d < 0.0 {
            sign = -sign;
        }
        acc += d.abs().ln();
    }
    (sign, acc)
}

/// Sum whose value does not depend on the order of `terms`: the terms are
/// sorted before accumulation, so any permutation gives the same bits.
pub fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_eigen_reconstructs() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        let (vals, vecs) = sorted_eigen(&a);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let rec = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((rec - a).norm() < 1e-12);
    }

    #[test]
    fn log_det_matches_determinant() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        let (s, l) = log_det(&a);
        assert_eq!(s, 1.0);
        assert!((l.exp() - 4.0).abs() < 1e-12);

        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (s, l) = log_det(&b);
        assert_eq!(s, -1.0);
        assert!(l.abs() < 1e-15);
    }

    #[test]
    fn sorted_sum_is_permutation_invariant() {
        let mut a = vec![1e16, 1.0, -1e16, 3.5, 1e-3, -2.25];
        let mut b = vec![-2.25, 1e-3, 1e16, 3.5, -1e16, 1.0];
        assert_eq!(sorted_sum(&mut a).to_bits(), sorted_sum(&mut b).to_bits());
    }

    #[test]
    fn singular_log_det() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let (s, l) = log_det(&a);
        assert!(s == 0.0 || l < -30.0);
    }
}
