//! Thin wrappers over nalgebra's dense decompositions.

use nalgebra::{DMatrix, SymmetricEigen};

/// Eigenvalues (descending) and matching unit eigenvectors (columns of the
/// returned row-major `n x n` matrix) of a symmetric matrix.
pub fn symmetric_eigen(n: usize, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_row_slice(n, n, a);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vectors[r * n + c] = eig.eigenvectors[(r, i)];
        }
    }
    (values, vectors)
}

pub fn symmetric_eigenvalues(n: usize, a: &[f64]) -> Vec<f64> {
    symmetric_eigen(n, a).0
}

/// Singular values (descending) of a row-major `rows x cols` matrix.
pub fn singular_values(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(rows, cols, a);
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Singular values plus the leading right singular vector.
pub fn svd_top(rows: usize, cols: usize, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_row_slice(rows, cols, a);
    let svd = m.svd(false, true);
    let vt = svd.v_t.as_ref().unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let values = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = (0..cols).map(|c| vt[(order[0], c)]).collect();
    (values, top)
}

/// Count of values above `rel * max`.
pub fn numeric_rank(values: &[f64], rel: f64) -> usize {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    values.iter().filter(|v| v.abs() > rel * max).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_small_symmetric() {
        let (vals, vecs) = symmetric_eigen(2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        assert!((vecs[0].abs() - vecs[2].abs()).abs() < 1e-12);
    }

    #[test]
    fn rank_of_outer_product() {
        let a = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        assert_eq!(numeric_rank(&singular_values(3, 2, &a), 1e-10), 1);
    }
}
