use crate::linalg::svd::{householder, reflect_rows};
use crate::linalg::Matrix;

/// Orthonormal basis for the columns of a tall matrix via Householder QR.
///
/// Column order is preserved: column `j` of the result spans the same nested
/// subspace as columns `0..=j` of the input, and signs are chosen so the
/// triangular factor has a non-negative diagonal. A nearly orthonormal input
/// therefore comes back nearly unchanged.
pub fn orthonormalize_columns(a: &Matrix) -> Matrix {
    let (m, n) = a.shape();
    assert!(m >= n, "orthonormalize_columns needs rows >= cols");
    let mut work = a.clone();
    let mut reflectors = Vec::with_capacity(n);
    let mut diag = Vec::with_capacity(n);
    for k in 0..n {
        let col: Vec<f64> = (k..m).map(|i| work[(i, k)]).collect();
        let (h, alpha) = householder(&col);
        reflect_rows(&mut work, &h, k, k);
        reflectors.push(h);
        diag.push(alpha);
    }
    let mut q = Matrix::zeros(m, n);
    for i in 0..n {
        q[(i, i)] = 1.0;
    }
    for k in (0..n).rev() {
        reflect_rows(&mut q, &reflectors[k], k, k);
    }
    for (j, &alpha) in diag.iter().enumerate() {
        if alpha < 0.0 {
            for i in 0..m {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}
