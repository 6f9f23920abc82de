//! Dense linear algebra: the matrix type, thin SVD, rank selection by
//! retained energy, and basis orthonormality checks.

mod matrix;
mod qr;
mod rank;
mod svd;

pub use matrix::{gemm, product, Matrix, Op};
pub use qr::orthonormalize_columns;
pub use rank::{orthonormality_defect, select_rank};
pub use svd::{svd, SvdResult};

/// Sum of squared entries of `a`.
pub fn frobenius_sq(a: &Matrix) -> f64 {
    a.frobenius_sq()
}
