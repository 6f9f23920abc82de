use crate::error::{GpmError, Result};
use crate::linalg::Matrix;

/// Smallest `k` such that
/// `projected_energy + sum(singular_values[..k]^2) >= eps_th * total_energy`.
///
/// `total_energy` is the squared Frobenius norm of the full representation and
/// `projected_energy` the part already captured by stored bases. Returns 0
/// when the projected energy alone meets the threshold and the number of
/// singular values when even all of them fall short (round-off).
pub fn select_rank(
    singular_values: &[f64],
    total_energy: f64,
    projected_energy: f64,
    eps_th: f64,
) -> Result<usize> {
    if !(eps_th > 0.0 && eps_th <= 1.0) {
        return Err(GpmError::Validation(format!(
            "threshold must lie in (0, 1], got {eps_th}"
        )));
    }
    if !(total_energy >= 0.0 && projected_energy >= 0.0) {
        return Err(GpmError::Validation(format!(
            "energies must be non-negative, got total {total_energy}, projected {projected_energy}"
        )));
    }
    let target = eps_th * total_energy;
    let mut captured = projected_energy;
    if captured >= target {
        return Ok(0);
    }
    for (i, s) in singular_values.iter().enumerate() {
        captured += s * s;
        if captured >= target {
            return Ok(i + 1);
        }
    }
    Ok(singular_values.len())
}

/// `max |M^T M - I|`; zero for a matrix without columns.
pub fn orthonormality_defect(m: &Matrix) -> f64 {
    if m.cols() == 0 {
        return 0.0;
    }
    let gram = m.t_matmul(m);
    let mut worst: f64 = 0.0;
    for i in 0..gram.rows() {
        for (j, &g) in gram.row(i).iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}
