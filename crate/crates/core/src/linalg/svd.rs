//! Thin singular value decomposition by Householder bidiagonalization
//! followed by implicit-shift QR sweeps on the bidiagonal (Golub–Kahan–Reinsch).

use crate::error::{GpmError, Result};
use crate::linalg::Matrix;

/// Thin SVD `A = U * diag(s) * Vt`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x min(rows, cols)`, orthonormal columns.
    pub u: Matrix,
    /// Non-negative, sorted non-increasing.
    pub s: Vec<f64>,
    /// `min(rows, cols) x cols`, orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    /// Number of singular values strictly above `rel_tol * s[0]`.
    pub fn numerical_rank(&self, rel_tol: f64) -> usize {
        let top = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().take_while(|&&v| v > rel_tol * top && v > 0.0).count()
    }

    /// `U * diag(s) * Vt`.
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt)
    }
}

/// Sweep budget per singular value before giving up.
const SWEEPS_PER_VALUE: usize = 100;

/// Computes the thin SVD of `a`.
///
/// Singular vectors follow a fixed sign convention: the first entry of each
/// left singular vector whose magnitude exceeds `1e-12` is positive.
pub fn svd(a: &Matrix) -> Result<SvdResult> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(GpmError::Validation(format!(
            "svd needs a non-empty matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(GpmError::Validation("svd input has non-finite entries".into()));
    }

    let (mut ut, s, mut vrows) = if a.rows() >= a.cols() {
        let f = factor_tall(a)?;
        (f.ut, f.s, f.vrows)
    } else {
        // a^T = U' S V'^T  =>  a = V' S U'^T
        let f = factor_tall(&a.transpose())?;
        (f.vrows, f.s, f.ut)
    };

    // ut rows are left singular vectors, vrows rows are right singular vectors.
    for i in 0..s.len() {
        let lead = ut.row(i).iter().copied().find(|v| v.abs() > 1e-12);
        if matches!(lead, Some(v) if v < 0.0) {
            ut.row_mut(i).iter_mut().for_each(|v| *v = -*v);
            vrows.row_mut(i).iter_mut().for_each(|v| *v = -*v);
        }
    }

    Ok(SvdResult {
        u: ut.transpose(),
        s,
        vt: vrows,
    })
}

/// Factorization of a tall (`m >= n`) matrix with singular vectors stored as rows.
struct TallFactors {
    /// `n x m`, row `i` is the i-th left singular vector.
    ut: Matrix,
    s: Vec<f64>,
    /// `n x n`, row `i` is the i-th right singular vector.
    vrows: Matrix,
}

pub(super) struct Reflector {
    v: Vec<f64>,
    beta: f64,
}

/// Householder vector mapping `x` onto `alpha * e1`; returns (reflector, alpha).
pub(super) fn householder(x: &[f64]) -> (Reflector, f64) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (
            Reflector {
                v: vec![0.0; x.len()],
                beta: 0.0,
            },
            0.0,
        );
    }
    let alpha = if x[0] >= 0.0 { -norm } else { norm };
    let mut v = x.to_vec();
    v[0] -= alpha;
    let vtv: f64 = v.iter().map(|t| t * t).sum();
    let beta = if vtv == 0.0 { 0.0 } else { 2.0 / vtv };
    (Reflector { v, beta }, alpha)
}

/// Applies `I - beta v v^T` from the left to rows `r0..` and columns `c0..` of `m`.
pub(super) fn reflect_rows(m: &mut Matrix, h: &Reflector, r0: usize, c0: usize) {
    if h.beta == 0.0 {
        return;
    }
    let cols = m.cols();
    let mut w = vec![0.0; cols - c0];
    for (k, &vk) in h.v.iter().enumerate() {
        if vk != 0.0 {
            for (wj, &b) in w.iter_mut().zip(&m.row(r0 + k)[c0..]) {
                *wj += vk * b;
            }
        }
    }
    for (k, &vk) in h.v.iter().enumerate() {
        let f = h.beta * vk;
        if f != 0.0 {
            for (b, &wj) in m.row_mut(r0 + k)[c0..].iter_mut().zip(&w) {
                *b -= f * wj;
            }
        }
    }
}

/// Applies `I - beta v v^T` from the right to rows `r0..` and columns `c0..` of `m`.
fn reflect_cols(m: &mut Matrix, h: &Reflector, r0: usize, c0: usize) {
    if h.beta == 0.0 {
        return;
    }
    for i in r0..m.rows() {
        let row = &mut m.row_mut(i)[c0..];
        let dot: f64 = row.iter().zip(&h.v).map(|(a, b)| a * b).sum();
        let f = h.beta * dot;
        if f != 0.0 {
            for (a, &vk) in row.iter_mut().zip(&h.v) {
                *a -= f * vk;
            }
        }
    }
}

/// Rotates rows `i` and `j` of `m`: `(r_i, r_j) <- (c r_i + s r_j, -s r_i + c r_j)`.
fn rotate_rows(m: &mut Matrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (lo, hi, swap) = if i < j { (i, j, false) } else { (j, i, true) };
    let (head, tail) = data.split_at_mut(hi * cols);
    let a = &mut head[lo * cols..(lo + 1) * cols];
    let b = &mut tail[..cols];
    let (ri, rj) = if swap { (b, a) } else { (a, b) };
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let (xi, yj) = (*x, *y);
        *x = c * xi + s * yj;
        *y = -s * xi + c * yj;
    }
}

/// `(c, s, r)` with `c f + s g = r` and `-s f + c g = 0`.
fn givens(f: f64, g: f64) -> (f64, f64, f64) {
    if g == 0.0 {
        (1.0, 0.0, f)
    } else {
        let r = f.hypot(g);
        (f / r, g / r, r)
    }
}

fn factor_tall(a: &Matrix) -> Result<TallFactors> {
    let (m, n) = a.shape();
    debug_assert!(m >= n && n >= 1);

    let mut b = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n.saturating_sub(1)];
    let mut left = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n.saturating_sub(2));

    for k in 0..n {
        let col: Vec<f64> = (k..m).map(|i| b[(i, k)]).collect();
        let (h, alpha) = householder(&col);
        reflect_rows(&mut b, &h, k, k);
        d[k] = alpha;
        left.push(h);

        if k + 1 < n {
            let row = b.row(k)[k + 1..].to_vec();
            let (h, alpha) = householder(&row);
            reflect_cols(&mut b, &h, k, k + 1);
            e[k] = alpha;
            right.push(h);
        }
    }

    // U = H_0 ... H_{n-1} [I; 0]
    let mut u = Matrix::zeros(m, n);
    for i in 0..n {
        u[(i, i)] = 1.0;
    }
    for k in (0..n).rev() {
        reflect_rows(&mut u, &left[k], k, k);
    }
    // V = G_0 ... G_{n-2} acting on coordinates k+1..
    let mut v = Matrix::identity(n);
    for k in (0..right.len()).rev() {
        reflect_rows(&mut v, &right[k], k + 1, k + 1);
    }

    let mut ut = u.transpose();
    let mut vrows = v.transpose();
    diagonalize(&mut d, &mut e, &mut ut, &mut vrows)?;

    for (i, di) in d.iter_mut().enumerate() {
        if *di < 0.0 {
            *di = -*di;
            vrows.row_mut(i).iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    Ok(TallFactors {
        ut: ut.select_rows(&order),
        s: order.iter().map(|&i| d[i]).collect(),
        vrows: vrows.select_rows(&order),
    })
}

/// Drives the superdiagonal `e` to zero, accumulating left rotations into the
/// rows of `ut` and right rotations into the rows of `vrows`.
fn diagonalize(d: &mut [f64], e: &mut [f64], ut: &mut Matrix, vrows: &mut Matrix) -> Result<()> {
    let n = d.len();
    if n < 2 {
        return Ok(());
    }
    let eps = f64::EPSILON;
    let anorm = (0..n)
        .map(|i| d[i].abs() + e.get(i).map_or(0.0, |v| v.abs()))
        .fold(0.0, f64::max);
    let max_sweeps = SWEEPS_PER_VALUE * n;
    let mut sweeps = 0;

    loop {
        for i in 0..n - 1 {
            if e[i].abs() <= eps * (d[i].abs() + d[i + 1].abs()) {
                e[i] = 0.0;
            }
        }
        let mut q = n - 1;
        while q > 0 && e[q - 1] == 0.0 {
            q -= 1;
        }
        if q == 0 {
            return Ok(());
        }
        let mut p = q - 1;
        while p > 0 && e[p - 1] != 0.0 {
            p -= 1;
        }

        sweeps += 1;
        if sweeps > max_sweeps {
            return Err(GpmError::NumericFailure {
                what: "svd",
                iterations: max_sweeps,
                residual: e.iter().fold(0.0, |m, v| m.max(v.abs())),
            });
        }

        if let Some(i) = (p..=q).find(|&i| d[i].abs() <= eps * anorm) {
            d[i] = 0.0;
            if i < q {
                chase_row(d, e, ut, i, q);
            } else {
                chase_column(d, e, vrows, p, q);
            }
            continue;
        }
        qr_sweep(d, e, ut, vrows, p, q);
    }
}

/// `d[i] == 0`: removes `e[i]` with left rotations against rows `i+1..=q`.
fn chase_row(d: &mut [f64], e: &mut [f64], ut: &mut Matrix, i: usize, q: usize) {
    let mut bulge = e[i];
    e[i] = 0.0;
    for j in i + 1..=q {
        let (c, s, r) = givens(d[j], bulge);
        d[j] = r;
        if j < q {
            bulge = -s * e[j];
            e[j] *= c;
        }
        rotate_rows(ut, j, i, c, s);
    }
}

/// `d[q] == 0`: removes `e[q-1]` with right rotations against columns `q-1..=p`.
fn chase_column(d: &mut [f64], e: &mut [f64], vrows: &mut Matrix, p: usize, q: usize) {
    let mut bulge = e[q - 1];
    e[q - 1] = 0.0;
    for j in (p..q).rev() {
        let (c, s, r) = givens(d[j], bulge);
        d[j] = r;
        if j > p {
            bulge = -s * e[j - 1];
            e[j - 1] *= c;
        }
        rotate_rows(vrows, j, q, c, s);
    }
}

/// One implicit Wilkinson-shifted QR step on the unreduced block `p..=q`.
fn qr_sweep(d: &mut [f64], e: &mut [f64], ut: &mut Matrix, vrows: &mut Matrix, p: usize, q: usize) {
    let dm = d[q - 1];
    let dn = d[q];
    let em = e[q - 1];
    let emm = if q - 1 > p { e[q - 2] } else { 0.0 };
    let t11 = dm * dm + emm * emm;
    let t12 = dm * em;
    let t22 = dn * dn + em * em;
    let delta = 0.5 * (t11 - t22);
    let denom = delta + delta.signum() * delta.hypot(t12);
    let mu = if denom == 0.0 { t22 - t12.abs() } else { t22 - t12 * t12 / denom };

    let mut y = d[p] * d[p] - mu;
    let mut z = d[p] * e[p];
    for k in p..q {
        let (c, s, r) = givens(y, z);
        if k > p {
            e[k - 1] = r;
        }
        let dk = c * d[k] + s * e[k];
        e[k] = -s * d[k] + c * e[k];
        d[k] = dk;
        let bulge = s * d[k + 1];
        d[k + 1] *= c;
        rotate_rows(vrows, k, k + 1, c, s);

        let (c, s, r) = givens(d[k], bulge);
        d[k] = r;
        let ek = c * e[k] + s * d[k + 1];
        d[k + 1] = -s * e[k] + c * d[k + 1];
        e[k] = ek;
        if k + 1 < q {
            y = e[k];
            z = s * e[k + 1];
            e[k + 1] *= c;
        }
        rotate_rows(ut, k, k + 1, c, s);
    }
}
