//! Independent reference implementations used only by tests.
#![allow(dead_code)]

use gpm_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Singular values by one-sided (Hestenes) Jacobi rotations, sorted descending.
pub fn jacobi_singular_values(a: &Matrix) -> Vec<f64> {
    let a = if a.rows() >= a.cols() { a.clone() } else { a.transpose() };
    let n = a.cols();
    // columns as vectors
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    (*x, *y) = (c * *x - s * *y, s * *x + c * *y);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Minimal k by scanning every candidate k = 0..=n.
pub fn brute_force_rank(s: &[f64], total: f64, projected: f64, eps: f64) -> usize {
    for k in 0..=s.len() {
        let captured: f64 = projected + s[..k].iter().map(|v| v * v).sum::<f64>();
        if captured >= eps * total {
            return k;
        }
    }
    s.len()
}

/// Direct convolution of one `c x h x w` image with filters stored as the
/// `(c*k*k) x c_out` matrix, output laid out as `c_out x h_out x w_out`.
pub fn direct_conv(
    input: &[f64],
    (c, h, w): (usize, usize, usize),
    weight: &Matrix,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let c_out = weight.cols();
    let h_out = (h + 2 * pad - k) / stride + 1;
    let w_out = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; c_out * h_out * w_out];
    for o in 0..c_out {
        for y in 0..h_out {
            for x in 0..w_out {
                let mut acc = 0.0;
                for ci in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (x * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let pixel = input[ci * h * w + iy as usize * w + ix as usize];
                            acc += pixel * weight[(ci * k * k + ky * k + kx, o)];
                        }
                    }
                }
                out[o * h_out * w_out + y * w_out + x] = acc;
            }
        }
    }
    out
}

/// Sliding-window patch extraction: one column per output position, rows
/// ordered (channel, ky, kx), zero padding outside the image.
pub fn sliding_patches(input: &[f64], (c, h, w): (usize, usize, usize), k: usize, stride: usize, pad: usize) -> Vec<Vec<f64>> {
    let h_out = (h + 2 * pad - k) / stride + 1;
    let w_out = (w + 2 * pad - k) / stride + 1;
    let mut patches = Vec::new();
    for y in 0..h_out {
        for x in 0..w_out {
            let mut p = Vec::with_capacity(c * k * k);
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (y * stride + ky) as isize - pad as isize;
                        let ix = (x * stride + kx) as isize - pad as isize;
                        let v = if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            0.0
                        } else {
                            input[ci * h * w + iy as usize * w + ix as usize]
                        };
                        p.push(v);
                    }
                }
            }
            patches.push(p);
        }
    }
    patches
}

/// Orthonormal basis of the column span of `a` by modified Gram–Schmidt with
/// reorthogonalization, dropping columns whose remainder is below `tol`.
pub fn span_basis(a: &Matrix, tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let scale = a.max_abs().max(1e-300);
    for j in 0..a.cols() {
        let mut v = a.column(j);
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > tol * scale {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Frobenius norm of the part of each vector outside `span(basis)`.
pub fn residual_outside_span(vectors: &[Vec<f64>], basis: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for v in vectors {
        let mut r = v.clone();
        for b in basis {
            let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        total += r.iter().map(|x| x * x).sum::<f64>();
    }
    total.sqrt()
}
