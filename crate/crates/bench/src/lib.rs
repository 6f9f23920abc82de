//! Shared fixtures for the criterion benches.

use gpm_core::linalg::orthonormalize_columns;
use gpm_core::seed::{self, splitmix64, Stream};
use gpm_core::{GpmBank, HeadMode, Matrix, Network, Shape};

fn uniform_matrix(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Matrix {
    let mut state = seed;
    Matrix::from_fn(rows, cols, |_, _| {
        state = splitmix64(state);
        lo + (hi - lo) * ((state >> 11) as f64 / (1u64 << 53) as f64)
    })
}

/// Deterministic matrix with entries uniform in `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    uniform_matrix(rows, cols, seed, -1.0, 1.0)
}

/// Deterministic matrix with entries uniform in `[0, 1)`, shaped like a pixel batch.
pub fn pixel_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    uniform_matrix(rows, cols, seed, 0.0, 1.0)
}

/// `rows x cols` matrix of the given rank.
pub fn low_rank_matrix(rows: usize, cols: usize, rank: usize, seed: u64) -> Matrix {
    random_matrix(rows, rank, seed).matmul(&random_matrix(rank, cols, seed ^ 0x5eed))
}

/// The permuted-MNIST network: 784-100-100 with a shared ten-way head.
pub fn pmnist_mlp() -> Network {
    Network::builder(Shape::flat(784))
        .fc(100)
        .relu()
        .fc(100)
        .relu()
        .build(HeadMode::Single, 10, 1, &mut seed::rng(1, Stream::Init, 0))
        .expect("valid architecture")
}

/// Three conv blocks and one hidden FC layer on 1x28x28 input, two-way heads.
pub fn small_conv() -> Network {
    let mut builder = Network::builder(Shape::new(1, 28, 28));
    for channels in [16, 32, 64] {
        builder = builder.conv(channels, 3, 1, 1).relu().max_pool(2, 2);
    }
    builder
        .flatten()
        .fc(100)
        .relu()
        .build(HeadMode::Multi, 2, 5, &mut seed::rng(1, Stream::Init, 0))
        .expect("valid architecture")
}

/// Memory holding `fill` times each layer's dimension in random orthonormal bases.
pub fn filled_bank(net: &Network, fill: f64) -> GpmBank {
    let layers = net.constrained_layers();
    let bases = layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let k = ((l.dim as f64 * fill).round() as usize).min(l.dim);
            orthonormalize_columns(&random_matrix(l.dim, k, 100 + i as u64))
        })
        .collect();
    GpmBank::from_bases(layers, bases).expect("orthonormal bases")
}
