//! Generated datasets for tests and offline runs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{sequence, task_from_sets, BaseDataset, LabeledSet, TaskSequence};
use crate::error::{GpmError, Result};
use crate::linalg::Matrix;
use crate::nn::{HeadMode, Shape};
use crate::seed::{self, Stream};

/// Distance every synthetic subspace sample keeps from its class boundary.
pub const SUBSPACE_MARGIN: f64 = 0.5;

fn subspace_set<R: Rng>(rng: &mut R, d: usize, offset: usize, w: &[f64], n: usize) -> Result<LabeledSet> {
    let dim = w.len();
    let mut x = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let side = u.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() >= 0.0;
        let sign = if side { 1.0 } else { -1.0 };
        let row = x.row_mut(i);
        for j in 0..dim {
            row[offset + j] = u[j] + sign * SUBSPACE_MARGIN * w[j];
        }
        labels.push(usize::from(side));
    }
    LabeledSet::new(x, labels)
}

/// `tasks` two-class tasks in `d` dimensions; task `t` (one-based) lives on
/// coordinates `(t-1)*subspace_dim .. t*subspace_dim` and is split by a random
/// hyperplane through the origin with margin [`SUBSPACE_MARGIN`].
///
/// Each task has `samples` training, `samples / 10` validation (at least one)
/// and `samples` test points. Intended for multi-head networks.
pub fn make_synthetic_subspace_tasks(d: usize, subspace_dim: usize, tasks: usize, samples: usize, seed: u64) -> Result<TaskSequence> {
    if subspace_dim == 0 || tasks == 0 || samples == 0 {
        return Err(GpmError::Validation("subspace tasks need positive dimension, task count and sample count".into()));
    }
    if tasks * subspace_dim > d {
        return Err(GpmError::Validation(format!("{tasks} subspaces of dimension {subspace_dim} do not fit in {d} dimensions")));
    }
    let mut out = Vec::with_capacity(tasks);
    for id in 1..=tasks {
        let mut rng = seed::rng(seed, Stream::Synthetic, id as u64);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut w: Vec<f64> = (0..subspace_dim).map(|_| normal.sample(&mut rng)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        w.iter_mut().for_each(|v| *v /= norm);
        let offset = (id - 1) * subspace_dim;
        let train = subspace_set(&mut rng, d, offset, &w, samples)?;
        let validation = subspace_set(&mut rng, d, offset, &w, (samples / 10).max(1))?;
        let test = subspace_set(&mut rng, d, offset, &w, samples)?;
        out.push(task_from_sets(id, 2, Shape::flat(d), train, validation, test));
    }
    sequence(out, HeadMode::Multi)
}

/// Ten classes of `1 x size x size` images, each class a fixed pattern of
/// Gaussian blobs with random per-sample intensity and pixel noise, clamped
/// to `[0, 1]`. Returns `train_per_class` and `test_per_class` samples per class.
pub fn make_synthetic_class_images(size: usize, train_per_class: usize, test_per_class: usize, seed: u64) -> Result<BaseDataset> {
    const CLASSES: usize = 10;
    const BLOBS: usize = 3;
    if size < 4 || train_per_class == 0 || test_per_class == 0 {
        return Err(GpmError::Validation("synthetic images need size >= 4 and at least one sample per class".into()));
    }
    let mut rng = seed::rng(seed, Stream::Synthetic, 0);
    let pixels = size * size;
    let prototypes: Vec<Vec<f64>> = (0..CLASSES)
        .map(|_| {
            let blobs: Vec<(f64, f64, f64)> = (0..BLOBS)
                .map(|_| {
                    let c = size as f64;
                    (rng.random_range(0.15 * c..0.85 * c), rng.random_range(0.15 * c..0.85 * c), rng.random_range(0.08 * c..0.2 * c))
                })
                .collect();
            (0..pixels)
                .map(|p| {
                    let (y, x) = ((p / size) as f64, (p % size) as f64);
                    blobs
                        .iter()
                        .map(|(cy, cx, r)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp())
                        .sum::<f64>()
                        .min(1.0)
                })
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, 0.15).expect("valid sigma");
    let mut draw = |per_class: usize| -> Result<LabeledSet> {
        let n = per_class * CLASSES;
        let mut x = Matrix::zeros(n, pixels);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % CLASSES;
            let gain = rng.random_range(0.6..1.0);
            for (v, proto) in x.row_mut(i).iter_mut().zip(&prototypes[class]) {
                *v = (gain * proto + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            labels.push(class);
        }
        LabeledSet::new(x, labels)
    };
    let train = draw(train_per_class)?;
    let test = draw(test_per_class)?;
    Ok(BaseDataset {
        train,
        test,
        shape: Shape::new(1, size, size),
        classes: CLASSES,
    })
}
