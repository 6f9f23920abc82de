//! Gradient projection memory.
//!
//! For every constrained layer the bank keeps an orthonormal basis `M` of the
//! input directions earlier tasks relied on. After a task, fresh layer
//! activations are stripped of what `M` already explains, and the leading left
//! singular vectors of the remainder are appended until the requested share
//! of activation energy is covered. During later training every gradient is
//! projected onto the orthogonal complement of `M`, so layer outputs on old
//! inputs do not move.

pub mod container;

use log::warn;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GpmError, Result};
use crate::linalg::{gemm, orthonormality_defect, orthonormalize_columns, select_rank, svd, Matrix, Op};
use crate::nn::{ActivationCache, ConstrainedLayer, GradientSet, LayerKind, Network};

/// Defect above which the bank is re-orthonormalized after an update.
pub const REORTHONORMALIZE_ABOVE: f64 = 1e-6;

/// Conv representation matrices keep at most this many columns per input dimension.
pub const CONV_COLUMNS_PER_DIM: usize = 20;

/// Residual singular values at or below this fraction of `||R||_F` are
/// treated as round-off and never stored.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Per-layer energy thresholds, optionally growing with the task index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    base: Vec<f64>,
    increment: f64,
}

impl EpsilonSchedule {
    /// `base[l]` applies to layer `l`; layers past the end reuse the last entry.
    pub fn new(base: Vec<f64>, increment: f64) -> Result<Self> {
        if base.is_empty() {
            return Err(GpmError::Validation("threshold schedule needs at least one base value".into()));
        }
        if let Some(b) = base.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return Err(GpmError::Validation(format!("threshold base {b} outside (0, 1]")));
        }
        if !(increment >= 0.0 && increment.is_finite()) {
            return Err(GpmError::Validation(format!("threshold increment {increment} must be >= 0")));
        }
        Ok(EpsilonSchedule { base, increment })
    }

    pub fn constant(eps: f64) -> Result<Self> {
        Self::new(vec![eps], 0.0)
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    pub fn increment(&self) -> f64 {
        self.increment
    }

    /// `min(1, base_l + increment * (task - 1))` for one-based `task`.
    pub fn threshold(&self, layer: usize, task: usize) -> f64 {
        let base = self.base[layer.min(self.base.len() - 1)];
        (base + self.increment * task.saturating_sub(1) as f64).min(1.0)
    }
}

/// Activations of one constrained layer, one column per sample or patch.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix {
    pub layer: usize,
    pub matrix: Matrix,
}

/// Basis of one constrained layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMemory {
    pub layer: ConstrainedLayer,
    /// `dim x r`, orthonormal columns.
    pub basis: Matrix,
}

impl LayerMemory {
    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn capacity(&self) -> usize {
        self.layer.dim
    }
}

/// The per-layer memories of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct GpmBank {
    layers: Vec<LayerMemory>,
}

/// Outcome of [`update_memory`] for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerUpdate {
    pub layer: String,
    pub threshold: f64,
    pub total_energy: f64,
    pub projected_energy: f64,
    /// Bases the threshold asked for.
    pub requested: usize,
    /// Bases actually appended after the capacity cap.
    pub added: usize,
    pub rank_after: usize,
    pub reorthonormalized: bool,
}

impl GpmBank {
    /// Empty memory for every constrained layer of `net`.
    pub fn for_network(net: &Network) -> Self {
        Self::new(net.constrained_layers())
    }

    pub fn new(layers: Vec<ConstrainedLayer>) -> Self {
        GpmBank {
            layers: layers
                .into_iter()
                .map(|layer| LayerMemory {
                    basis: Matrix::zeros(layer.dim, 0),
                    layer,
                })
                .collect(),
        }
    }

    /// Rebuilds a bank from stored bases, checking dimensions and orthonormality.
    pub fn from_bases(layers: Vec<ConstrainedLayer>, bases: Vec<Matrix>) -> Result<Self> {
        if layers.len() != bases.len() {
            return Err(GpmError::shape("GpmBank::from_bases", format!("{} bases", layers.len()), bases.len()));
        }
        let mut out = Vec::with_capacity(layers.len());
        for (layer, basis) in layers.into_iter().zip(bases) {
            if basis.rows() != layer.dim || basis.cols() > layer.dim {
                return Err(GpmError::shape(
                    "GpmBank::from_bases",
                    format!("{} x r (r <= {}) for {}", layer.dim, layer.dim, layer.name),
                    format!("{:?}", basis.shape()),
                ));
            }
            let defect = orthonormality_defect(&basis);
            if defect > REORTHONORMALIZE_ABOVE {
                return Err(GpmError::Validation(format!("basis of {} is not orthonormal (defect {defect:.3e})", layer.name)));
            }
            out.push(LayerMemory { layer, basis });
        }
        Ok(GpmBank { layers: out })
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[LayerMemory] {
        &self.layers
    }

    pub fn basis(&self, layer: usize) -> &Matrix {
        &self.layers[layer].basis
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(LayerMemory::rank).collect()
    }

    pub fn bases(&self) -> Vec<Matrix> {
        self.layers.iter().map(|l| l.basis.clone()).collect()
    }

    /// Stored basis parameters, `sum_l d_l * r_l`.
    pub fn stored_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.capacity() * l.rank()).sum()
    }

    /// Parameters of a full memory, `sum_l d_l^2`.
    pub fn max_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.capacity() * l.capacity()).sum()
    }

    pub fn fill_fraction(&self) -> f64 {
        match self.max_parameters() {
            0 => 0.0,
            max => self.stored_parameters() as f64 / max as f64,
        }
    }

    /// True when no layer holds any basis vector.
    pub fn is_blank(&self) -> bool {
        self.layers.iter().all(|l| l.rank() == 0)
    }
}

/// Draws `n` distinct indices from `0..len` uniformly, in ascending order.
pub fn sample_indices<R: Rng>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || len == 0 {
        return Err(GpmError::Validation(format!("cannot draw {n} samples from {len}")));
    }
    let mut idx = index::sample(rng, len, n.min(len)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Representation matrices for every constrained layer from one forward pass
/// of `samples` (one per row) through the head of `task`.
///
/// FC layers yield `d x n_s`; convolutions yield `d x (n_s * positions)`,
/// uniformly subsampled to `20 * d` columns when larger.
pub fn build_representation<R: Rng>(net: &Network, samples: &Matrix, task: usize, rng: &mut R) -> Result<Vec<RepresentationMatrix>> {
    if samples.rows() == 0 {
        return Err(GpmError::Validation("representation needs at least one sample".into()));
    }
    let (_, cache) = net.forward(samples, task)?;
    Ok(net
        .constrained_layers()
        .iter()
        .enumerate()
        .map(|(slot, layer)| {
            let rows = cache.layer_input(slot);
            let cap = CONV_COLUMNS_PER_DIM * layer.dim;
            let matrix = if layer.kind == LayerKind::Conv && rows.rows() > cap {
                let mut keep = index::sample(rng, rows.rows(), cap).into_vec();
                keep.sort_unstable();
                rows.select_rows(&keep).transpose()
            } else {
                rows.transpose()
            };
            RepresentationMatrix { layer: slot, matrix }
        })
        .collect())
}

/// `R` split against a basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    /// `R - M M^T R`
    pub r_hat: Matrix,
    /// `||M M^T R||_F^2`
    pub projected_energy: f64,
    /// `||R||_F^2`
    pub total_energy: f64,
}

pub fn residualize(r: &Matrix, basis: &Matrix) -> Result<Residual> {
    if r.rows() != basis.rows() {
        return Err(GpmError::shape("residualize", format!("{} rows", basis.rows()), r.rows()));
    }
    let total_energy = r.frobenius_sq();
    if basis.cols() == 0 {
        return Ok(Residual {
            r_hat: r.clone(),
            projected_energy: 0.0,
            total_energy,
        });
    }
    let coeff = basis.t_matmul(r);
    let projected = basis.matmul(&coeff);
    Ok(Residual {
        r_hat: r.sub(&projected),
        projected_energy: projected.frobenius_sq(),
        total_energy,
    })
}

/// Extends the bank with the representations of one-based task `task`,
/// returning what happened per layer.
pub fn update_memory(bank: &mut GpmBank, reps: &[RepresentationMatrix], eps: &EpsilonSchedule, task: usize) -> Result<Vec<LayerUpdate>> {
    if reps.len() != bank.len() {
        return Err(GpmError::shape("update_memory", format!("{} representations", bank.len()), reps.len()));
    }
    let mut staged = Vec::with_capacity(reps.len());
    for (l, rep) in reps.iter().enumerate() {
        if rep.layer != l {
            return Err(GpmError::Validation(format!("representation {l} belongs to layer {}", rep.layer)));
        }
        let mem = &bank.layers[l];
        let threshold = eps.threshold(l, task);
        let res = residualize(&rep.matrix, &mem.basis)?;
        let cutoff = NOISE_FLOOR * res.total_energy.sqrt();
        let (u, sigma) = if res.r_hat.max_abs() > 0.0 && res.r_hat.cols() > 0 {
            let f = svd(&res.r_hat)?;
            let keep = f.s.iter().take_while(|&&s| s > cutoff).count();
            (f.u, f.s[..keep].to_vec())
        } else {
            (Matrix::zeros(mem.capacity(), 0), Vec::new())
        };
        let requested = select_rank(&sigma, res.total_energy, res.projected_energy, threshold)?;
        let room = mem.capacity() - mem.rank();
        let added = requested.min(room);
        if added < requested {
            warn!(
                "{}: memory full ({} of {} bases), {} requested bases dropped; further learning in this layer is blocked",
                mem.layer.name,
                mem.rank() + added,
                mem.capacity(),
                requested - added
            );
        }
        staged.push((u.leading_columns(added), LayerUpdate {
            layer: mem.layer.name.clone(),
            threshold,
            total_energy: res.total_energy,
            projected_energy: res.projected_energy,
            requested,
            added,
            rank_after: mem.rank() + added,
            reorthonormalized: false,
        }));
    }
    let mut out = Vec::with_capacity(staged.len());
    for (mem, (new_cols, mut report)) in bank.layers.iter_mut().zip(staged) {
        if new_cols.cols() > 0 {
            let grown = mem.basis.hcat(&new_cols);
            mem.basis = if orthonormality_defect(&grown) > REORTHONORMALIZE_ABOVE {
                report.reorthonormalized = true;
                orthonormalize_columns(&grown)
            } else {
                grown
            };
        }
        out.push(report);
    }
    Ok(out)
}

/// `G - G M M^T` for FC weights (`out x d`).
fn project_fc(g: &mut Matrix, m: &Matrix) {
    let gm = g.matmul(m);
    gemm(-1.0, &gm, Op::N, m, Op::T, 1.0, g);
}

/// `G - M M^T G` for conv filter matrices (`d x c_out`).
fn project_conv(g: &mut Matrix, m: &Matrix) {
    let mtg = m.t_matmul(g);
    gemm(-1.0, m, Op::N, &mtg, Op::N, 1.0, g);
}

fn check_congruent(grads: &GradientSet, bank: &GpmBank) -> Result<()> {
    let slots = grads.body.len() + 1;
    if bank.len() > slots {
        return Err(GpmError::shape("project_gradients", format!("at least {} gradient slots", bank.len()), slots));
    }
    for (l, mem) in bank.layers.iter().enumerate() {
        let g = grads.slot(l);
        let dim = match mem.layer.kind {
            LayerKind::Fc => g.cols(),
            LayerKind::Conv => g.rows(),
        };
        if dim != mem.capacity() {
            return Err(GpmError::shape("project_gradients", format!("{} input dim {}", mem.layer.name, mem.capacity()), dim));
        }
    }
    Ok(())
}

/// Projects every constrained gradient onto the orthogonal complement of its
/// layer memory. Unconstrained slots and empty memories pass through untouched.
pub fn project_gradients(grads: &GradientSet, bank: &GpmBank) -> Result<GradientSet> {
    let mut out = grads.clone();
    project_gradients_in_place(&mut out, bank, |_| true)?;
    Ok(out)
}

/// In-place [`project_gradients`] restricted to layers whose kind passes `filter`.
pub fn project_gradients_in_place(grads: &mut GradientSet, bank: &GpmBank, filter: impl Fn(LayerKind) -> bool) -> Result<()> {
    check_congruent(grads, bank)?;
    for (l, mem) in bank.layers.iter().enumerate() {
        if mem.rank() == 0 || !filter(mem.layer.kind) {
            continue;
        }
        let g = grads.slot_mut(l);
        match mem.layer.kind {
            LayerKind::Fc => project_fc(g, &mem.basis),
            LayerKind::Conv => project_conv(g, &mem.basis),
        }
    }
    Ok(())
}

/// Projects the cached inputs of FC layers, `X <- X - X M M^T`.
///
/// An FC weight gradient is `Delta^T X`, so backpropagating from projected
/// inputs yields exactly the projected gradient at a cost proportional to
/// the batch rather than the layer width. Other cached quantities are left
/// alone, so input gradients and ReLU routing are unaffected.
pub fn project_layer_inputs(cache: &mut ActivationCache, bank: &GpmBank) -> Result<()> {
    for (l, mem) in bank.layers.iter().enumerate() {
        if mem.layer.kind != LayerKind::Fc || mem.rank() == 0 {
            continue;
        }
        let x = cache.layer_input_mut(l);
        if x.cols() != mem.capacity() {
            return Err(GpmError::shape("project_layer_inputs", format!("{} columns", mem.capacity()), x.cols()));
        }
        project_fc(x, &mem.basis);
    }
    Ok(())
}

/// Worst constraint violations of a projected gradient set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectionCheck {
    /// `max_l ||G_l M_l|| / max(1, ||G_l||)` in the layer's orientation.
    pub orthogonality: f64,
    /// `max_l ||P(G_l) - G_l|| / max(1, ||G_l||)`.
    pub idempotency: f64,
}

/// Measures how far `grads` (already projected) are from satisfying the memory constraint.
pub fn check_projection(grads: &GradientSet, bank: &GpmBank) -> Result<ProjectionCheck> {
    check_congruent(grads, bank)?;
    let mut again = grads.clone();
    project_gradients_in_place(&mut again, bank, |_| true)?;
    let mut out = ProjectionCheck::default();
    for (l, mem) in bank.layers.iter().enumerate() {
        if mem.rank() == 0 {
            continue;
        }
        let g = grads.slot(l);
        let scale = g.frobenius().max(1.0);
        let leak = match mem.layer.kind {
            LayerKind::Fc => g.matmul(&mem.basis),
            LayerKind::Conv => mem.basis.t_matmul(g),
        };
        out.orthogonality = out.orthogonality.max(leak.frobenius() / scale);
        out.idempotency = out.idempotency.max(again.slot(l).sub(g).frobenius() / scale);
    }
    Ok(out)
}
