use rand::Rng;

use crate::error::{GpmError, Result};
use crate::linalg::{gemm, Matrix, Op};
use crate::nn::conv::{col2im_add, im2col_into, ConvGeometry};
use crate::nn::{HeadMode, Shape};

/// Fully connected layer without bias; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub weight: Matrix,
}

impl FcLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Convolution without bias; `weight` is the `(c_in * k * k) x c_out` filter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub geometry: ConvGeometry,
    pub weight: Matrix,
}

/// Max pooling over non-overlapping or strided square windows (floor mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub input: Shape,
    pub size: usize,
    pub stride: usize,
}

impl MaxPool {
    pub fn output_shape(&self) -> Shape {
        Shape::new(
            self.input.channels,
            (self.input.height - self.size) / self.stride + 1,
            (self.input.width - self.size) / self.stride + 1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Fc(FcLayer),
    Conv(ConvLayer),
    Relu,
    MaxPool(MaxPool),
    /// Shape bookkeeping only; activations are already stored flat.
    Flatten,
}

/// Kind of a weighted layer, which fixes the orientation of its memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Fc,
    Conv,
}

/// A weighted layer whose gradient may be constrained by the memory bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstrainedLayer {
    pub name: String,
    pub kind: LayerKind,
    /// Input (FC) or patch (Conv) dimension; the basis row count.
    pub dim: usize,
    /// Output units (FC) or output channels (Conv).
    pub out_dim: usize,
}

/// Training target for [`Network::backward`].
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Class indices; softmax cross-entropy averaged over the batch.
    Classes(&'a [usize]),
    /// Regression targets; `0.5 * ||z - y||^2` summed over the batch.
    Regression(&'a Matrix),
}

/// Per-layer gradients shaped like the weights they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    /// One entry per weighted body layer, in network order.
    pub body: Vec<Matrix>,
    pub head: Matrix,
    pub head_index: usize,
}

impl GradientSet {
    /// Gradient for constrained slot `slot` (body layers, then the head).
    pub fn slot(&self, slot: usize) -> &Matrix {
        if slot < self.body.len() {
            &self.body[slot]
        } else {
            &self.head
        }
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut Matrix {
        if slot < self.body.len() {
            &mut self.body[slot]
        } else {
            &mut self.head
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.body.iter().map(Matrix::frobenius_sq).sum::<f64>() + self.head.frobenius_sq()
    }
}

#[derive(Debug, Clone)]
enum CacheEntry {
    Fc { input: Matrix },
    Conv { patches: Matrix },
    Relu { mask: Vec<bool> },
    MaxPool { argmax: Vec<usize> },
    Flatten,
}

/// Layer inputs recorded by [`Network::forward`].
///
/// For an FC layer the cached input is `batch x in_dim`; for a convolution it
/// is the stacked patch matrix `(batch * h_out * w_out) x (c_in * k * k)`. Both
/// are the transposes of the column blocks of a representation matrix.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    batch: usize,
    head_index: usize,
    entries: Vec<CacheEntry>,
    head_input: Matrix,
}

impl ActivationCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn head_index(&self) -> usize {
        self.head_index
    }

    fn weighted_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e, CacheEntry::Fc { .. } | CacheEntry::Conv { .. }))
            .map(|(i, _)| i)
    }

    /// Number of weighted body layers with a cached input.
    pub fn weighted_layers(&self) -> usize {
        self.weighted_positions().count()
    }

    /// Cached input rows of constrained slot `slot`: weighted body layers in
    /// order, then the classifier head.
    pub fn layer_input(&self, slot: usize) -> &Matrix {
        match self.weighted_positions().nth(slot) {
            Some(pos) => match &self.entries[pos] {
                CacheEntry::Fc { input } => input,
                CacheEntry::Conv { patches } => patches,
                _ => unreachable!(),
            },
            None => &self.head_input,
        }
    }

    pub fn layer_input_mut(&mut self, slot: usize) -> &mut Matrix {
        let pos = self.weighted_positions().nth(slot);
        match pos {
            Some(pos) => match &mut self.entries[pos] {
                CacheEntry::Fc { input } => input,
                CacheEntry::Conv { patches } => patches,
                _ => unreachable!(),
            },
            None => &mut self.head_input,
        }
    }
}

/// Feed-forward network: a shared body followed by one classifier head
/// (single-head) or one head per task (multi-head).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape,
    layers: Vec<Layer>,
    heads: Vec<FcLayer>,
    head_mode: HeadMode,
}

impl Network {
    pub fn builder(input: Shape) -> NetworkBuilder {
        NetworkBuilder {
            input,
            current: input,
            layers: Vec::new(),
        }
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn head_mode(&self) -> HeadMode {
        self.head_mode
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn heads(&self) -> &[FcLayer] {
        &self.heads
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    /// Classes of the head used for `task`.
    pub fn classes(&self) -> usize {
        self.heads[0].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights().map(|w| w.rows() * w.cols()).sum::<usize>()
    }

    /// Head index serving `task` (zero-based).
    pub fn head_for(&self, task: usize) -> Result<usize> {
        match self.head_mode {
            HeadMode::Single => Ok(0),
            HeadMode::Multi if task < self.heads.len() => Ok(task),
            HeadMode::Multi => Err(GpmError::Lookup(format!(
                "task {task} has no classifier head ({} heads)",
                self.heads.len()
            ))),
        }
    }

    /// All weight matrices: weighted body layers in order, then every head.
    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Fc(fc) => Some(&fc.weight),
                Layer::Conv(c) => Some(&c.weight),
                _ => None,
            })
            .chain(self.heads.iter().map(|h| &h.weight))
    }

    pub fn weights_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Fc(fc) => Some(&mut fc.weight),
                Layer::Conv(c) => Some(&mut c.weight),
                _ => None,
            })
            .chain(self.heads.iter_mut().map(|h| &mut h.weight))
    }

    /// Replaces every weight matrix, in [`Network::weights`] order.
    pub fn load_weights(&mut self, weights: Vec<Matrix>) -> Result<()> {
        let expected: Vec<(usize, usize)> = self.weights().map(Matrix::shape).collect();
        let got: Vec<(usize, usize)> = weights.iter().map(Matrix::shape).collect();
        if expected != got {
            return Err(GpmError::shape("Network::load_weights", format!("{expected:?}"), format!("{got:?}")));
        }
        for (dst, src) in self.weights_mut().zip(weights) {
            *dst = src;
        }
        Ok(())
    }

    /// Layers whose gradients the memory may constrain: every weighted body
    /// layer, plus the shared head in single-head mode.
    pub fn constrained_layers(&self) -> Vec<ConstrainedLayer> {
        let (mut n_fc, mut n_conv) = (0, 0);
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Fc(fc) => {
                    n_fc += 1;
                    out.push(ConstrainedLayer {
                        name: format!("fc{n_fc}"),
                        kind: LayerKind::Fc,
                        dim: fc.in_dim(),
                        out_dim: fc.out_dim(),
                    });
                }
                Layer::Conv(c) => {
                    n_conv += 1;
                    out.push(ConstrainedLayer {
                        name: format!("conv{n_conv}"),
                        kind: LayerKind::Conv,
                        dim: c.geometry.patch_len(),
                        out_dim: c.geometry.out_channels,
                    });
                }
                _ => {}
            }
        }
        if self.head_mode == HeadMode::Single {
            out.push(ConstrainedLayer {
                name: format!("fc{}", n_fc + 1),
                kind: LayerKind::Fc,
                dim: self.heads[0].in_dim(),
                out_dim: self.heads[0].out_dim(),
            });
        }
        out
    }

    /// Weights of the constrained layers, in [`Network::constrained_layers`] order.
    pub fn constrained_weights(&self) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Fc(fc) => Some(fc.weight.clone()),
                Layer::Conv(c) => Some(c.weight.clone()),
                _ => None,
            })
            .collect();
        if self.head_mode == HeadMode::Single {
            out.push(self.heads[0].weight.clone());
        }
        out
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input.len() {
            return Err(GpmError::shape("Network::forward", format!("{} input features", self.input.len()), batch.cols()));
        }
        if batch.rows() == 0 {
            return Err(GpmError::Validation("empty batch".into()));
        }
        Ok(())
    }

    /// Logits for `batch` (one sample per row) through the head serving `task`,
    /// plus the cache needed by [`Network::backward`].
    pub fn forward(&self, batch: &Matrix, task: usize) -> Result<(Matrix, ActivationCache)> {
        self.check_batch(batch)?;
        let head_index = self.head_for(task)?;
        let n = batch.rows();
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for layer in &self.layers {
            let (y, entry) = forward_layer(layer, x, n, true);
            entries.push(entry.expect("cache requested"));
            x = y;
        }
        let logits = x.matmul_t(&self.heads[head_index].weight);
        Ok((
            logits,
            ActivationCache {
                batch: n,
                head_index,
                entries,
                head_input: x,
            },
        ))
    }

    /// Logits without keeping a cache.
    pub fn predict(&self, batch: &Matrix, task: usize) -> Result<Matrix> {
        self.check_batch(batch)?;
        let head_index = self.head_for(task)?;
        let n = batch.rows();
        let mut x = batch.clone();
        for layer in &self.layers {
            x = forward_layer(layer, x, n, false).0;
        }
        Ok(x.matmul_t(&self.heads[head_index].weight))
    }

    /// Loss and weight gradients for the batch that produced `cache`.
    ///
    /// FC gradients are `sum_i delta_i x_i^T` and convolution gradients
    /// `sum_i X_i^T Delta_i` over the batch, with `X_i` the patch matrix of
    /// sample `i`, so both lie in the span of the cached inputs.
    pub fn backward(&self, logits: &Matrix, target: Target<'_>, cache: &ActivationCache) -> Result<(f64, GradientSet)> {
        let n = cache.batch;
        let classes = self.heads[cache.head_index].out_dim();
        if logits.shape() != (n, classes) {
            return Err(GpmError::shape("Network::backward", format!("logits {n}x{classes}"), format!("{:?}", logits.shape())));
        }
        let (loss, delta) = loss_and_delta(logits, target)?;

        let head = &self.heads[cache.head_index];
        let head_grad = delta.t_matmul(&cache.head_input);
        let mut grad = delta.matmul(&head.weight);

        let first_weighted = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Fc(_) | Layer::Conv(_)));
        let mut body = Vec::new();
        for (idx, (layer, entry)) in self.layers.iter().zip(&cache.entries).enumerate().rev() {
            let need_input_grad = first_weighted.is_some_and(|f| idx > f);
            match (layer, entry) {
                (Layer::Fc(fc), CacheEntry::Fc { input }) => {
                    body.push(grad.t_matmul(input));
                    if need_input_grad {
                        grad = grad.matmul(&fc.weight);
                    }
                }
                (Layer::Conv(conv), CacheEntry::Conv { patches }) => {
                    let g = &conv.geometry;
                    let positions = g.positions();
                    let c_out = g.out_channels;
                    // (batch x c_out*P) -> stacked (batch*P x c_out)
                    let mut stacked = Matrix::zeros(n * positions, c_out);
                    for b in 0..n {
                        let src = grad.row(b);
                        for o in 0..c_out {
                            for p in 0..positions {
                                stacked[(b * positions + p, o)] = src[o * positions + p];
                            }
                        }
                    }
                    body.push(patches.t_matmul(&stacked));
                    if need_input_grad {
                        let dpatches = stacked.matmul_t(&conv.weight);
                        let in_len = g.input_shape().len();
                        let d = g.patch_len();
                        let mut dx = Matrix::zeros(n, in_len);
                        for b in 0..n {
                            let rows = &dpatches.as_slice()[b * positions * d..(b + 1) * positions * d];
                            col2im_add(rows, g, dx.row_mut(b));
                        }
                        grad = dx;
                    }
                }
                (Layer::Relu, CacheEntry::Relu { mask }) => {
                    for (v, &keep) in grad.as_mut_slice().iter_mut().zip(mask) {
                        if !keep {
                            *v = 0.0;
                        }
                    }
                }
                (Layer::MaxPool(pool), CacheEntry::MaxPool { argmax }) => {
                    let in_len = pool.input.len();
                    let out_len = pool.output_shape().len();
                    let mut dx = Matrix::zeros(n, in_len);
                    for b in 0..n {
                        let g = grad.row(b);
                        let am = &argmax[b * out_len..(b + 1) * out_len];
                        let dst = dx.row_mut(b);
                        for (o, &src) in am.iter().enumerate() {
                            dst[src] += g[o];
                        }
                    }
                    grad = dx;
                }
                (Layer::Flatten, CacheEntry::Flatten) => {}
                _ => return Err(GpmError::Validation("activation cache does not match network".into())),
            }
            if !need_input_grad && matches!(layer, Layer::Fc(_) | Layer::Conv(_)) {
                break;
            }
        }
        body.reverse();
        Ok((
            loss,
            GradientSet {
                body,
                head: head_grad,
                head_index: cache.head_index,
            },
        ))
    }

    /// `W <- W - lr * grad` for every body layer and the head the gradients
    /// were computed for.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        let expected = self.layers.iter().filter(|l| matches!(l, Layer::Fc(_) | Layer::Conv(_))).count();
        if grads.body.len() != expected || grads.head_index >= self.heads.len() {
            return Err(GpmError::shape("Network::sgd_step", format!("{expected} body gradients"), grads.body.len()));
        }
        let mut g = grads.body.iter();
        for layer in &mut self.layers {
            let w = match layer {
                Layer::Fc(fc) => &mut fc.weight,
                Layer::Conv(c) => &mut c.weight,
                _ => continue,
            };
            let grad = g.next().expect("counted above");
            if w.shape() != grad.shape() {
                return Err(GpmError::shape("Network::sgd_step", format!("{:?}", w.shape()), format!("{:?}", grad.shape())));
            }
            w.axpy(-lr, grad);
        }
        let head = &mut self.heads[grads.head_index].weight;
        if head.shape() != grads.head.shape() {
            return Err(GpmError::shape("Network::sgd_step", format!("{:?}", head.shape()), format!("{:?}", grads.head.shape())));
        }
        head.axpy(-lr, &grads.head);
        Ok(())
    }
}

fn forward_layer(layer: &Layer, x: Matrix, n: usize, keep: bool) -> (Matrix, Option<CacheEntry>) {
    match layer {
        Layer::Fc(fc) => {
            let y = x.matmul_t(&fc.weight);
            (y, keep.then_some(CacheEntry::Fc { input: x }))
        }
        Layer::Conv(conv) => {
            let g = &conv.geometry;
            let (positions, d, c_out) = (g.positions(), g.patch_len(), g.out_channels);
            let mut patches = Matrix::zeros(n * positions, d);
            for (b, chunk) in patches.as_mut_slice().chunks_exact_mut(positions * d).enumerate() {
                im2col_into(x.row(b), g, chunk);
            }
            let mut stacked = Matrix::zeros(n * positions, c_out);
            gemm(1.0, &patches, Op::N, &conv.weight, Op::N, 0.0, &mut stacked);
            let mut y = Matrix::zeros(n, c_out * positions);
            for b in 0..n {
                let dst = y.row_mut(b);
                for p in 0..positions {
                    let src = stacked.row(b * positions + p);
                    for o in 0..c_out {
                        dst[o * positions + p] = src[o];
                    }
                }
            }
            (y, keep.then_some(CacheEntry::Conv { patches }))
        }
        Layer::Relu => {
            let mut y = x;
            let mut mask = if keep { Vec::with_capacity(y.as_slice().len()) } else { Vec::new() };
            for v in y.as_mut_slice() {
                let on = *v > 0.0;
                if !on {
                    *v = 0.0;
                }
                if keep {
                    mask.push(on);
                }
            }
            (y, keep.then_some(CacheEntry::Relu { mask }))
        }
        Layer::MaxPool(pool) => {
            let out_shape = pool.output_shape();
            let (h, w) = (pool.input.height, pool.input.width);
            let (oh, ow) = (out_shape.height, out_shape.width);
            let mut y = Matrix::zeros(n, out_shape.len());
            let mut argmax = if keep { vec![0; n * out_shape.len()] } else { Vec::new() };
            for b in 0..n {
                let src = x.row(b);
                let dst = y.row_mut(b);
                for c in 0..pool.input.channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = usize::MAX;
                            let mut best_v = f64::NEG_INFINITY;
                            for ky in 0..pool.size {
                                for kx in 0..pool.size {
                                    let idx = (c * h + oy * pool.stride + ky) * w + ox * pool.stride + kx;
                                    if src[idx] > best_v {
                                        best_v = src[idx];
                                        best = idx;
                                    }
                                }
                            }
                            let o = (c * oh + oy) * ow + ox;
                            dst[o] = best_v;
                            if keep {
                                argmax[b * out_shape.len() + o] = best;
                            }
                        }
                    }
                }
            }
            (y, keep.then_some(CacheEntry::MaxPool { argmax }))
        }
        Layer::Flatten => (x, keep.then_some(CacheEntry::Flatten)),
    }
}

fn loss_and_delta(logits: &Matrix, target: Target<'_>) -> Result<(f64, Matrix)> {
    let (n, classes) = logits.shape();
    match target {
        Target::Classes(labels) => {
            if labels.len() != n {
                return Err(GpmError::shape("loss", format!("{n} labels"), labels.len()));
            }
            let mut delta = Matrix::zeros(n, classes);
            let mut loss = 0.0;
            let inv_n = 1.0 / n as f64;
            for (b, &y) in labels.iter().enumerate() {
                if y >= classes {
                    return Err(GpmError::Validation(format!("label {y} outside {classes} classes")));
                }
                let z = logits.row(b);
                let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
                let log_sum = sum.ln() + max;
                loss += log_sum - z[y];
                let d = delta.row_mut(b);
                for (j, dj) in d.iter_mut().enumerate() {
                    let p = (z[j] - log_sum).exp();
                    *dj = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
                }
            }
            Ok((loss * inv_n, delta))
        }
        Target::Regression(y) => {
            if y.shape() != logits.shape() {
                return Err(GpmError::shape("loss", format!("{:?}", logits.shape()), format!("{:?}", y.shape())));
            }
            let delta = logits.sub(y);
            Ok((0.5 * delta.frobenius_sq(), delta))
        }
    }
}

/// Incremental network construction with shape checking.
pub struct NetworkBuilder {
    input: Shape,
    current: Shape,
    layers: Vec<Layer>,
}

enum PendingLayer {
    Fc { out: usize },
    Conv { geometry: ConvGeometry },
}

impl NetworkBuilder {
    pub fn fc(mut self, out: usize) -> Self {
        self.push_weighted(PendingLayer::Fc { out });
        self
    }

    pub fn conv(mut self, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let geometry = ConvGeometry::new(self.current, out_channels, kernel, stride, padding)
            .unwrap_or_else(|e| panic!("invalid convolution: {e}"));
        self.push_weighted(PendingLayer::Conv { geometry });
        self
    }

    pub fn relu(mut self) -> Self {
        self.layers.push(Layer::Relu);
        self
    }

    pub fn max_pool(mut self, size: usize, stride: usize) -> Self {
        assert!(
            size >= 1 && stride >= 1 && self.current.height >= size && self.current.width >= size,
            "pool window {size} does not fit {:?}",
            self.current
        );
        let pool = MaxPool {
            input: self.current,
            size,
            stride,
        };
        self.current = pool.output_shape();
        self.layers.push(Layer::MaxPool(pool));
        self
    }

    pub fn flatten(mut self) -> Self {
        self.current = Shape::flat(self.current.len());
        self.layers.push(Layer::Flatten);
        self
    }

    fn push_weighted(&mut self, pending: PendingLayer) {
        // weights are filled in by `build`
        match pending {
            PendingLayer::Fc { out } => {
                let fc = FcLayer {
                    weight: Matrix::zeros(out, self.current.len()),
                };
                self.current = Shape::flat(out);
                self.layers.push(Layer::Fc(fc));
            }
            PendingLayer::Conv { geometry } => {
                self.current = geometry.output_shape();
                self.layers.push(Layer::Conv(ConvLayer {
                    geometry,
                    weight: Matrix::zeros(geometry.patch_len(), geometry.out_channels),
                }));
            }
        }
    }

    /// Adds the classifier heads and draws every weight from
    /// `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn build<R: Rng>(self, mode: HeadMode, classes: usize, tasks: usize, rng: &mut R) -> Result<Network> {
        if classes == 0 {
            return Err(GpmError::Validation("classifier needs at least one class".into()));
        }
        let head_count = match mode {
            HeadMode::Single => 1,
            HeadMode::Multi => tasks.max(1),
        };
        let feature = self.current.len();
        let mut net = Network {
            input: self.input,
            layers: self.layers,
            heads: (0..head_count)
                .map(|_| FcLayer {
                    weight: Matrix::zeros(classes, feature),
                })
                .collect(),
            head_mode: mode,
        };
        for layer in &mut net.layers {
            match layer {
                Layer::Fc(fc) => {
                    let (fan_out, fan_in) = fc.weight.shape();
                    glorot(&mut fc.weight, fan_in, fan_out, rng);
                }
                Layer::Conv(c) => {
                    let k2 = c.geometry.kernel * c.geometry.kernel;
                    let (fan_in, fan_out) = (c.geometry.in_channels * k2, c.geometry.out_channels * k2);
                    glorot(&mut c.weight, fan_in, fan_out, rng);
                }
                _ => {}
            }
        }
        for head in &mut net.heads {
            let (fan_in, fan_out) = (head.weight.cols(), head.weight.rows());
            glorot(&mut head.weight, fan_in, fan_out, rng);
        }
        Ok(net)
    }
}

fn glorot<R: Rng>(w: &mut Matrix, fan_in: usize, fan_out: usize, rng: &mut R) {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in w.as_mut_slice() {
        *v = rng.random_range(-a..a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut net = Network::builder(Shape::flat(4)).fc(3).relu().build(HeadMode::Single, 2, 1, &mut rng()).unwrap();
        net.weights_mut().for_each(|w| w.scale(0.0));
        let x = Matrix::from_fn(5, 4, |i, j| (i + j) as f64);
        let (logits, _) = net.forward(&x, 0).unwrap();
        assert_eq!(logits, Matrix::zeros(5, 2));
    }

    #[test]
    fn identity_head_passes_input_through() {
        let mut net = Network::builder(Shape::flat(3)).build(HeadMode::Single, 3, 1, &mut rng()).unwrap();
        net.load_weights(vec![Matrix::identity(3)]).unwrap();
        let x = Matrix::from_rows(&[&[1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(net.predict(&x, 0).unwrap(), x);
    }

    #[test]
    fn mse_gradient_hand_computed() {
        // W = 0, x = [1, 0], y = [1]  =>  grad = (Wx - y) x^T = [[-1, 0]]
        let mut net = Network::builder(Shape::flat(2)).build(HeadMode::Single, 1, 1, &mut rng()).unwrap();
        net.load_weights(vec![Matrix::zeros(1, 2)]).unwrap();
        let x = Matrix::from_rows(&[&[1.0, 0.0]]).unwrap();
        let y = Matrix::from_rows(&[&[1.0]]).unwrap();
        let (logits, cache) = net.forward(&x, 0).unwrap();
        let (loss, g) = net.backward(&logits, Target::Regression(&y), &cache).unwrap();
        assert_eq!(loss, 0.5);
        assert_eq!(g.head, Matrix::from_rows(&[&[-1.0, 0.0]]).unwrap());
    }

    #[test]
    fn saturated_correct_prediction_has_vanishing_gradient() {
        let mut net = Network::builder(Shape::flat(3)).build(HeadMode::Single, 3, 1, &mut rng()).unwrap();
        net.load_weights(vec![Matrix::identity(3)]).unwrap();
        let x = Matrix::from_rows(&[&[60.0, 0.0, 0.0], &[0.0, 0.0, 60.0]]).unwrap();
        let (logits, cache) = net.forward(&x, 0).unwrap();
        let (loss, g) = net.backward(&logits, Target::Classes(&[0, 2]), &cache).unwrap();
        assert!(loss < 1e-20);
        assert!(g.norm_sq().sqrt() <= 1e-6);
    }

    #[test]
    fn sgd_step_cases() {
        let mut net = Network::builder(Shape::flat(1)).build(HeadMode::Single, 1, 1, &mut rng()).unwrap();
        net.load_weights(vec![Matrix::from_rows(&[&[1.0]]).unwrap()]).unwrap();
        let grads = GradientSet {
            body: vec![],
            head: Matrix::from_rows(&[&[0.5]]).unwrap(),
            head_index: 0,
        };
        let before = net.clone();
        net.sgd_step(&grads, 0.0).unwrap();
        assert_eq!(net, before);
        net.sgd_step(&grads, 0.1).unwrap();
        assert_eq!(net.heads()[0].weight[(0, 0)], 0.95);
    }

    #[test]
    fn multi_head_rejects_unknown_task() {
        let net = Network::builder(Shape::flat(2)).fc(2).build(HeadMode::Multi, 2, 3, &mut rng()).unwrap();
        let x = Matrix::zeros(1, 2);
        assert!(net.forward(&x, 2).is_ok());
        assert!(matches!(net.forward(&x, 3), Err(GpmError::Lookup(_))));
    }

    #[test]
    fn constrained_layers_follow_head_mode() {
        let single = Network::builder(Shape::flat(784)).fc(100).relu().fc(100).relu().build(HeadMode::Single, 10, 10, &mut rng()).unwrap();
        let dims: Vec<usize> = single.constrained_layers().iter().map(|l| l.dim).collect();
        assert_eq!(dims, vec![784, 100, 100]);
        let multi = Network::builder(Shape::new(1, 8, 8)).conv(4, 3, 1, 1).relu().max_pool(2, 2).flatten().fc(10).build(HeadMode::Multi, 2, 3, &mut rng()).unwrap();
        let layers = multi.constrained_layers();
        assert_eq!(layers.len(), 2);
        assert_eq!(layers[0].kind, LayerKind::Conv);
        assert_eq!(layers[0].dim, 9);
        assert_eq!(layers[1].dim, 64);
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::builder(Shape::new(2, 6, 6)).conv(3, 3, 1, 1).relu().max_pool(2, 2).fc(5).build(HeadMode::Single, 4, 1, &mut rng()).unwrap();
        let x = Matrix::from_fn(3, 72, |i, j| ((i * 31 + j * 17) % 13) as f64 / 13.0);
        let a = net.predict(&x, 0).unwrap();
        let b = net.forward(&x, 0).unwrap().0;
        assert_eq!(a.as_slice(), b.as_slice());
    }
}
