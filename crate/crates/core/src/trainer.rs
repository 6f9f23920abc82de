//! The task loop: SGD with projected gradients inside a task, memory updates
//! between tasks.

use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Part, TaskDataset, TaskSequence};
use crate::error::{GpmError, Result};
use crate::eval::{accuracy, mean_loss, ResultsMatrix};
use crate::gpm::{
    build_representation, check_projection, project_gradients_in_place, project_layer_inputs, sample_indices, update_memory,
    EpsilonSchedule, GpmBank, LayerUpdate,
};
use crate::linalg::Matrix;
use crate::nn::{HeadMode, LayerKind, Network, Target};
use crate::seed::{self, Stream};

/// Largest tolerated `||G M||` (FC) or `||M^T G||` (conv) relative to `max(1, ||G||)`.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-8;

/// Largest tolerated `||P(P(G)) - P(G)||` relative to `max(1, ||G||)`.
pub const IDEMPOTENCY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Samples forwarded to build representation matrices.
    pub n_s: usize,
    pub eps: EpsilonSchedule,
    pub head_mode: HeadMode,
    pub seed: u64,
    /// Verify the projection every this many constrained steps; 0 disables.
    pub check_every: usize,
    /// Stop a task after this many epochs without validation-loss improvement.
    pub early_stopping_patience: Option<usize>,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
}

impl TrainConfig {
    /// Plain SGD defaults for permuted MNIST.
    pub fn new(eps: EpsilonSchedule, seed: u64) -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 5,
            batch_size: 10,
            n_s: 300,
            eps,
            head_mode: HeadMode::Single,
            seed,
            check_every: 100,
            early_stopping_patience: None,
            lr_decay: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(GpmError::Validation(what.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.n_s == 0 {
            return bad("epochs, batch size and n_s must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr decay must lie in (0, 1]");
        }
        if self.early_stopping_patience == Some(0) {
            return bad("early stopping patience must be positive");
        }
        Ok(())
    }
}

/// Projection checks sampled during one task.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintChecks {
    pub checks: usize,
    pub violations: usize,
    pub max_orthogonality: f64,
    pub max_idempotency: f64,
}

/// What happened while learning one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRunRecord {
    pub task: usize,
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub steps: usize,
    /// Bases appended per constrained layer.
    pub k_added: Vec<usize>,
    pub bank_sizes: Vec<usize>,
    pub updates: Vec<LayerUpdate>,
    pub constraint: ConstraintChecks,
    pub seconds: f64,
}

/// Output of [`train_task`].
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub record: TaskRunRecord,
    /// Representation matrices stored at the boundary, reused as interference probes.
    pub probes: Vec<Matrix>,
}

fn nonfinite(net: &Network, task: usize, epoch: usize, step: usize, lr: f64, batch: &Matrix) -> GpmError {
    let norms: Vec<String> = net.weights().map(|w| format!("{:.3e}", w.frobenius())).collect();
    GpmError::NonFiniteLoss {
        task,
        epoch: epoch + 1,
        step,
        diagnostic: format!(
            "lr {lr}, weight norms [{}], batch input norm {:.3e}, batch finite {}",
            norms.join(", "),
            batch.frobenius(),
            batch.is_finite()
        ),
    }
}

/// Trains `net` on one task and then extends `bank` with its representations.
///
/// With an empty bank the steps are plain SGD. Otherwise FC gradients are
/// projected through the cached layer inputs and conv gradients after
/// backpropagation.
pub fn train_task(net: &mut Network, bank: &mut GpmBank, task: &TaskDataset, cfg: &TrainConfig) -> Result<TaskOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let head = net.head_for(task.id - 1)?;
    let n = task.split(Part::Train).len();
    if n == 0 {
        return Err(GpmError::Validation(format!("task {} has no training data", task.id)));
    }
    let constrained = !bank.is_blank();
    let mut lr = cfg.lr;
    let mut checks = ConstraintChecks::default();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut validation_losses = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut stale = 0;
    let mut steps = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(cfg.seed, Stream::Shuffle, seed::pair(task.id, epoch)));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (x, labels) = task.gather(Part::Train, batch);
            let (logits, mut cache) = net.forward(&x, head)?;
            if constrained {
                project_layer_inputs(&mut cache, bank)?;
            }
            let (loss, mut grads) = net.backward(&logits, Target::Classes(&labels), &cache)?;
            if !loss.is_finite() {
                return Err(nonfinite(net, task.id, epoch, steps, lr, &x));
            }
            if constrained {
                project_gradients_in_place(&mut grads, bank, |k| k == LayerKind::Conv)?;
                if cfg.check_every > 0 && steps.is_multiple_of(cfg.check_every) {
                    let c = check_projection(&grads, bank)?;
                    checks.checks += 1;
                    checks.max_orthogonality = checks.max_orthogonality.max(c.orthogonality);
                    checks.max_idempotency = checks.max_idempotency.max(c.idempotency);
                    if c.orthogonality > ORTHOGONALITY_TOLERANCE || c.idempotency > IDEMPOTENCY_TOLERANCE {
                        checks.violations += 1;
                        warn!("task {} step {steps}: projection check failed {c:?}", task.id);
                    }
                }
            }
            net.sgd_step(&grads, lr)?;
            loss_sum += loss * batch.len() as f64;
            steps += 1;
        }
        epoch_losses.push(loss_sum / n as f64);
        lr *= cfg.lr_decay;
        if let Some(patience) = cfg.early_stopping_patience {
            if !task.split(Part::Validation).is_empty() {
                let v = mean_loss(net, task, Part::Validation, head)?;
                validation_losses.push(v);
                if v < best_val {
                    best_val = v;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= patience {
                        info!("task {}: early stop after epoch {}", task.id, epoch + 1);
                        break;
                    }
                }
            }
        }
    }

    let mut sample_rng = seed::rng(cfg.seed, Stream::Sample, task.id as u64);
    let idx = sample_indices(n, cfg.n_s, &mut sample_rng)?;
    let (samples, _) = task.gather(Part::Train, &idx);
    let reps = build_representation(net, &samples, head, &mut sample_rng)?;
    let updates = update_memory(bank, &reps, &cfg.eps, task.id)?;
    let record = TaskRunRecord {
        task: task.id,
        epoch_losses,
        validation_losses,
        steps,
        k_added: updates.iter().map(|u| u.added).collect(),
        bank_sizes: bank.ranks(),
        updates,
        constraint: checks,
        seconds: started.elapsed().as_secs_f64(),
    };
    info!("task {} done: k {:?}, bank {:?}", task.id, record.k_added, record.bank_sizes);
    Ok(TaskOutcome {
        record,
        probes: reps.into_iter().map(|r| r.matrix).collect(),
    })
}

/// Everything a sequence run accumulates; enough to resume after any task.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceState {
    pub results: ResultsMatrix,
    pub records: Vec<TaskRunRecord>,
    /// Constrained-layer weights after each finished task.
    pub snapshots: Vec<Vec<Matrix>>,
    /// Representation matrices stored after each finished task.
    pub probes: Vec<Vec<Matrix>>,
}

impl SequenceState {
    pub fn new(tasks: usize) -> Self {
        SequenceState {
            results: ResultsMatrix::new(tasks),
            records: Vec::new(),
            snapshots: Vec::new(),
            probes: Vec::new(),
        }
    }

    pub fn completed(&self) -> usize {
        self.records.len()
    }
}

/// Test accuracies on tasks `0..=t` after task `t`.
pub fn evaluate_row(net: &Network, tasks: &TaskSequence, t: usize) -> Result<Vec<f64>> {
    (0..=t)
        .map(|i| accuracy(net, &tasks.tasks[i], Part::Test, net.head_for(i)?))
        .collect()
}

/// Continues training from `state`, calling `on_task` after every finished task.
pub fn resume_sequence(
    net: &mut Network,
    bank: &mut GpmBank,
    tasks: &TaskSequence,
    cfg: &TrainConfig,
    mut state: SequenceState,
    mut on_task: impl FnMut(&Network, &GpmBank, &SequenceState) -> Result<()>,
) -> Result<SequenceState> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(GpmError::Validation("task sequence is empty".into()));
    }
    if net.head_mode() != cfg.head_mode || tasks.head_mode != cfg.head_mode {
        return Err(GpmError::Validation(format!(
            "head mode mismatch: network {:?}, tasks {:?}, config {:?}",
            net.head_mode(),
            tasks.head_mode,
            cfg.head_mode
        )));
    }
    if state.results.tasks() != tasks.len() || state.completed() > tasks.len() {
        return Err(GpmError::Validation("resume state does not match the task sequence".into()));
    }
    for t in state.completed()..tasks.len() {
        let outcome = train_task(net, bank, &tasks.tasks[t], cfg)?;
        state.results.push_row(evaluate_row(net, tasks, t)?)?;
        state.records.push(outcome.record);
        state.snapshots.push(net.constrained_weights());
        state.probes.push(outcome.probes);
        on_task(net, bank, &state)?;
    }
    Ok(state)
}

/// Trains all tasks in order from a blank memory.
pub fn run_sequence(net: &mut Network, tasks: &TaskSequence, cfg: &TrainConfig) -> Result<(ResultsMatrix, Vec<TaskRunRecord>, GpmBank)> {
    let mut bank = GpmBank::for_network(net);
    let state = resume_sequence(net, &mut bank, tasks, cfg, SequenceState::new(tasks.len()), |_, _, _| Ok(()))?;
    Ok((state.results, state.records, bank))
}
