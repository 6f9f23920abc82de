//! Accuracy matrices, continual-learning metrics and interference analysis.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Part, TaskDataset};
use crate::error::{GpmError, Result};
use crate::linalg::Matrix;
use crate::nn::{ConstrainedLayer, LayerKind, Network};

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 1000;

/// Histogram bins of the interference analysis.
pub const INTERFERENCE_BINS: usize = 101;

/// `R[t][i]`: test accuracy (percent) on task `i` after training task `t`,
/// zero-based, defined for `i <= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsMatrix {
    rows: Vec<Vec<f64>>,
    tasks: usize,
}

impl ResultsMatrix {
    pub fn new(tasks: usize) -> Self {
        ResultsMatrix { rows: Vec::new(), tasks }
    }

    /// Builds a matrix from complete lower-triangular rows.
    pub fn from_rows(tasks: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = ResultsMatrix::new(tasks);
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    /// Rows filled so far.
    pub fn completed(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Appends the row for the next task; it must hold one entry per task seen.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len();
        if t >= self.tasks || row.len() != t + 1 {
            return Err(GpmError::shape("ResultsMatrix::push_row", format!("{} entries (of {} tasks)", t + 1, self.tasks), row.len()));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(GpmError::Validation(format!("accuracy {v} outside [0, 100]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn get(&self, t: usize, i: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.get(i)).copied()
    }

    /// `after_task,task_1..task_T`; undefined entries are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("after_task");
        for i in 1..=self.tasks {
            let _ = write!(s, ",task_{i}");
        }
        s.push('\n');
        for (t, row) in self.rows.iter().enumerate() {
            let _ = write!(s, "{}", t + 1);
            for i in 0..self.tasks {
                match row.get(i) {
                    Some(v) => {
                        let _ = write!(s, ",{v:.4}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Average accuracy and backward transfer, both in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub bwt: f64,
}

/// `ACC = mean_i R[T][i]`, `BWT = mean_{i<T} (R[T][i] - R[i][i])`, with
/// `BWT = 0` for a single task.
pub fn compute_metrics(r: &ResultsMatrix) -> Result<Metrics> {
    let t = r.tasks();
    if t == 0 || r.completed() != t {
        return Err(GpmError::Validation(format!("results matrix has {} of {t} rows", r.completed())));
    }
    let last = &r.rows[t - 1];
    let acc = last.iter().sum::<f64>() / t as f64;
    let bwt = if t == 1 {
        0.0
    } else {
        (0..t - 1).map(|i| last[i] - r.rows[i][i]).sum::<f64>() / (t - 1) as f64
    };
    Ok(Metrics { acc, bwt })
}

/// Top-1 accuracy in percent of `net` on one split of `task`, using head `head`.
pub fn accuracy(net: &Network, task: &TaskDataset, part: Part, head: usize) -> Result<f64> {
    let n = task.split(part).len();
    if n == 0 {
        return Err(GpmError::Validation(format!("task {} has an empty {part:?} split", task.id)));
    }
    let mut correct = 0usize;
    let positions: Vec<usize> = (0..n).collect();
    for chunk in positions.chunks(EVAL_CHUNK) {
        let (x, labels) = task.gather(part, chunk);
        let logits = net.predict(&x, head)?;
        correct += labels.iter().enumerate().filter(|(b, &y)| argmax(logits.row(*b)) == y).count();
    }
    Ok(100.0 * correct as f64 / n as f64)
}

/// Mean cross-entropy of `net` on one split, for early stopping.
pub fn mean_loss(net: &Network, task: &TaskDataset, part: Part, head: usize) -> Result<f64> {
    let n = task.split(part).len();
    if n == 0 {
        return Err(GpmError::Validation(format!("task {} has an empty {part:?} split", task.id)));
    }
    let positions: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for chunk in positions.chunks(EVAL_CHUNK) {
        let (x, labels) = task.gather(part, chunk);
        let logits = net.predict(&x, head)?;
        for (b, &y) in labels.iter().enumerate() {
            let z = logits.row(b);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            total += z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max - z[y];
        }
    }
    Ok(total / n as f64)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fixed-edge histogram with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `INTERFERENCE_BINS + 1` edges, symmetric around zero.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub std: f64,
}

impl Histogram {
    /// 101 uniform bins over `[-max|v|, max|v|]`; all-zero data lands in the centre bin.
    pub fn symmetric(values: &[f64]) -> Self {
        let bins = INTERFERENCE_BINS;
        let bound = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let edges: Vec<f64> = (0..=bins).map(|i| -bound + 2.0 * bound * i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for v in values {
            let b = if bound == 0.0 {
                bins / 2
            } else {
                (((v + bound) / (2.0 * bound)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
            };
            counts[b] += 1;
        }
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Histogram {
            edges,
            counts,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Interference of later training on one past task at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInterference {
    pub layer: String,
    /// One-based task whose probes were used.
    pub task: usize,
    pub histogram: Histogram,
}

/// Entries of `(W_T - W_tau) x` for every stored probe `x` of task `tau`.
///
/// `snapshots[t]` holds the constrained-layer weights after task `t + 1` and
/// `probes[t]` the representation matrices stored at that boundary; the last
/// snapshot is the final network. One result per layer and past task.
pub fn interference_analysis(layers: &[ConstrainedLayer], snapshots: &[Vec<Matrix>], probes: &[Vec<Matrix>]) -> Result<Vec<LayerInterference>> {
    let Some(final_weights) = snapshots.last() else {
        return Err(GpmError::Lookup("no weight snapshots".into()));
    };
    if probes.len() < snapshots.len() - 1 {
        return Err(GpmError::Lookup(format!("probes for {} tasks, need {}", probes.len(), snapshots.len() - 1)));
    }
    let mut out = Vec::new();
    for (tau, (snap, task_probes)) in snapshots[..snapshots.len() - 1].iter().zip(probes).enumerate() {
        if snap.len() != layers.len() || task_probes.len() != layers.len() || final_weights.len() != layers.len() {
            return Err(GpmError::Lookup(format!("task {} snapshot does not cover {} layers", tau + 1, layers.len())));
        }
        for (l, layer) in layers.iter().enumerate() {
            let delta = final_weights[l].sub(&snap[l]);
            let x = &task_probes[l];
            let response = match layer.kind {
                LayerKind::Fc => delta.matmul(x),
                LayerKind::Conv => delta.t_matmul(x),
            };
            out.push(LayerInterference {
                layer: layer.name.clone(),
                task: tau + 1,
                histogram: Histogram::symmetric(response.as_slice()),
            });
        }
    }
    Ok(out)
}

/// `eps,layer,task,mean,std,bin,lower,upper,count`, one row per bin.
pub fn interference_csv(runs: &[(String, Vec<LayerInterference>)]) -> String {
    let mut s = String::from("eps,layer,task,mean,std,bin,lower,upper,count\n");
    for (eps, stats) in runs {
        for st in stats {
            let h = &st.histogram;
            for (b, c) in h.counts.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{eps},{},{},{:e},{:e},{b},{:e},{:e},{c}",
                    st.layer,
                    st.task,
                    h.mean,
                    h.std,
                    h.edges[b],
                    h.edges[b + 1]
                );
            }
        }
    }
    s
}
