//! Datasets and task streams.
//!
//! Pixel data is stored once per source split and shared by every task built
//! from it; permuted tasks apply their pixel permutation only when a batch is
//! gathered.

pub mod idx;
mod synthetic;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::error::{GpmError, Result};
use crate::linalg::Matrix;
use crate::nn::{HeadMode, Shape};
use crate::seed::{self, Stream};

pub use synthetic::{make_synthetic_class_images, make_synthetic_subspace_tasks};

/// Fraction of each training set held out for validation (one in ten).
pub const VALIDATION_DIVISOR: usize = 10;

/// Inputs (one sample per row) with integer labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub inputs: Arc<Matrix>,
    pub labels: Arc<Vec<usize>>,
}

impl LabeledSet {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(GpmError::shape("LabeledSet", format!("{} labels", inputs.rows()), labels.len()));
        }
        Ok(LabeledSet {
            inputs: Arc::new(inputs),
            labels: Arc::new(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A labelled train/test pair before it is cut into tasks.
#[derive(Debug, Clone)]
pub struct BaseDataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub shape: Shape,
    pub classes: usize,
}

impl BaseDataset {
    /// Mean and standard deviation of every training input value pooled together.
    pub fn train_statistics(&self) -> (f64, f64) {
        let values = self.train.inputs.as_slice();
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Copy with every input mapped to `(x - mean) / std` using the training
    /// statistics, applied to both splits.
    pub fn standardized(&self) -> Result<BaseDataset> {
        let (mean, std) = self.train_statistics();
        if !(std > 0.0 && std.is_finite()) {
            return Err(GpmError::Validation(format!("cannot standardize inputs with standard deviation {std}")));
        }
        let map = |set: &LabeledSet| {
            let data = set.inputs.as_slice().iter().map(|v| (v - mean) / std).collect();
            LabeledSet {
                inputs: Arc::new(Matrix::from_raw(set.inputs.rows(), set.inputs.cols(), data)),
                labels: set.labels.clone(),
            }
        };
        Ok(BaseDataset {
            train: map(&self.train),
            test: map(&self.test),
            shape: self.shape,
            classes: self.classes,
        })
    }
}

fn to_matrix(images: &idx::IdxImages) -> Matrix {
    let data = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Matrix::from_raw(images.count, images.rows * images.cols, data)
}

/// Parses one IDX image/label file pair (gzip or raw); pixels become `p / 255`.
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<(LabeledSet, Shape)> {
    let img_name = images.display().to_string();
    let lbl_name = labels.display().to_string();
    let imgs = idx::parse_images(&idx::read_maybe_gzip(images)?, &img_name)?;
    let lbls = idx::parse_labels(&idx::read_maybe_gzip(labels)?, &lbl_name)?;
    if imgs.count != lbls.len() {
        return Err(GpmError::Parse {
            source_name: lbl_name,
            offset: 4,
            reason: format!("{} labels for {} images", lbls.len(), imgs.count),
        });
    }
    if let Some(pos) = lbls.iter().position(|&l| l > 9) {
        return Err(GpmError::Parse {
            source_name: lbl_name,
            offset: 8 + pos as u64,
            reason: format!("label {} outside 0..10", lbls[pos]),
        });
    }
    let shape = Shape::new(1, imgs.rows, imgs.cols);
    let set = LabeledSet::new(to_matrix(&imgs), lbls.into_iter().map(usize::from).collect())?;
    Ok((set, shape))
}

/// Standard MNIST file names, gzip-compressed or not, under `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<BaseDataset> {
    let find = |stem: &str| -> Result<std::path::PathBuf> {
        [format!("{stem}.gz"), stem.to_string()]
            .into_iter()
            .map(|n| dir.join(n))
            .find(|p| p.is_file())
            .ok_or_else(|| GpmError::io(dir.join(stem), std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found (.gz or raw)")))
    };
    let (train, shape) = load_mnist_idx(&find("train-images-idx3-ubyte")?, &find("train-labels-idx1-ubyte")?)?;
    let (test, test_shape) = load_mnist_idx(&find("t10k-images-idx3-ubyte")?, &find("t10k-labels-idx1-ubyte")?)?;
    if shape != test_shape {
        return Err(GpmError::Validation(format!("train images {shape:?} but test images {test_shape:?}")));
    }
    Ok(BaseDataset {
        train,
        test,
        shape,
        classes: 10,
    })
}

/// Rows of one source set, with labels already mapped into the task's label space.
#[derive(Debug, Clone)]
pub struct Split {
    source: Arc<Matrix>,
    rows: Vec<usize>,
    labels: Vec<usize>,
}

impl Split {
    fn new(source: Arc<Matrix>, rows: Vec<usize>, labels: Vec<usize>) -> Self {
        debug_assert_eq!(rows.len(), labels.len());
        Split { source, rows, labels }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Source row indices, for leakage checks.
    pub fn source_rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn source(&self) -> &Arc<Matrix> {
        &self.source
    }
}

/// Which split of a task to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Validation,
    Test,
}

/// One task: three splits over shared sources plus an optional pixel permutation.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    /// One-based task id.
    pub id: usize,
    pub classes: usize,
    pub shape: Shape,
    permutation: Option<Arc<Vec<usize>>>,
    train: Split,
    validation: Split,
    test: Split,
    /// Original class ids behind the task's labels.
    pub class_ids: Vec<usize>,
}

impl TaskDataset {
    pub fn split(&self, part: Part) -> &Split {
        match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        }
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.permutation.as_deref().map(Vec::as_slice)
    }

    /// Inputs and labels for `positions` within `part`, one sample per row.
    pub fn gather(&self, part: Part, positions: &[usize]) -> (Matrix, Vec<usize>) {
        let split = self.split(part);
        let width = self.shape.len();
        let mut data = Vec::with_capacity(positions.len() * width);
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            let row = split.source.row(split.rows[p]);
            match &self.permutation {
                Some(perm) => data.extend(perm.iter().map(|&src| row[src])),
                None => data.extend_from_slice(row),
            }
            labels.push(split.labels[p]);
        }
        (Matrix::from_raw(positions.len(), width, data), labels)
    }

    /// Whole split, materialized.
    pub fn materialize(&self, part: Part) -> (Matrix, Vec<usize>) {
        let all: Vec<usize> = (0..self.split(part).len()).collect();
        self.gather(part, &all)
    }

    /// Asserts that no source row is used by two splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let parts = [(Part::Train, Part::Validation), (Part::Train, Part::Test), (Part::Validation, Part::Test)];
        for (a, b) in parts {
            let (sa, sb) = (self.split(a), self.split(b));
            if !Arc::ptr_eq(&sa.source, &sb.source) {
                continue;
            }
            let rows: BTreeSet<usize> = sa.rows.iter().copied().collect();
            if let Some(r) = sb.rows.iter().find(|r| rows.contains(r)) {
                return Err(GpmError::Validation(format!("task {}: source row {r} is in both {a:?} and {b:?}", self.id)));
            }
        }
        Ok(())
    }
}

/// Ordered tasks with the head layout they were built for.
#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub tasks: Vec<TaskDataset>,
    pub head_mode: HeadMode,
    pub shape: Shape,
    /// Classes per head.
    pub classes: usize,
}

impl TaskSequence {
    /// Validates ids, label ranges and split disjointness.
    pub fn new(tasks: Vec<TaskDataset>, head_mode: HeadMode) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| GpmError::Validation("task sequence is empty".into()))?;
        let (shape, classes) = (first.shape, first.classes);
        for (i, t) in tasks.iter().enumerate() {
            if t.id != i + 1 {
                return Err(GpmError::Validation(format!("task ids must run 1..T, found {} at position {i}", t.id)));
            }
            t.check_disjoint()?;
            if t.labels_out_of_range() {
                return Err(GpmError::Validation(format!("task {} has labels outside 0..{}", t.id, t.classes)));
            }
        }
        Ok(TaskSequence {
            tasks,
            head_mode,
            shape,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// The first `n` tasks.
    pub fn truncated(mut self, n: usize) -> Self {
        self.tasks.truncate(n.max(1));
        self
    }
}

impl TaskDataset {
    fn labels_out_of_range(&self) -> bool {
        [Part::Train, Part::Validation, Part::Test]
            .iter()
            .any(|&p| self.split(p).labels.iter().any(|&l| l >= self.classes))
    }
}

/// Pixel permutation of task `task` (one-based); the first task keeps pixel order.
pub fn task_permutation(len: usize, task: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    if task > 1 {
        perm.shuffle(&mut seed::rng(seed, Stream::Permutation, task as u64));
    }
    perm
}

/// Shuffles `rows` and cuts the last tenth off as validation.
fn shuffle_and_hold_out(mut rows: Vec<usize>, seed: u64, task: usize) -> (Vec<usize>, Vec<usize>) {
    rows.shuffle(&mut seed::rng(seed, Stream::Split, task as u64));
    let val = rows.len() / VALIDATION_DIVISOR;
    let train = rows.len() - val;
    let validation = rows.split_off(train);
    (rows, validation)
}

/// `tasks` permuted-pixel tasks over all ten classes with a shared head.
///
/// Each task shuffles the training set, keeps the last tenth (6,000 of 60,000)
/// for validation and, when `train_limit` is set, the first `train_limit` of
/// the remainder for training.
pub fn make_permuted_tasks(base: &BaseDataset, tasks: usize, seed: u64, train_limit: Option<usize>) -> Result<TaskSequence> {
    if tasks == 0 {
        return Err(GpmError::Validation("need at least one task".into()));
    }
    let width = base.shape.len();
    let mut out = Vec::with_capacity(tasks);
    for id in 1..=tasks {
        let (mut train, validation) = shuffle_and_hold_out((0..base.train.len()).collect(), seed, id);
        if let Some(limit) = train_limit {
            train.truncate(limit);
        }
        let label_of = |set: &LabeledSet, rows: &[usize]| rows.iter().map(|&r| set.labels[r]).collect::<Vec<_>>();
        let test_rows: Vec<usize> = (0..base.test.len()).collect();
        out.push(TaskDataset {
            id,
            classes: base.classes,
            shape: base.shape,
            permutation: (id > 1).then(|| Arc::new(task_permutation(width, id, seed))),
            train: Split::new(base.train.inputs.clone(), train.clone(), label_of(&base.train, &train)),
            validation: Split::new(base.train.inputs.clone(), validation.clone(), label_of(&base.train, &validation)),
            test: Split::new(base.test.inputs.clone(), test_rows.clone(), label_of(&base.test, &test_rows)),
            class_ids: (0..base.classes).collect(),
        });
    }
    TaskSequence::new(out, HeadMode::Single)
}

/// Disjoint class groups of size `classes_per_task`, one multi-head task each,
/// labels remapped to `0..classes_per_task` in ascending class order.
pub fn make_split_tasks(base: &BaseDataset, classes_per_task: usize, seed: u64) -> Result<TaskSequence> {
    if classes_per_task == 0 || !base.classes.is_multiple_of(classes_per_task) {
        return Err(GpmError::Validation(format!(
            "{} classes cannot be split into groups of {classes_per_task}",
            base.classes
        )));
    }
    let mut order: Vec<usize> = (0..base.classes).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Split, 0));
    let mut out = Vec::new();
    for (i, group) in order.chunks(classes_per_task).enumerate() {
        let id = i + 1;
        let mut class_ids = group.to_vec();
        class_ids.sort_unstable();
        let remap = |c: usize| class_ids.iter().position(|&k| k == c);
        let select = |set: &LabeledSet| -> (Vec<usize>, Vec<usize>) {
            set.labels.iter().enumerate().filter_map(|(r, &c)| remap(c).map(|l| (r, l))).unzip()
        };
        let (rows, _) = select(&base.train);
        let (train, validation) = shuffle_and_hold_out(rows, seed, id);
        let lab = |rows: &[usize]| rows.iter().map(|&r| remap(base.train.labels[r]).expect("selected")).collect::<Vec<_>>();
        let (test_rows, test_labels) = select(&base.test);
        out.push(TaskDataset {
            id,
            classes: classes_per_task,
            shape: base.shape,
            permutation: None,
            train: Split::new(base.train.inputs.clone(), train.clone(), lab(&train)),
            validation: Split::new(base.train.inputs.clone(), validation.clone(), lab(&validation)),
            test: Split::new(base.test.inputs.clone(), test_rows, test_labels),
            class_ids,
        });
    }
    TaskSequence::new(out, HeadMode::Multi)
}

/// Builds a task directly from materialized splits.
pub(crate) fn task_from_sets(id: usize, classes: usize, shape: Shape, train: LabeledSet, validation: LabeledSet, test: LabeledSet) -> TaskDataset {
    let whole = |s: LabeledSet| {
        let rows = (0..s.len()).collect();
        Split::new(s.inputs, rows, s.labels.as_ref().clone())
    };
    TaskDataset {
        id,
        classes,
        shape,
        permutation: None,
        train: whole(train),
        validation: whole(validation),
        test: whole(test),
        class_ids: (0..classes).collect(),
    }
}

pub(crate) fn sequence(tasks: Vec<TaskDataset>, head_mode: HeadMode) -> Result<TaskSequence> {
    TaskSequence::new(tasks, head_mode)
}
