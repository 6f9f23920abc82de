//! Experiment execution and run-directory outputs.
//!
//! A run directory holds:
//!
//! ```text
//! resolved_config.json   the configuration after defaults and overrides
//! results.csv            accuracy matrix, rewritten after every task
//! records.jsonl          one TaskRunRecord per finished task
//! gpm_stats.csv          bases added per task and layer, plus totals
//! metrics.json           ACC, BWT, basis counts and memory fill
//! interference.csv       interference histograms (unless disabled)
//! checkpoints/task_XX/   task-boundary checkpoints
//! ```
//!
//! A threshold sweep writes one such directory per entry under `out`, plus a
//! combined `interference.csv` and `sweep.csv` at the top.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gpm_core::checkpoint;
use gpm_core::data::{load_mnist_dir, make_permuted_tasks, make_split_tasks, make_synthetic_class_images, make_synthetic_subspace_tasks};
use gpm_core::eval::{interference_analysis, interference_csv, LayerInterference};
use gpm_core::nn::ConstrainedLayer;
use gpm_core::seed::{self, Stream};
use gpm_core::trainer::{resume_sequence, ConstraintChecks, SequenceState};
use gpm_core::{compute_metrics, BaseDataset, GpmBank, GpmError, Metrics, Network, ResultsMatrix, Shape, TaskRunRecord, TaskSequence};
use log::info;
use serde::Serialize;

use crate::config::{DatasetPreset, ExperimentConfig, NetPreset, Normalize};
use crate::error::CliError;

/// Image side of the generated split dataset.
pub const SYNTHETIC_IMAGE_SIZE: usize = 28;
/// Classes per task of the generated split dataset.
pub const SPLIT_CLASSES_PER_TASK: usize = 2;
/// Input dimension and per-task subspace dimension of the subspace test.
pub const SUBSPACE_INPUT_DIM: usize = 32;
pub const SUBSPACE_DIM: usize = 8;

/// Outcome of one (non-sweep) run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub dir: PathBuf,
    pub metrics: Metrics,
    pub results: ResultsMatrix,
    pub records: Vec<TaskRunRecord>,
    pub layers: Vec<ConstrainedLayer>,
    pub bank_ranks: Vec<usize>,
    pub stored_parameters: usize,
    pub max_parameters: usize,
    pub interference: Option<Vec<LayerInterference>>,
}

impl RunSummary {
    pub fn fill_fraction(&self) -> f64 {
        if self.max_parameters == 0 {
            0.0
        } else {
            self.stored_parameters as f64 / self.max_parameters as f64
        }
    }

    /// Aggregated projection checks over all tasks.
    pub fn constraint(&self) -> ConstraintChecks {
        self.records.iter().fold(ConstraintChecks::default(), |acc, r| ConstraintChecks {
            checks: acc.checks + r.constraint.checks,
            violations: acc.violations + r.constraint.violations,
            max_orthogonality: acc.max_orthogonality.max(r.constraint.max_orthogonality),
            max_idempotency: acc.max_idempotency.max(r.constraint.max_idempotency),
        })
    }

    /// Interference standard deviation for one layer and past task.
    pub fn interference_std(&self, layer: &str, task: usize) -> Option<f64> {
        self.interference
            .as_ref()?
            .iter()
            .find(|s| s.layer == layer && s.task == task)
            .map(|s| s.histogram.std)
    }
}

/// MNIST directory: `data.dir`, else `$GPM_DATA_DIR`, else `data/mnist`.
pub fn mnist_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.data_dir.clone().unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Loads MNIST when the preset needs it.
pub fn load_base(cfg: &ExperimentConfig) -> Result<Option<BaseDataset>, CliError> {
    if !cfg.dataset.uses_mnist() {
        return Ok(None);
    }
    let dir = mnist_dir(cfg);
    info!("loading MNIST from {}", dir.display());
    load_mnist_dir(&dir).map(Some).map_err(CliError::Data)
}

fn normalized(base: &BaseDataset, normalize: Normalize) -> Result<BaseDataset, GpmError> {
    match normalize {
        Normalize::Unit => Ok(base.clone()),
        Normalize::Standardize => base.standardized(),
    }
}

/// Task stream of the preset; `mnist` must be given for MNIST presets.
pub fn build_tasks(cfg: &ExperimentConfig, mnist: Option<&BaseDataset>) -> Result<TaskSequence, CliError> {
    let config_err = |e: GpmError| CliError::Config(e.to_string());
    let mut tasks = match cfg.dataset {
        DatasetPreset::Pmnist | DatasetPreset::PmnistSmall => {
            let base = mnist.ok_or_else(|| CliError::Data(GpmError::Lookup("MNIST was not loaded".into())))?;
            let base = normalized(base, cfg.normalize).map_err(CliError::Data)?;
            make_permuted_tasks(&base, cfg.tasks, cfg.seed, cfg.train_limit).map_err(config_err)?
        }
        DatasetPreset::SplitSynthetic => {
            let base = make_synthetic_class_images(SYNTHETIC_IMAGE_SIZE, cfg.samples, cfg.samples.div_ceil(2), cfg.seed).map_err(config_err)?;
            let base = normalized(&base, cfg.normalize).map_err(config_err)?;
            let all = make_split_tasks(&base, SPLIT_CLASSES_PER_TASK, cfg.seed).map_err(config_err)?;
            if cfg.tasks > all.len() {
                return Err(CliError::Config(format!("split-synthetic has {} tasks, {} requested", all.len(), cfg.tasks)));
            }
            all.truncated(cfg.tasks)
        }
        DatasetPreset::SubspaceTest => {
            make_synthetic_subspace_tasks(SUBSPACE_INPUT_DIM, SUBSPACE_DIM, cfg.tasks, cfg.samples, cfg.seed).map_err(config_err)?
        }
    };
    tasks.head_mode = cfg.head;
    Ok(tasks)
}

/// Freshly initialized network for `tasks`.
pub fn build_network(cfg: &ExperimentConfig, tasks: &TaskSequence) -> Result<Network, CliError> {
    let input = tasks.shape;
    let mut builder = Network::builder(input);
    match cfg.net_preset() {
        NetPreset::Mlp(widths) => {
            for w in widths {
                builder = builder.fc(w).relu();
            }
        }
        NetPreset::SmallConv => {
            if input.height < 8 || input.width < 8 {
                return Err(CliError::Config(format!("small-conv needs images of at least 8x8, dataset has {input:?}")));
            }
            for channels in [16, 32, 64] {
                builder = builder.conv(channels, 3, 1, 1).relu().max_pool(2, 2);
            }
            builder = builder.flatten().fc(100).relu();
        }
    }
    let mut rng = seed::rng(cfg.seed, Stream::Init, 0);
    builder
        .build(cfg.head, tasks.classes, tasks.len(), &mut rng)
        .map_err(|e| CliError::Config(e.to_string()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// `task,<layer>...` rows of bases added, then a `total` row.
pub fn gpm_stats_csv(layers: &[ConstrainedLayer], records: &[TaskRunRecord]) -> String {
    let mut s = String::from("task");
    for l in layers {
        let _ = write!(s, ",{}", l.name);
    }
    s.push('\n');
    let mut totals = vec![0usize; layers.len()];
    for r in records {
        let _ = write!(s, "{}", r.task);
        for (t, k) in totals.iter_mut().zip(&r.k_added) {
            *t += k;
            let _ = write!(s, ",{k}");
        }
        s.push('\n');
    }
    s.push_str("total");
    for t in totals {
        let _ = write!(s, ",{t}");
    }
    s.push('\n');
    s
}

fn records_jsonl(records: &[TaskRunRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    acc: f64,
    bwt: f64,
    tasks: usize,
    seed: u64,
    eps_base: &'a [f64],
    eps_inc: f64,
    layers: Vec<&'a str>,
    k_per_task: Vec<&'a [usize]>,
    bank_sizes: &'a [usize],
    stored_parameters: usize,
    gpm_max_parameters: usize,
    fill_fraction: f64,
    projection_checks: ConstraintChecks,
}

fn sweep_label(eps: &[f64]) -> String {
    let parts: Vec<String> = eps.iter().map(|v| v.to_string()).collect();
    format!("eps_{}", parts.join("-"))
}

/// Copies the checkpoint directories of tasks `1..=completed` into `dest_root`.
fn adopt_checkpoints(src_dir: &Path, completed: usize, dest_root: &Path) -> Result<(), CliError> {
    let Some(src_root) = src_dir.parent() else {
        return Ok(());
    };
    let same = match (src_root.canonicalize(), dest_root.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Ok(());
    }
    for t in 1..=completed {
        let name = checkpoint::task_dir_name(t);
        let (from, to) = (src_root.join(&name), dest_root.join(&name));
        create_dir(&to)?;
        let entries = fs::read_dir(&from).map_err(|e| CliError::Data(GpmError::Io { path: from.clone(), source: e }))?;
        for entry in entries {
            let entry = entry.map_err(|e| CliError::Data(GpmError::Io { path: from.clone(), source: e }))?;
            let target = to.join(entry.file_name());
            fs::copy(entry.path(), &target).map_err(|source| CliError::Output { path: target, source })?;
        }
    }
    Ok(())
}

fn run_single(cfg: &ExperimentConfig, tasks: &TaskSequence, sweep_index: usize, dir: &Path) -> Result<RunSummary, CliError> {
    let train_cfg = cfg.train_config(sweep_index)?;
    let eps = &cfg.eps_base[sweep_index];
    let label = sweep_label(eps);
    create_dir(dir)?;
    let mut echoed = cfg.clone();
    echoed.eps_base = vec![eps.clone()];
    echoed.out = dir.to_path_buf();
    write(&dir.join("resolved_config.json"), echoed.to_json())?;
    let ckpt_root = dir.join("checkpoints");
    create_dir(&ckpt_root)?;

    let mut net = build_network(cfg, tasks)?;
    let layers = net.constrained_layers();
    let fingerprint = cfg.fingerprint(sweep_index);
    let (mut bank, state) = match &cfg.resume {
        Some(path) => {
            let restored = checkpoint::load(path, &mut net).map_err(CliError::Data)?;
            if restored.extra != fingerprint {
                return Err(CliError::Config(format!(
                    "checkpoint {} was written by a different configuration",
                    path.display()
                )));
            }
            adopt_checkpoints(path, restored.state.completed(), &ckpt_root)?;
            info!("resuming after task {}", restored.state.completed());
            (restored.bank, restored.state)
        }
        None => (GpmBank::for_network(&net), SequenceState::new(tasks.len())),
    };

    let state = resume_sequence(&mut net, &mut bank, tasks, &train_cfg, state, |net, bank, state| {
        checkpoint::save(&ckpt_root, net, bank, state, cfg.seed, &fingerprint)?;
        let io = |e: CliError| GpmError::Validation(e.to_string());
        write(&dir.join("results.csv"), state.results.to_csv()).map_err(io)?;
        write(&dir.join("records.jsonl"), records_jsonl(&state.records)).map_err(io)?;
        write(&dir.join("gpm_stats.csv"), gpm_stats_csv(&layers, &state.records)).map_err(io)?;
        let row = state.results.rows().last().expect("row just pushed");
        info!("[{label}] after task {}: accuracies {:?}", state.completed(), row);
        Ok(())
    })
    .map_err(CliError::from_training)?;

    let metrics = compute_metrics(&state.results).map_err(CliError::Run)?;
    let interference = if cfg.interference {
        let stats = interference_analysis(&layers, &state.snapshots, &state.probes).map_err(CliError::Run)?;
        write(&dir.join("interference.csv"), interference_csv(&[(eps_text(eps), stats.clone())]))?;
        Some(stats)
    } else {
        None
    };
    let summary = RunSummary {
        label,
        dir: dir.to_path_buf(),
        metrics,
        results: state.results,
        records: state.records,
        layers,
        bank_ranks: bank.ranks(),
        stored_parameters: bank.stored_parameters(),
        max_parameters: bank.max_parameters(),
        interference,
    };
    let file = MetricsFile {
        acc: metrics.acc,
        bwt: metrics.bwt,
        tasks: tasks.len(),
        seed: cfg.seed,
        eps_base: eps,
        eps_inc: cfg.eps_inc,
        layers: summary.layers.iter().map(|l| l.name.as_str()).collect(),
        k_per_task: summary.records.iter().map(|r| r.k_added.as_slice()).collect(),
        bank_sizes: &summary.bank_ranks,
        stored_parameters: summary.stored_parameters,
        gpm_max_parameters: summary.max_parameters,
        fill_fraction: summary.fill_fraction(),
        projection_checks: summary.constraint(),
    };
    write(&dir.join("metrics.json"), serde_json::to_string_pretty(&file).expect("metrics serialize") + "\n")?;
    Ok(summary)
}

fn eps_text(eps: &[f64]) -> String {
    let parts: Vec<String> = eps.iter().map(|v| v.to_string()).collect();
    parts.join("/")
}

/// Runs every entry of the configuration's threshold list on `tasks`.
pub fn run_experiment(cfg: &ExperimentConfig, tasks: &TaskSequence) -> Result<Vec<RunSummary>, CliError> {
    create_dir(&cfg.out)?;
    write(&cfg.out.join("resolved_config.json"), cfg.to_json())?;
    if !cfg.is_sweep() {
        return Ok(vec![run_single(cfg, tasks, 0, &cfg.out)?]);
    }
    let mut runs = Vec::with_capacity(cfg.eps_base.len());
    for (i, eps) in cfg.eps_base.iter().enumerate() {
        let dir = cfg.out.join(sweep_label(eps));
        runs.push(run_single(cfg, tasks, i, &dir)?);
    }
    let mut sweep = String::from("eps,acc,bwt\n");
    for (run, eps) in runs.iter().zip(&cfg.eps_base) {
        let _ = writeln!(sweep, "{},{:.4},{:.4}", eps_text(eps), run.metrics.acc, run.metrics.bwt);
    }
    write(&cfg.out.join("sweep.csv"), sweep)?;
    if cfg.interference {
        let combined: Vec<(String, Vec<LayerInterference>)> = runs
            .iter()
            .zip(&cfg.eps_base)
            .filter_map(|(r, eps)| r.interference.clone().map(|s| (eps_text(eps), s)))
            .collect();
        write(&cfg.out.join("interference.csv"), interference_csv(&combined))?;
    }
    Ok(runs)
}

/// Loads data, then runs the experiment.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>, CliError> {
    let base = load_base(cfg)?;
    let tasks = build_tasks(cfg, base.as_ref())?;
    run_experiment(cfg, &tasks)
}

/// `ACC .. BWT ..` line printed at the end of a run.
pub fn summary_line(run: &RunSummary) -> String {
    format!(
        "{}: ACC {:.2} BWT {:.2} | bases {:?} | memory fill {:.1}%",
        run.label,
        run.metrics.acc,
        run.metrics.bwt,
        run.bank_ranks,
        100.0 * run.fill_fraction()
    )
}

/// Input shape helper for presets, mostly for diagnostics.
pub fn describe(tasks: &TaskSequence) -> String {
    let Shape { channels, height, width } = tasks.shape;
    format!("{} tasks of {channels}x{height}x{width} inputs, {} classes per head", tasks.len(), tasks.classes)
}
