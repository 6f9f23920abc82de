//! Experiment configuration.
//!
//! A config file is a flat list of `key = value` lines grouped under
//! `[section]` headers, with `#` starting a comment line:
//!
//! ```text
//! [experiment]
//! dataset = pmnist-small
//! seed = 7
//!
//! [gpm]
//! eps_base = 0.95,0.99,0.99
//! ```
//!
//! Resolution order is preset defaults, then the file, then command-line
//! flags. Unknown keys are errors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gpm_core::{EpsilonSchedule, HeadMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Every accepted key, as `section.key`.
pub const KNOWN_KEYS: &[&str] = &[
    "experiment.dataset",
    "experiment.net",
    "experiment.seed",
    "experiment.tasks",
    "experiment.out",
    "experiment.resume",
    "experiment.interference",
    "trainer.lr",
    "trainer.epochs",
    "trainer.batch",
    "trainer.ns",
    "trainer.head",
    "trainer.check_every",
    "trainer.early_stopping",
    "trainer.lr_decay",
    "gpm.eps_base",
    "gpm.eps_inc",
    "data.dir",
    "data.train_limit",
    "data.samples",
    "data.normalize",
];

/// Environment variable naming the MNIST directory.
pub const DATA_DIR_ENV: &str = "GPM_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetPreset {
    /// Ten permuted-MNIST tasks.
    Pmnist,
    /// Three permuted-MNIST tasks with 10,000 training images each.
    PmnistSmall,
    /// Generated ten-class images split into five two-class tasks.
    SplitSynthetic,
    /// Two-class tasks on disjoint coordinate subspaces.
    SubspaceTest,
}

impl DatasetPreset {
    pub const ALL: [DatasetPreset; 4] = [
        DatasetPreset::Pmnist,
        DatasetPreset::PmnistSmall,
        DatasetPreset::SplitSynthetic,
        DatasetPreset::SubspaceTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetPreset::Pmnist => "pmnist",
            DatasetPreset::PmnistSmall => "pmnist-small",
            DatasetPreset::SplitSynthetic => "split-synthetic",
            DatasetPreset::SubspaceTest => "subspace-test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn uses_mnist(self) -> bool {
        matches!(self, DatasetPreset::Pmnist | DatasetPreset::PmnistSmall)
    }

    fn defaults(self) -> Preset {
        let pmnist = Preset {
            net: "mlp-100-100",
            tasks: 10,
            lr: 0.01,
            epochs: 5,
            batch: 10,
            ns: 300,
            head: HeadMode::Single,
            eps_base: vec![0.95, 0.99, 0.99],
            eps_inc: 0.0,
            train_limit: None,
            samples: 0,
            normalize: Normalize::Standardize,
        };
        match self {
            DatasetPreset::Pmnist => pmnist,
            DatasetPreset::PmnistSmall => Preset {
                tasks: 3,
                train_limit: Some(10_000),
                ..pmnist
            },
            DatasetPreset::SplitSynthetic => Preset {
                net: "small-conv",
                tasks: 5,
                ns: 125,
                head: HeadMode::Multi,
                eps_base: vec![0.97],
                eps_inc: 0.003,
                samples: 100,
                normalize: Normalize::Unit,
                ..pmnist
            },
            DatasetPreset::SubspaceTest => Preset {
                net: "mlp-64",
                tasks: 2,
                ns: 100,
                head: HeadMode::Multi,
                eps_base: vec![0.999],
                samples: 200,
                normalize: Normalize::Unit,
                ..pmnist
            },
        }
    }
}

impl fmt::Display for DatasetPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

struct Preset {
    net: &'static str,
    tasks: usize,
    lr: f64,
    epochs: usize,
    batch: usize,
    ns: usize,
    head: HeadMode,
    eps_base: Vec<f64>,
    eps_inc: f64,
    train_limit: Option<usize>,
    samples: usize,
    normalize: Normalize,
}

/// Input scaling applied to image datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    /// Pixels in `[0, 1]`.
    Unit,
    /// `(x - mean) / std` with the training-set mean and standard deviation.
    Standardize,
}

impl Normalize {
    pub fn name(self) -> &'static str {
        match self {
            Normalize::Unit => "unit",
            Normalize::Standardize => "standardize",
        }
    }
}

/// Network architecture presets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetPreset {
    /// Fully connected ReLU layers of the given widths (`mlp-100-100`).
    Mlp(Vec<usize>),
    /// Three 3x3 conv blocks (16, 32, 64 channels, each ReLU + 2x2 max-pool),
    /// then a 100-unit ReLU layer.
    SmallConv,
}

impl NetPreset {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "small-conv" {
            return Some(NetPreset::SmallConv);
        }
        let widths = s.strip_prefix("mlp-")?;
        let widths: Option<Vec<usize>> = widths.split('-').map(|w| w.parse().ok().filter(|&w| w > 0)).collect();
        widths.map(NetPreset::Mlp)
    }

    pub fn name(&self) -> String {
        match self {
            NetPreset::SmallConv => "small-conv".into(),
            NetPreset::Mlp(w) => {
                let parts: Vec<String> = w.iter().map(usize::to_string).collect();
                format!("mlp-{}", parts.join("-"))
            }
        }
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetPreset,
    pub net: String,
    pub seed: u64,
    pub tasks: usize,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
    pub interference: bool,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub ns: usize,
    pub head: HeadMode,
    pub check_every: usize,
    pub early_stopping: Option<usize>,
    pub lr_decay: f64,
    /// One threshold base list per run; more than one entry is a sweep.
    pub eps_base: Vec<Vec<f64>>,
    pub eps_inc: f64,
    pub data_dir: Option<PathBuf>,
    pub train_limit: Option<usize>,
    pub samples: usize,
    pub normalize: Normalize,
}

impl ExperimentConfig {
    pub fn net_preset(&self) -> NetPreset {
        NetPreset::parse(&self.net).expect("validated at resolution")
    }

    pub fn is_sweep(&self) -> bool {
        self.eps_base.len() > 1
    }

    /// Trainer settings for one entry of the threshold sweep.
    pub fn train_config(&self, sweep_index: usize) -> Result<TrainConfig, CliError> {
        let eps = EpsilonSchedule::new(self.eps_base[sweep_index].clone(), self.eps_inc).map_err(|e| CliError::Config(e.to_string()))?;
        let cfg = TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch,
            n_s: self.ns,
            eps,
            head_mode: self.head,
            seed: self.seed,
            check_every: self.check_every,
            early_stopping_patience: self.early_stopping,
            lr_decay: self.lr_decay,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Settings that must match for a checkpoint to be resumable.
    pub fn fingerprint(&self, sweep_index: usize) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("struct");
        for k in ["out", "resume", "interference", "check_every", "data_dir"] {
            obj.remove(k);
        }
        obj.insert("eps_base".into(), serde_json::json!(self.eps_base[sweep_index]));
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Raw `section.key -> value` settings with their origin for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, String)>,
}

impl Settings {
    /// Records `key = value`, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: impl Into<String>, origin: impl Into<String>) -> Result<(), CliError> {
        let origin = origin.into();
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::Config(unknown_key_message(key, &origin)));
        }
        self.values.insert(key.to_string(), (value.into(), origin));
        Ok(())
    }

    fn get(&self, key: &str) -> Option<(&str, &str)> {
        self.values.get(key).map(|(v, o)| (v.as_str(), o.as_str()))
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: Settings) {
        self.values.extend(other.values);
    }
}

fn unknown_key_message(key: &str, origin: &str) -> String {
    let best = KNOWN_KEYS
        .iter()
        .map(|k| {
            let short = k.split('.').nth(1).unwrap_or(k);
            let leaf = key.rsplit('.').next().unwrap_or(key);
            (strsim::damerau_levenshtein(key, k).min(strsim::damerau_levenshtein(leaf, short)), k)
        })
        .min_by_key(|(d, _)| *d);
    match best {
        Some((d, k)) if d <= 2.max(key.len() / 3) => format!("{origin}: unknown key `{key}`; did you mean `{k}`?"),
        _ => format!("{origin}: unknown key `{key}`"),
    }
}

/// Parses config file text; `name` labels diagnostics.
pub fn parse_config_text(text: &str, name: &str) -> Result<Settings, CliError> {
    let mut settings = Settings::default();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = format!("{name}:{}", i + 1);
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| CliError::Config(format!("{at}: unterminated section header `{line}`")))?
                .trim();
            if !KNOWN_KEYS.iter().any(|k| k.starts_with(&format!("{inner}."))) {
                return Err(CliError::Config(format!("{at}: unknown section `[{inner}]`")));
            }
            section = Some(inner.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("{at}: expected `key = value`, got `{line}`")))?;
        let Some(sec) = &section else {
            return Err(CliError::Config(format!("{at}: key `{}` appears before any [section]", key.trim())));
        };
        let full = format!("{sec}.{}", key.trim());
        if settings.get(&full).is_some() {
            return Err(CliError::Config(format!("{at}: duplicate key `{full}`")));
        }
        settings.set(&full, value.trim(), at)?;
    }
    Ok(settings)
}

pub fn read_config_file(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text, &path.display().to_string())
}

fn parse_value<T: std::str::FromStr>(settings: &Settings, key: &str, what: &str) -> Result<Option<T>, CliError> {
    match settings.get(key) {
        None => Ok(None),
        Some((v, origin)) => v
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("{origin}: `{key}` expects {what}, got `{v}`"))),
    }
}

fn positive(settings: &Settings, key: &str) -> Result<Option<usize>, CliError> {
    let v: Option<usize> = parse_value(settings, key, "a positive integer")?;
    if v == Some(0) {
        let origin = settings.get(key).map(|(_, o)| o).unwrap_or("");
        return Err(CliError::Config(format!("{origin}: `{key}` must be positive")));
    }
    Ok(v)
}

fn parse_eps_list(text: &str, key: &str, origin: &str) -> Result<Vec<Vec<f64>>, CliError> {
    text.split(';')
        .map(|entry| {
            let values: Result<Vec<f64>, _> = entry.split(',').map(|v| v.trim().parse::<f64>()).collect();
            match values {
                Ok(v) if !v.is_empty() && v.iter().all(|x| *x > 0.0 && *x <= 1.0) => Ok(v),
                _ => Err(CliError::Config(format!(
                    "{origin}: `{key}` expects comma-separated thresholds in (0, 1], got `{entry}`"
                ))),
            }
        })
        .collect()
}

/// Applies preset defaults to `settings` and type-checks every value.
pub fn resolve(settings: &Settings) -> Result<ExperimentConfig, CliError> {
    let (name, origin) = settings
        .get("experiment.dataset")
        .ok_or_else(|| CliError::Config("missing required `experiment.dataset` (use --dataset)".into()))?;
    let dataset = DatasetPreset::parse(name).ok_or_else(|| {
        let names: Vec<&str> = DatasetPreset::ALL.iter().map(|p| p.name()).collect();
        CliError::Config(format!("{origin}: unknown dataset `{name}` (expected one of {})", names.join(", ")))
    })?;
    let p = dataset.defaults();

    let net = match settings.get("experiment.net") {
        Some((n, origin)) => {
            let preset = NetPreset::parse(n)
                .ok_or_else(|| CliError::Config(format!("{origin}: unknown network `{n}` (expected mlp-H[-H...] or small-conv)")))?;
            preset.name()
        }
        None => p.net.to_string(),
    };
    let seed = parse_value(settings, "experiment.seed", "an unsigned integer")?.unwrap_or(0u64);
    let tasks = positive(settings, "experiment.tasks")?.unwrap_or(p.tasks);
    let interference = match settings.get("experiment.interference") {
        None | Some(("on", _)) => true,
        Some(("off", _)) => false,
        Some((v, origin)) => return Err(CliError::Config(format!("{origin}: `experiment.interference` expects on|off, got `{v}`"))),
    };
    let head = match settings.get("trainer.head") {
        None => p.head,
        Some(("single", _)) => HeadMode::Single,
        Some(("multi", _)) => HeadMode::Multi,
        Some((v, origin)) => return Err(CliError::Config(format!("{origin}: `trainer.head` expects single|multi, got `{v}`"))),
    };
    let lr: f64 = parse_value(settings, "trainer.lr", "a number")?.unwrap_or(p.lr);
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(CliError::Config(format!("`trainer.lr` must be positive, got {lr}")));
    }
    let lr_decay: f64 = parse_value(settings, "trainer.lr_decay", "a number")?.unwrap_or(1.0);
    if !(lr_decay > 0.0 && lr_decay <= 1.0) {
        return Err(CliError::Config(format!("`trainer.lr_decay` must lie in (0, 1], got {lr_decay}")));
    }
    let early_stopping = match parse_value::<usize>(settings, "trainer.early_stopping", "a non-negative integer")? {
        None | Some(0) => None,
        Some(n) => Some(n),
    };
    let eps_base = match settings.get("gpm.eps_base") {
        Some((v, origin)) => parse_eps_list(v, "gpm.eps_base", origin)?,
        None => vec![p.eps_base.clone()],
    };
    let eps_inc: f64 = parse_value(settings, "gpm.eps_inc", "a number")?.unwrap_or(p.eps_inc);
    if !(eps_inc >= 0.0 && eps_inc.is_finite()) {
        return Err(CliError::Config(format!("`gpm.eps_inc` must be >= 0, got {eps_inc}")));
    }
    let data_dir = settings
        .get("data.dir")
        .map(|(v, _)| PathBuf::from(v))
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
    let train_limit = match settings.get("data.train_limit") {
        Some(("none", _)) => None,
        Some(_) => positive(settings, "data.train_limit")?,
        None => p.train_limit,
    };
    let normalize = match settings.get("data.normalize") {
        None => p.normalize,
        Some(("unit", _)) => Normalize::Unit,
        Some(("standardize", _)) => Normalize::Standardize,
        Some((v, origin)) => return Err(CliError::Config(format!("{origin}: `data.normalize` expects unit|standardize, got `{v}`"))),
    };
    if normalize == Normalize::Standardize && dataset == DatasetPreset::SubspaceTest {
        return Err(CliError::Config("subspace-test inputs cannot be standardized (`data.normalize = unit`)".into()));
    }
    let out = settings
        .get("experiment.out")
        .map(|(v, _)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{dataset}-seed{seed}")));
    let resume = settings.get("experiment.resume").map(|(v, _)| PathBuf::from(v));
    if resume.is_some() && eps_base.len() > 1 {
        return Err(CliError::Config("--resume cannot be combined with a threshold sweep".into()));
    }

    Ok(ExperimentConfig {
        dataset,
        net,
        seed,
        tasks,
        out,
        resume,
        interference,
        lr,
        epochs: positive(settings, "trainer.epochs")?.unwrap_or(p.epochs),
        batch: positive(settings, "trainer.batch")?.unwrap_or(p.batch),
        ns: positive(settings, "trainer.ns")?.unwrap_or(p.ns),
        head,
        check_every: parse_value(settings, "trainer.check_every", "a non-negative integer")?.unwrap_or(100),
        early_stopping,
        lr_decay,
        eps_base,
        eps_inc,
        data_dir,
        train_limit,
        samples: positive(settings, "data.samples")?.unwrap_or(p.samples),
        normalize,
    })
}

/// Command-line overrides, already in `section.key` form.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub entries: Vec<(&'static str, String)>,
}

impl Overrides {
    pub fn push(&mut self, key: &'static str, value: impl ToString) {
        self.entries.push((key, value.to_string()));
    }
}

/// File (if any) overlaid with flag overrides, then resolved.
pub fn parse_config(file: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut settings = match file {
        Some(path) => read_config_file(path)?,
        None => Settings::default(),
    };
    let mut flags = Settings::default();
    for (key, value) in &overrides.entries {
        flags.set(key, value.clone(), "command line")?;
    }
    settings.merge(flags);
    resolve(&settings)
}
