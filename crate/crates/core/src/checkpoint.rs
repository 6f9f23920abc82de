//! Task-boundary checkpoints.
//!
//! After task `t` a directory `task_{t:02}` is written next to the earlier
//! ones:
//!
//! ```text
//! weights.gpm   every network weight, in Network::weights order (GPM1)
//! bank.gpm      one basis per constrained layer (GPM1)
//! probes.gpm    representation matrices of task t (GPM1)
//! state.json    completed task count, master seed, results rows, run records
//! ```
//!
//! All randomness is derived from the master seed and the task and epoch
//! indices, so the seed and the completed count are the whole generator state.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GpmError, Result};
use crate::eval::ResultsMatrix;
use crate::gpm::{container, GpmBank};
use crate::nn::Network;
use crate::trainer::{SequenceState, TaskRunRecord};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StateFile {
    version: u32,
    completed: usize,
    tasks: usize,
    seed: u64,
    results: Vec<Vec<f64>>,
    records: Vec<TaskRunRecord>,
    /// Caller data, such as the resolved configuration.
    extra: serde_json::Value,
}

/// Directory name of the checkpoint taken after one-based task `task`.
pub fn task_dir_name(task: usize) -> String {
    format!("task_{task:02}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GpmError + '_ {
    move |e| GpmError::io(path, e)
}

/// Writes the checkpoint for the last finished task under `root` and returns its directory.
pub fn save(root: &Path, net: &Network, bank: &GpmBank, state: &SequenceState, seed: u64, extra: &serde_json::Value) -> Result<PathBuf> {
    let completed = state.completed();
    if completed == 0 {
        return Err(GpmError::Validation("nothing to checkpoint before the first task".into()));
    }
    let dir = root.join(task_dir_name(completed));
    let tmp = root.join(format!(".{}.tmp", task_dir_name(completed)));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
    let weights: Vec<_> = net.weights().cloned().collect();
    container::save(&tmp.join("weights.gpm"), &weights)?;
    container::save(&tmp.join("bank.gpm"), &bank.bases())?;
    container::save(&tmp.join("probes.gpm"), &state.probes[completed - 1])?;
    let file = StateFile {
        version: FORMAT_VERSION,
        completed,
        tasks: state.results.tasks(),
        seed,
        results: state.results.rows().to_vec(),
        records: state.records.clone(),
        extra: extra.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| GpmError::Validation(format!("state serialization: {e}")))?;
    fs::write(tmp.join("state.json"), json).map_err(io_err(&tmp))?;
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    fs::rename(&tmp, &dir).map_err(io_err(&dir))?;
    Ok(dir)
}

/// A checkpoint restored into a network.
#[derive(Debug)]
pub struct Restored {
    pub bank: GpmBank,
    pub state: SequenceState,
    pub seed: u64,
    pub extra: serde_json::Value,
}

fn read_state(dir: &Path) -> Result<StateFile> {
    let path = dir.join("state.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let file: StateFile = serde_json::from_str(&text).map_err(|e| GpmError::Parse {
        source_name: path.display().to_string(),
        offset: 0,
        reason: e.to_string(),
    })?;
    if file.version != FORMAT_VERSION {
        return Err(GpmError::Validation(format!("checkpoint format {} is not supported", file.version)));
    }
    Ok(file)
}

/// Peeks at the completed count and seed without loading matrices.
pub fn inspect(dir: &Path) -> Result<(usize, u64, serde_json::Value)> {
    let f = read_state(dir)?;
    Ok((f.completed, f.seed, f.extra))
}

/// Loads the checkpoint in `dir` into `net` (which must have the same
/// architecture), reading earlier task directories next to it for the
/// weight snapshots and probes.
pub fn load(dir: &Path, net: &mut Network) -> Result<Restored> {
    let file = read_state(dir)?;
    let root = dir
        .parent()
        .ok_or_else(|| GpmError::Lookup(format!("{} has no parent directory", dir.display())))?;
    let mut snapshots = Vec::with_capacity(file.completed);
    let mut probes = Vec::with_capacity(file.completed);
    let mut scratch = net.clone();
    for t in 1..=file.completed {
        let td = root.join(task_dir_name(t));
        if !td.is_dir() {
            return Err(GpmError::Lookup(format!("missing checkpoint {}", td.display())));
        }
        scratch.load_weights(container::load(&td.join("weights.gpm"))?)?;
        snapshots.push(scratch.constrained_weights());
        probes.push(container::load(&td.join("probes.gpm"))?);
    }
    net.load_weights(container::load(&dir.join("weights.gpm"))?)?;
    let bank = GpmBank::from_bases(net.constrained_layers(), container::load(&dir.join("bank.gpm"))?)?;
    let state = SequenceState {
        results: ResultsMatrix::from_rows(file.tasks, file.results)?,
        records: file.records,
        snapshots,
        probes,
    };
    if state.results.completed() != file.completed || state.records.len() != file.completed {
        return Err(GpmError::Validation(format!("checkpoint {} is internally inconsistent", dir.display())));
    }
    Ok(Restored {
        bank,
        state,
        seed: file.seed,
        extra: file.extra,
    })
}
