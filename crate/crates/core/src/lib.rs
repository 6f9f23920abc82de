//! Continual learning with gradient projection memory.
//!
//! After each task the engine extracts, per layer, an orthonormal basis of the
//! input subspace that mattered for that task (SVD of layer activations with
//! an energy threshold) and restricts every later SGD update to the
//! orthogonal complement of the accumulated bases.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gpm;
pub mod linalg;
pub mod nn;
pub mod seed;
pub mod trainer;

pub use data::{BaseDataset, Part, TaskDataset, TaskSequence};
pub use error::{GpmError, Result};
pub use eval::{compute_metrics, Metrics, ResultsMatrix};
pub use gpm::{EpsilonSchedule, GpmBank};
pub use linalg::{Matrix, SvdResult};
pub use nn::{HeadMode, Network, Shape};
pub use trainer::{run_sequence, TaskRunRecord, TrainConfig};
