//! Feed-forward networks with hand-written backpropagation.
//!
//! Activations travel as `batch x features` matrices, one sample per row,
//! with image tensors flattened channel-major (`c, y, x`).

mod conv;
mod network;

pub use conv::{im2col, ConvGeometry};
pub use network::{
    ActivationCache, ConstrainedLayer, ConvLayer, FcLayer, GradientSet, Layer, LayerKind, MaxPool, Network,
    NetworkBuilder, Target,
};

use serde::{Deserialize, Serialize};

/// Per-sample tensor shape `channels x height x width`; flat vectors use `c x 1 x 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub const fn flat(len: usize) -> Self {
        Shape::new(len, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Classifier layout across tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// One head shared by all tasks; it is constrained like any body layer.
    Single,
    /// One head per task, trained freely and never stored in memory.
    Multi,
}
