//! Attention-based multiple instance learning with graph-Laplacian
//! smoothness penalties on the attention values.
//!
//! A bag is an ordered sequence of instances (for example the slices of a
//! scan) with a single observed label. The model embeds every instance,
//! pools the embeddings with softmax attention and classifies the pooled
//! vector. Training minimizes `(1 − α)·CE + α·SA`, where `SA` penalizes rough
//! attention values along a neighborhood graph of the bag; `α = 0` is plain
//! attention MIL.
//!
//! Modules:
//! - [`diffcore`]: tape-based reverse-mode differentiation
//! - [`baggraph`]: neighborhood graphs and smoothness energies
//! - [`milmodel`]: embedding, attention and classifier
//! - [`losses`]: cross-entropy, smoothness losses, their mix
//! - [`dataio`]: bags, synthetic data, JSON Lines files, splits
//! - [`training`]: Adam, early stopping, metrics, α sweeps

pub mod baggraph;
pub mod dataio;
pub mod diffcore;
mod error;
pub mod losses;
pub mod milmodel;
pub mod training;

pub use baggraph::BagGraph;
pub use dataio::{Bag, Placement, Splits, SynthConfig};
pub use diffcore::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use losses::{LossConfig, Reduction, SaMode};
pub use milmodel::{BagForward, Checkpoint, ModelConfig, ModelParams, Pooling};
pub use training::{Evaluation, RunReport, SweepConfig, TrainConfig};
