//! Coarse-label CTC regularization for sequence-to-sequence training.

pub mod analysis;
pub mod bench;
pub mod cli;
pub mod colamap;
pub mod ctc;
pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod vocab;

pub use colamap::{CoarseMapper, MappingKind};
pub use ctc::{LogProbLattice, LOG_ZERO};
pub use data::{TaskSpec, Triplet};
pub use error::{Error, Result};
pub use model::{LabelSource, ModelParams, TrainConfig};
pub use rng::Rng;
pub use tensor::{Matrix, Scalar};
pub use vocab::{ShufflePermutation, Vocabulary};
