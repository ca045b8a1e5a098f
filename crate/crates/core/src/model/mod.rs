//! Encoder-decoder translation model with an auxiliary CTC head.

pub mod layers;

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod network;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{CtcHeadKind, LabelSource, ModelDims, TrainConfig};
pub use decode::{beam_search, decode, greedy_decode, sequence_score, DecodeMode};
pub use network::{
    ctc_head, decoder_states, encode, interpolated_loss, mle_loss, BatchItem, BatchLoss, DecoderStates, EncodedSpeech,
    StepTimers,
};
pub use optim::{clip_global_norm, Adam};
pub use params::{DecoderLayer, EncoderLayer, ModelParams};
pub use train::{evaluate, train, EvalReport, StepMetrics, TrainOutcome, Trainer};
