//! QoS matrix completion with diffusion-refined embeddings and an adversarial
//! attention generator, plus classical baselines and evaluation utilities.
//!
//! Everything runs on a small reverse-mode autodiff engine over dense
//! row-major `f64` matrices.

pub mod aaim;
pub mod autodiff;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod delm;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod train;

pub use aaim::{AaimConfig, Discriminator, ForwardOutputs, Generator, InteractionBatch};
pub use autodiff::{AdamW, AdamWConfig, Graph, ParamId, ParamStore, Tensor, Var};
pub use baselines::{FactorConfig, FactorModel, FactorVariant, NeighborModel, Similarity, Uipcc};
pub use data::{ContextTable, QoSDataset, Section, Split, Triplet};
pub use delm::{DiffusionSchedule, EmbeddingBank};
pub use error::{Error, Result};
pub use eval::{AggregateReport, MetricsReport, QosPredictor, Scale};
pub use model::QoSDiff;
pub use nn::Mode;
pub use train::{fit, EpochLog, LossConfig, TrainState, Trainer};
