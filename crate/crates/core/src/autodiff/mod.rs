//! Reverse-mode differentiation over dense `f64` matrices.

mod gemm;
mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{bce_value, sigmoid, BatchStats, Graph, Var, BCE_CLAMP};
pub use optim::{AdamW, AdamWConfig};
pub use params::{gaussian, Param, ParamId, ParamStore};
pub use tensor::Tensor;
