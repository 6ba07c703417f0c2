//! Dense tensors, a reverse-mode tape, parameter storage with AdamW, seeded
//! random streams, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, GradReport};
pub use graph::{Gradients, Graph, ParamGrads, Var};
pub use params::{AdamWConfig, Init, ParamId, ParamStore, Precision};
pub use rng::{derive_stream, seeded_rng, stream_for, RngStream};
pub use tensor::Tensor;
