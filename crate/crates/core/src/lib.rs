pub mod alignment;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod error;
pub mod frontend;
pub mod labels;
pub mod multitask;
pub mod numerics;
pub mod pretrain;
pub mod synthcorpus;

pub use error::{Error, Result};
