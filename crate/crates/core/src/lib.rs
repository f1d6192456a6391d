pub mod batch;
pub mod cli;
pub mod diffcore;
pub mod domain;
pub mod encoders;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod nn;
pub mod pretrain;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
