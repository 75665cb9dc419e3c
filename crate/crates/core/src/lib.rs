//! Self-talk detection with an early-exit acoustic, linguistic and fusion cascade.

pub mod adaptation;
pub mod audio;
pub mod backend;
pub mod cache;
pub mod cascade;
pub mod cli;
pub mod context;
pub mod cost;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod harness;
pub mod heads;
pub mod label;
pub mod manifest;
pub mod nn;
pub mod prompt;
pub mod segmenter;
pub mod synth;

pub use error::{Error, Result};
pub use label::{Class, NUM_CLASSES};
