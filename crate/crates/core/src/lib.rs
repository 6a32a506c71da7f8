//! Hierarchical sentence/word attention-LSTM decoder for visual storytelling.

pub mod attention;
pub mod cli;
pub mod dataio;
pub mod decoder;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod numerics;
pub mod recurrent;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
