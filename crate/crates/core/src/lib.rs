pub mod boosting;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod learners;
pub mod manifest;
pub mod neural;
pub mod pipeline;
pub mod synth;
pub mod textprep;

pub use error::{Error, Result};
