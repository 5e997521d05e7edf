pub mod coding;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod lexicon;
pub mod matrix;
pub mod pipeline;
pub mod review;
pub mod service;
pub mod stats;
pub mod store;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
