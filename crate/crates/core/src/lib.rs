//! Core library: instance schema, prompt rendering, output parsing, dataset
//! storage, annotator agreement and the evaluation harness.

pub mod agreement;
pub mod dataset;
pub mod eval;
pub mod generate;
pub mod parse;
pub mod prompt;
pub mod schema;
