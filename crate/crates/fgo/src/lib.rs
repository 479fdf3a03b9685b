pub use fgo_core as core;

pub mod cli;
pub mod codec;
pub mod llm;
pub mod merge;
pub mod journal;
pub mod optimize;
pub mod orchestrate;
pub mod pool;
pub mod render;
pub mod runtime;
