pub mod cli;
pub mod error;
pub mod features;
pub mod fusion;
pub mod gradsuite;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod skelgraph;
pub mod stgcn;
pub mod synthetic;
pub mod text;
pub mod transformer;

pub use error::{Error, Result};
