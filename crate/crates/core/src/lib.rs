pub mod affinity;
pub mod autodiff;
pub mod commands;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grouping;
pub mod matrix;
pub mod model;
pub mod reference;
pub mod rng;
pub mod stats;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
