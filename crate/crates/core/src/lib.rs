//! Handwriting-based Alzheimer's screening with a hybrid similarity and
//! difference attention transformer.

pub mod checkpoint;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod ingest;
pub mod kv;
pub mod loss;
pub mod model;
pub mod pipeline;
pub mod train;

pub use error::{HsdaError, Result};
