//! Long-horizon time series forecasting with extended LSTM cells.
//!
//! The pipeline normalizes each channel, splits it into trend and seasonal
//! parts, projects the pair into a short sequence of hidden vectors, batch
//! normalizes them, runs either a scalar-memory ([`slstm`]) or a
//! matrix-memory ([`mlstm`]) recurrent cell, and projects the last hidden
//! state onto the forecast horizon. All gradients are hand-derived.

pub mod cli;
pub mod data;
pub mod error;
pub mod mlstm;
pub mod model;
pub mod numeric;
pub mod series;
pub mod slstm;
pub mod training;

pub use error::{Error, Result};
pub use model::{Backend, ModelConfig, ModelParams};
pub use series::SeriesBatch;
