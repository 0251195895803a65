//! Forecasts the energy demand and connection duration of individual EV
//! charging sessions at plug-in time.

pub mod error;
pub mod features;
pub mod matrix;
pub mod metrics;
mod par;
pub mod pipeline;
pub mod regressors;
pub mod seeding;
pub mod sessions;
pub mod stacking;
pub mod synthgen;
pub mod timefmt;
pub mod tuning;

pub use error::{Error, Result};
