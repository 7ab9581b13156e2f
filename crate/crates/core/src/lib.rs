//! Grid crowd-flow forecasting: trajectory aggregation into inflow/outflow
//! tensors, closeness/period/trend instance assembly, the forecasting model and
//! its training and evaluation harness.

pub mod components;
pub mod error;
pub mod flow_grid;
pub mod gradcheck;
pub mod model;
pub mod training;

pub use error::{Error, Result};
