//! Section-level quarterly construction price-index forecasting.

pub mod attention;
pub mod data;
pub mod diagnostics;
pub mod eval;
pub mod features;
pub mod lstm;
pub mod nn;
pub mod optim;
pub mod sarimax;
pub mod synth;
pub mod vecm;
