//! Calibration and validation of GPIO-bracketed inference timing against
//! logic-analyzer edge captures.

pub mod gate;
pub mod ingest;
pub mod pipeline;
pub mod pulse;
pub mod residual;
pub mod sensitivity;
pub mod store;
pub mod synth;
pub mod cli;
