//! Synthetic sewer time-series generation with a recurrent WGAN-GP and a
//! windowed rainfall-to-flow forecaster that consumes the synthetic windows.

pub mod tensor;
pub mod gradcheck;
pub mod nn;
pub mod data;
pub mod metrics;
pub mod gan;
pub mod forecast;
