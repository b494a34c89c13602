//! Distorted expected maximum deficit risk measures for compound Poisson
//! lines with exponential claims, and reserve allocation across lines.

pub mod allocate;
pub mod cli;
pub mod deficit;
pub mod distortion;
pub mod error;
pub mod measures;
pub mod model;
pub mod numerics;
pub mod simulate;

pub use deficit::{DeficitFunctional, Horizon};
pub use distortion::Distortion;
pub use error::{Error, Result};
pub use model::{ExponentialLine, RuinConstants};
pub use numerics::Tolerance;
