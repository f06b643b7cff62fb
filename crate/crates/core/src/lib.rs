//! Quasi-constant-modulus 4D modulation formats and a dual-polarization
//! WDM fiber link simulator for evaluating their nonlinearity tolerance.

pub mod constellation;
pub mod channel;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod nli_analysis;
pub mod txrx;

pub use error::{Error, Result};
