//! Blind synchronization and interference rejection for single-channel
//! mixtures of a pulse-shaped single-carrier signal and a CP-OFDM interferer.

pub mod bench;
pub mod bounds;
pub mod covariance;
pub mod demod;
pub mod error;
pub mod estimators;
pub mod mixture;
pub mod signals;

pub use error::{Error, Result};
pub use signals::C64;
