//! Multi-cell massive MIMO downlink simulation.
//!
//! The crate models a TDD cellular network on a 19-cell hexagonal
//! wrap-around layout, estimates uplink channels with pilot-projected
//! MMSE estimation, builds four downlink precoders (multi-cell MMSE,
//! single-cell MMSE, multi-cell ZF and matched filtering) and evaluates
//! the downlink SINR two ways: by Monte Carlo over small-scale fading and
//! by a deterministic-equivalent large-system approximation of the
//! multi-cell MMSE precoder.
//!
//! Module map:
//!
//! - [`geometry`]: network layout, user drops, pathloss and shadowing.
//! - [`pilots`]: pilot reuse colorings and pilot allocation.
//! - [`power`]: channel-inversion power control and downlink calibration.
//! - [`channel`]: fading draws and MMSE channel estimation.
//! - [`precoding`]: precoder directions and power normalization.
//! - [`mc_eval`]: Monte Carlo SINR and spectral efficiency.
//! - [`rmt`]: fixed-point deterministic equivalents and the large-scale SINR.
//! - [`cli`]: experiment configuration, sweeps, result files, validation.

pub mod channel;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mc_eval;
pub mod pilots;
pub mod power;
pub mod precoding;
pub mod rmt;
pub mod scenario;

pub use error::{Error, Result};
pub use scenario::{Scenario, SystemParams};

pub use num_complex::Complex64 as C64;
