//! Caplet pricing under Heath-Jarrow-Morton forward-curve dynamics.
//!
//! A feed-forward network is trained to satisfy the discretized Feynman-Kac
//! pricing PDE on historical forward curves, with a Euler-Maruyama Monte Carlo
//! engine as the accuracy and timing benchmark.

pub mod bench;
pub mod error;
pub mod hjm;
pub mod market_data;
pub mod mc;
pub mod neural;
pub mod pricing;
pub mod synth;
pub mod trainer;
pub mod vol_model;

pub use error::{FinnError, Result};
