//! Event-stream super-resolution with a sigma-delta neural network.
//!
//! The crate turns low-resolution event streams into high-resolution ones with a
//! three-layer convolutional network whose neurons only communicate when their
//! activation changes. The same topology can be run as a dense ANN, as a LIF
//! spiking network, or as a sigma-delta network, and [`profiler`] accounts for
//! the events and synaptic operations each mode spends.
//!
//! Module map:
//!
//! - [`events`]: event data model, text / N-MNIST I/O, downsampling, rasterization, PSTH
//! - [`neurons`]: LIF encoder, delta / sigma units, surrogate derivative
//! - [`layers`]: convolutions, mean-only batch norm, dropout, upsampling (with adjoints)
//! - [`network`]: the three-layer topology and its ANN / SNN / SDNN execution
//! - [`objective`]: temporal and PSTH losses, RMSE, PSNR
//! - [`profiler`]: events / synops / MACs accounting
//! - [`trainer`]: BPTT with Adam and a step learning-rate schedule

pub mod error;
pub mod events;
pub mod layers;
pub mod network;
pub mod neurons;
pub mod objective;
pub mod profiler;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
