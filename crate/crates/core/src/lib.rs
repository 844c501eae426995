//! Piecewise closed-loop digital predistortion workbench for nonlinear
//! active antenna arrays.
//!
//! The crate covers the whole chain: OFDM excitation ([`waveform`]), a
//! behavioral array transmitter ([`array_sim`]), basis construction and
//! whitening ([`basis`]), amplitude partitioning ([`partition`]), closed-loop
//! learning with pruning ([`dpd`]), indirect-learning baselines ([`ila`]),
//! figures of merit ([`metrics`]), the analytical FLOP model
//! ([`complexity`]) and end-to-end experiment pipelines ([`pipeline`]).
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod array_sim;
pub mod basis;
pub mod complexity;
pub mod dpd;
pub mod error;
pub mod ila;
pub mod linalg;
pub mod metrics;
pub mod partition;
pub mod pipeline;
pub mod scalar;
pub mod signal;
pub mod waveform;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Signal = signal::IqSignal<f64>;
pub type Plant = array_sim::ArrayPlant<f64>;
pub type Pa = array_sim::PaModel<f64>;
pub type Spec = basis::BasisSpec<f64>;
pub type Partition = partition::RegionPartition<f64>;
pub type Model = dpd::DpdModel<f64>;
