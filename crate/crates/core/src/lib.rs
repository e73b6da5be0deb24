//! Simulation and verification of repeat-until-success quantum-state
//! transmission between two cavity-QED nodes over a noisy photonic channel.
//!
//! The crate has three layers:
//!
//! * complex linear algebra over labeled composite Hilbert spaces
//!   ([`hilbert`], [`state`], [`operator`], [`measure`]);
//! * a Monte-Carlo wave-function trajectory engine and the cascaded-cavity
//!   physical model driving it ([`mcwf`], [`cqed`], [`pulse`]);
//! * the abstract noisy channel, its explicit-environment form, and the
//!   five-step error-correcting transmission protocol ([`channel`],
//!   [`protocol`]).
//!
//! All numerics are generic over the real scalar type through
//! [`scalar::Scalar`]; the aliases below fix the two floating-point widths.
//! Simulations use `f64`.

pub mod channel;
pub mod cqed;
pub mod error;
pub mod hilbert;
pub mod mcwf;
pub mod measure;
pub mod operator;
mod optim;
pub mod protocol;
pub mod pulse;
pub mod rng;
pub mod scalar;
pub mod state;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double-precision aliases (what the CLI and experiments use).
pub type StateVector64 = state::StateVector<f64>;
pub type LinearOperator64 = operator::LinearOperator<f64>;
pub type ChannelParams64 = channel::ChannelParams<f64>;
pub type PhysicalParams64 = cqed::PhysicalParams<f64>;
pub type PulseSchedule64 = pulse::PulseSchedule<f64>;
pub type QubitInput64 = protocol::QubitInput<f64>;
pub type ProtocolOutcome64 = protocol::ProtocolOutcome<f64>;
pub type IntegratorConfig64 = mcwf::IntegratorConfig<f64>;

/// Single-precision aliases; exercised by smoke tests only.
pub type StateVector32 = state::StateVector<f32>;
pub type LinearOperator32 = operator::LinearOperator<f32>;
pub type ChannelParams32 = channel::ChannelParams<f32>;
