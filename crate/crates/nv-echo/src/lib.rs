//! Hahn-echo decoherence of NV-center ensembles under Ornstein-Uhlenbeck
//! correlated classical Gaussian noise.
//!
//! The crate has four layers:
//!
//! * [`models`] — closed-form decay curves, decoherence rates, and the
//!   asymptotic limits, in a fixed unit system (time in µs, rates in µs⁻¹,
//!   noise amplitude λ in rad·µs⁻¹, densities in cm⁻³).
//! * [`noisesim`] — a seeded, parallel Monte-Carlo simulator of spin-echo
//!   dephasing under OU noise, used as an independent check of the closed
//!   form.
//! * [`fitting`] — envelope extraction, damped least-squares fitting of both
//!   decay models, and linear regression of fitted parameters against spin
//!   concentration.
//! * [`ingest`] — text formats for decay traces, sample tables, and fit
//!   result records.
//!
//! The `nv-echo` binary ties these together as batch subcommands
//! (`curve`, `simulate`, `fit`, `regress`).

pub mod cli;
pub mod error;
pub mod fitting;
pub mod ingest;
pub mod models;
pub mod noisesim;

pub use error::{Error, Result};
