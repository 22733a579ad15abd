//! Invariant mixture-of-operator-experts (iMOOE) forecasting of
//! multi-environment PDE dynamics.
//!
//! The crate covers the whole pipeline: simulating the five benchmark
//! systems under in- and out-of-distribution parameter draws
//! ([`datasets`]), spectral utilities ([`spectral`]), the masked operator
//! expert model ([`model`]) trained with the prediction, risk-variance,
//! frequency and mask-diversity objectives ([`objectives`], [`training`]),
//! and zero-shot evaluation ([`evaluation`]). [`recipe`] strings these
//! together into declarative experiments.

pub mod autograd;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod objectives;
pub mod recipe;
pub mod training;
pub mod scalar;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;
