//! Neural mutual-information estimation and cooperative capacity learning.
//!
//! The crate provides
//!
//! - [`nn`]: a small MLP engine (dense layers, dropout, batchnorm, Adam),
//! - [`channels`]: sources, the AWGN channel, shuffle-based marginal samples
//!   and closed-form references,
//! - [`estimators`]: value functions and estimate formulas for MMIE,
//!   alpha-MMIE, MINE, NWJ, SMILE, iDIME and dDIME,
//! - [`ksg`]: the Kraskov k-nearest-neighbour baseline,
//! - [`benchmark`]: the repeated-training accuracy/stability harness,
//! - [`capacity`]: generator/discriminator capacity learning with a
//!   Monte-Carlo check of learned codebooks,
//! - [`cli`]: the command-line front end.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the two concrete instantiations. All information quantities are
//! in nats.

pub mod benchmark;
pub mod capacity;
pub mod channels;
pub mod cli;
mod error;
pub mod estimators;
pub mod ksg;
pub mod nn;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mlp32 = nn::Mlp<f32>;
pub type Mlp64 = nn::Mlp<f64>;
pub type SampleBatch32 = channels::SampleBatch<f32>;
pub type SampleBatch64 = channels::SampleBatch<f64>;
pub type DiscriminatorOutputs32 = estimators::DiscriminatorOutputs<f32>;
pub type DiscriminatorOutputs64 = estimators::DiscriminatorOutputs<f64>;
