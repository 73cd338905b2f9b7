//! Stateless, backpropagation-free test-time adaptation for normalization
//! layers.
//!
//! The crate is `no_std` (it needs `alloc`). It contains the float inference
//! engine ([`tensor`], [`graph`]), the per-sample adaptation math
//! ([`adapt`]), the int8 path with conv/BN partial fusion ([`quant`]),
//! corruption and stream generators ([`shift`]) and the experiment harness
//! ([`bench`]). File formats, reports and the CLI live in the `leantta`
//! crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adapt;
pub mod bench;
mod error;
pub mod graph;
pub mod ops;
pub mod quant;
mod rng;
pub mod shift;
pub mod tensor;

pub use adapt::{AdaptConfig, ChannelStats, DistanceMode};
pub use error::{Error, Result};
pub use graph::{ForwardMode, ModelGraph, NormParams};
pub use ops::OpCounts;
pub use rng::derive_seed;
pub use tensor::Tensor;
