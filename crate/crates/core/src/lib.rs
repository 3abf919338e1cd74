//! Whole-body tool-use learning for a low-rigidity humanoid.
//!
//! The crate is `no_std` (with `alloc`) and contains every numerical piece of
//! the pipeline:
//!
//! - [`sim`]: a static, deflection-aware model of a 4-DOF plastic humanoid
//!   holding a tool, producing joint, center-of-gravity, tool-tip and screen
//!   observations.
//! - [`net`]: a small dense network engine with hand-written backpropagation,
//!   Adam and momentum SGD.
//! - [`wtnpb`]: the masked autoencoder with parametric bias built on `net`.
//! - [`trainer`]: dataset collection and joint training of weights and biases.
//! - [`online`]: streaming estimation of the grasped tool's parametric bias.
//! - [`controller`]: latent-space tool-tip control and a rigid IK baseline.
//! - [`analysis`]: PCA and the small statistics used by the experiments.
//!
//! File formats, scenarios and the command line live in the `flexbody` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod controller;
pub mod error;
pub mod net;
pub mod online;
pub mod sim;
pub mod trainer;
pub mod wtnpb;

pub use error::{Error, Result};
