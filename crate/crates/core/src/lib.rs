//! Interaction graph transformer for skeleton-based two-person interaction
//! recognition.
//!
//! Each person's skeleton sequence is turned into a body-part-time token
//! sequence ([`spm`]), a distance-based sparse graph is built from raw
//! coordinates ([`dsig`]), and a stack of interaction blocks ([`model`])
//! mixes the two persons through graph-guided attention ([`gimsa`]).
//! Everything is differentiated by the small tape in [`tensor`].

pub mod cli;
pub mod config;
pub mod dsig;
mod error;
pub mod gimsa;
pub mod model;
pub mod optim;
pub mod skeleton;
pub mod spm;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
