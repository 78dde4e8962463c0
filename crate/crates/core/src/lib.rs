//! Tri-level reinforcement-learning optimization of a one-to-many semantic
//! broadcast link.
//!
//! One transmitter encodes each image into `B` bits with a stochastic neural
//! encoder; `N` receivers decode the bits, after their own noisy channel, for
//! different tasks. Training alternates three levels per update cycle:
//! supervised decoder steps, PPO-style encoder steps, and a constrained
//! descent-direction step on the joint (task weights, encoder) variable.

pub mod agent;
pub mod channel;
pub mod data;
pub mod error;
pub mod net;
pub mod oracle;
pub mod par;
pub mod receiver;
pub mod synthetic;
pub mod train;
pub mod trilevel;

pub use error::{Error, Result};
