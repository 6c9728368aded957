//! Unsupervised neural precoding for integrated sensing and communication.
//!
//! A dual-function base station serves `K` single-antenna users while
//! illuminating `T` point targets. The crate simulates the world ([`scene`]),
//! the pilot/echo acquisition ([`sounding`]), the figures of merit
//! ([`metrics`]), a column-shared MLP precoder ([`net`]) trained without labels
//! through a KKT-penalty loss ([`training`], differentiated by [`grad`]), and
//! the classical estimate-then-optimize pipeline it is compared with
//! ([`baselines`]).

pub mod baselines;
pub mod error;
pub mod grad;
pub mod metrics;
pub mod net;
pub mod numerics;
pub mod persist;
pub mod scene;
pub mod sounding;
pub mod training;

pub use error::{Error, Result};
