//! A laboratory for sequential social dilemmas: two gridworld games, social
//! outcome metrics, a library of hand-written coordination policies, and the
//! two-level search that tunes the pipeline producing those policies.

#![forbid(unsafe_code)]

pub mod env;
pub mod eval;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod policy;
pub mod rng;

pub mod external;
pub mod inner;
pub mod outer;
pub mod trajectory;

pub use error::{Error, Result};
