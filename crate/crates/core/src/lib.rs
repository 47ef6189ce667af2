pub mod adversary;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod packing;
pub mod protocol;

pub use error::{Error, Result};
