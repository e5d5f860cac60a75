//! Direct estimation of sparse changes between two pairwise Markov networks.

pub mod bench;
pub mod cpmatch;
pub mod error;
pub mod eval;
pub mod harness;
pub mod imagediff;
pub mod kliep;
pub mod model;
pub mod seed;
pub mod solver;
pub mod sum;
pub mod synth;

pub use error::{Error, Result};
