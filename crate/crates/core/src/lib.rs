pub mod annotator;
pub mod bench;
pub mod cli;
pub mod archive;
pub mod attacks;
pub mod corpus;
pub mod defense;
pub mod error;
pub mod features;
pub mod io;
pub mod models;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
