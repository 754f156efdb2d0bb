pub mod cli;
pub mod error;
pub mod guard;
pub mod harness;
pub mod io;
pub mod lra;
pub mod matprod;
pub mod numerics;
pub mod par;
pub mod regress;
pub mod rng;
pub mod sketch;

pub use error::{Error, Result};
