pub mod calibrate;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod runner;
pub mod sampler;
pub mod simulate;
pub mod sn;

pub use error::{Error, Result};
