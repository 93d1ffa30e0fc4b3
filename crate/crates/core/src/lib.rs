pub mod cli;
pub mod diffusion;
pub mod error;
pub mod mixing;
pub mod model;
pub mod oracle;
pub mod perm;
pub mod reverse;
pub mod rng;
pub mod shuffles;

pub use error::{Error, Result};
