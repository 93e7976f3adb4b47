pub mod archive;
pub mod config;
pub mod discriminator;
pub mod env;
pub mod error;
pub mod evolution;
pub mod nn;
pub mod replay;
pub mod runner;
pub mod seed;
pub mod td3;

pub use error::{Error, Result};
