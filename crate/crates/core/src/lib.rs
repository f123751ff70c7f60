pub mod autodiff;
pub mod config;
pub mod data;
pub mod episode;
pub mod error;
pub mod eval;
pub mod losses;
pub mod meta;
pub mod networks;
pub mod rng;
pub mod synthesis;

pub use error::{Error, Result};
