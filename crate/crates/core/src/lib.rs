pub mod autoencoder;
pub mod data;
pub mod error;
pub mod gmm;
pub mod joint;
pub mod metrics;
pub mod numerics;

pub use error::{Error, Result};
