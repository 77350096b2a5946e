//! GMM-UBM accent classification.

pub mod adapt;
mod binio;
pub mod classify;
pub mod error;
pub mod frontend;
pub mod gmm;
pub mod numeric;
pub mod pipeline;
pub mod signal;
pub mod transforms;
pub mod vowels;

pub use error::{Error, Result};
pub use frontend::FeatureMatrix;
