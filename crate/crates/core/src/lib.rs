pub mod adversarial;
pub mod corpus;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod ocr;
pub mod phash;
pub mod pipeline;
pub mod pngio;

pub use error::{Error, Result};
