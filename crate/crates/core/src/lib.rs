//! FDC and MRRC attention captioning models, TPR algebra, decoding,
//! training and evaluation on a synthetic scene/caption task.

mod error;
mod fsutil;
mod registrar;

pub mod attention;
pub mod data;
pub mod decoder;
pub mod models;
pub mod tpr;
pub mod training;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use registrar::Registrar;
