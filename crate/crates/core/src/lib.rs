pub mod error;
pub mod eval;
pub mod guidance;
pub mod inference;
pub mod model;
pub mod numcore;
pub mod oracle;
pub mod schedule;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};
