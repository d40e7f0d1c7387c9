pub mod concentration;
pub mod covering;
pub mod error;
pub mod exact_ot;
pub mod harness;
pub mod hierarchical;
pub mod measures;
pub mod par;
pub mod samplers;

pub use error::{Error, Result};
