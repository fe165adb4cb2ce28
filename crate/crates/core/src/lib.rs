pub mod dense;
pub mod error;
pub mod sparse;
pub mod weighted;

pub use error::{Error, Result};
pub mod ipod;
pub mod pde;
pub mod assimilation;
pub mod convergence;
