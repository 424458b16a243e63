pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod harness;
pub mod integrable;
pub mod io;
pub mod linalg;
pub mod perturbation;
pub mod profiles;
pub mod realization;
pub mod rng;
pub mod section;
pub mod slice;

pub use error::{Error, Result};
