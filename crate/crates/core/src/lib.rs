//! Process tensors of open quantum systems, their non-Markovianity, random
//! diagonal circuit designs, and large-deviation bounds on memory effects.

pub mod bounds;
pub mod designs;
pub mod error;
pub mod measures;
pub mod montecarlo;
pub mod numerics;
pub mod process;

pub use error::{Error, Result};
pub use numerics::{ComplexMatrix, RngStream};
