//! Phase-field fracture simulations of a fiber/matrix RVE, accelerated by a
//! locally linear embedding surrogate with an a-priori distance-to-manifold
//! error indicator.

pub mod error;
pub mod io;
pub mod lle;
pub mod mesh;
pub mod phase;
pub mod pipeline;
pub mod sparse;

pub use error::{Error, Result, StorageError};
