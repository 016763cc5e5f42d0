//! Graph convolutional networks whose adjacency basis is learned end to end
//! under orthogonality and column-stochasticity constraints.

pub mod connectivity;
pub mod error;
pub mod gcn;
pub mod numkit;
pub mod skeleton;
pub mod trainer;

pub use error::{Error, Result};
