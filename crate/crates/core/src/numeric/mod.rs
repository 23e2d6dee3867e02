//! Dense vectors, counter-based sample keys and compensated accumulators.

mod compensated;
mod key;
mod vector;

pub use compensated::{comp_add, CompensatedSum};
pub use key::{derive_key, SampleKey};
pub use vector::ParamVector;
